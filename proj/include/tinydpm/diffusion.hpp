#pragma once

// Forward (noising) process: the one-step Markov kernel, its closed-form
// marginal, and the Gaussian posterior q(x_{t-1} | x_t, x_0). These run
// outside the autodiff graph; training composes them with tracked tensors
// itself where needed.

#include <cmath>

#include "tinydpm/schedule.hpp"
#include "tinydpm/tensor.hpp"

namespace tinydpm {

// x_t = sqrt(1 - beta_t) * x_prev + sqrt(beta_t) * noise
template <class T>
TensorT<T> diffuse_step(const TensorT<T>& x_prev, int t, const TensorT<T>& noise,
                        const NoiseSchedule& s) {
    if (x_prev.shape() != noise.shape())
        throw ShapeError("diffuse_step: x/noise shape mismatch");
    auto e = s.at(t);
    double a = std::sqrt(1.0 - e.beta), b = std::sqrt(e.beta);
    TensorT<T> out(x_prev.shape());
    const auto& xv = x_prev.data();
    const auto& nv = noise.data();
    for (size_t i = 0; i < xv.size(); ++i)
        out.data()[i] = static_cast<T>(a * xv[i] + b * nv[i]);
    return out;
}

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise; t = 0 returns x0.
template <class T>
TensorT<T> diffuse_closed_form(const TensorT<T>& x0, int t, const TensorT<T>& noise,
                               const NoiseSchedule& s) {
    if (x0.shape() != noise.shape())
        throw ShapeError("diffuse_closed_form: x0/noise shape mismatch");
    double ab = s.alpha_bar(t);
    double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    TensorT<T> out(x0.shape());
    const auto& xv = x0.data();
    const auto& nv = noise.data();
    for (size_t i = 0; i < xv.size(); ++i)
        out.data()[i] = static_cast<T>(a * xv[i] + b * nv[i]);
    return out;
}

template <class T>
struct PosteriorParams {
    TensorT<T> mean;
    double variance;
};

// q(x_{t-1} | x_t, x_0) = N(mean, variance * I) with
//   mean = (sqrt(abar_{t-1}) beta_t x0 + sqrt(a_t)(1 - abar_{t-1}) x_t) / (1 - abar_t)
//   variance = beta_t (1 - abar_{t-1}) / (1 - abar_t)
template <class T>
PosteriorParams<T> posterior_params(const TensorT<T>& x0, const TensorT<T>& x_t, int t,
                                    const NoiseSchedule& s) {
    if (x0.shape() != x_t.shape())
        throw ShapeError("posterior_params: x0/x_t shape mismatch");
    auto e = s.at(t);
    double denom = std::max(1.0 - e.alpha_bar, 1e-12);
    double c0 = std::sqrt(e.alpha_bar_prev) * e.beta / denom;
    double ct = std::sqrt(e.alpha) * (1.0 - e.alpha_bar_prev) / denom;
    double var = e.beta * (1.0 - e.alpha_bar_prev) / denom;
    TensorT<T> mean(x0.shape());
    const auto& x0v = x0.data();
    const auto& xtv = x_t.data();
    for (size_t i = 0; i < x0v.size(); ++i)
        mean.data()[i] = static_cast<T>(c0 * x0v[i] + ct * xtv[i]);
    return {std::move(mean), var};
}

}  // namespace tinydpm
