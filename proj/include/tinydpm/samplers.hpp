#pragma once

// Reverse-process samplers: stochastic ancestral (DDPM), classifier-guided
// ancestral, and deterministic DDIM over a timestep subsequence. All three
// derive every draw from the config seed and clip outputs to [-1, 1].

#include <cmath>
#include <string>
#include <vector>

#include "tinydpm/denoiser.hpp"
#include "tinydpm/diffusion.hpp"
#include "tinydpm/guidance.hpp"
#include "tinydpm/schedule.hpp"

namespace tinydpm {

struct SamplerConfig {
    std::string kind = "ancestral";  // ancestral | guided | ddim
    double scale = 1.0;              // guidance scale s (guided only)
    int ddim_steps = 25;             // ddim only
    int target_class = 0;            // guided only
    uint64_t seed = 0;
};

template <class T>
struct Samples {
    TensorT<T> x;
    int model_evals = 0;
};

namespace detail {

template <class T>
void check_chain_finite(const TensorT<T>& x, int t) {
    if (!x.all_finite())
        throw NumericError("sampler: non-finite state at step t=" + std::to_string(t));
}

template <class T>
void clip_unit(TensorT<T>& x) {
    for (auto& v : x.data()) v = std::clamp(v, T(-1), T(1));
}

}  // namespace detail

// One reverse sweep x_T -> x_0. x_{t-1} = mu + sqrt(posterior_var)*z, where
// mu is the posterior mean evaluated at the clipped x0 estimate; z = 0 at
// t = 1. `shift` (optional) adds s * var * grad log p(y|x_t) to the mean
// before noising — the classifier-guided variant. Draw order: the n*d
// normals of x_T, then n*d normals per step T..2.
template <class Model, class T = typename Model::Scalar>
Samples<T> reverse_chain(const Model& m, const NoiseSchedule& s, int n, Rng rng,
                         const GuidanceClassifier<T>* guide, double scale, int target_class) {
    if (n < 1) throw UsageError("sampler: need n >= 1");
    TensorT<T> x = randn<T>(rng, m.sample_shape(n));
    int evals = 0;
    for (int t = s.T(); t >= 1; --t) {
        TensorT<T> eps;
        {
            NoGradGuard ng;
            eps = m.predict(x, t);
        }
        ++evals;
        auto mx = mean_from_epsilon(x, eps, t, s);
        TensorT<T> mean = posterior_params(mx.x0_hat, x, t, s).mean;
        double var = s.posterior_var(t);
        if (guide && scale != 0.0) {
            std::vector<int> ts(static_cast<size_t>(n), t);
            std::vector<int> ys(static_cast<size_t>(n), target_class);
            TensorT<T> g = grad_log_prob(*guide, x, ts, ys);
            // elementwise guard keeps the zero-gradient case bit-identical
            // to the unguided chain
            for (size_t i = 0; i < mean.data().size(); ++i)
                if (g.data()[i] != T(0))
                    mean.data()[i] += static_cast<T>(scale * var * g.data()[i]);
        }
        if (t > 1) {
            TensorT<T> z = randn<T>(rng, x.shape());
            double sd = std::sqrt(var);
            for (size_t i = 0; i < mean.data().size(); ++i)
                mean.data()[i] += static_cast<T>(sd * z.data()[i]);
        }
        x = std::move(mean);
        detail::check_chain_finite(x, t);
    }
    detail::clip_unit(x);
    return {std::move(x), evals};
}

template <class Model, class T = typename Model::Scalar>
Samples<T> ancestral_sample(const Model& m, const NoiseSchedule& s, const SamplerConfig& cfg,
                            int n) {
    return reverse_chain(m, s, n, Rng(cfg.seed), static_cast<const GuidanceClassifier<T>*>(nullptr),
                         0.0, 0);
}

template <class Model, class T = typename Model::Scalar>
Samples<T> guided_sample(const Model& m, const GuidanceClassifier<T>& c, const NoiseSchedule& s,
                         const SamplerConfig& cfg, int n) {
    if (cfg.scale < 0) throw UsageError("guided_sample: scale must be >= 0");
    if (cfg.target_class < 0 || cfg.target_class >= c.cfg.num_classes)
        throw DataError("guided_sample: class out of range");
    return reverse_chain(m, s, n, Rng(cfg.seed), cfg.scale == 0.0 ? nullptr : &c, cfg.scale,
                         cfg.target_class);
}

// Evenly spaced ascending timestep subsequence; K = 1 degenerates to {T}
// (one jump from the terminal step).
inline std::vector<int> ddim_subsequence(int T, int K) {
    if (K < 1 || K > T) throw UsageError("ddim_subsequence: need 1 <= K <= T");
    if (K == 1) return {T};
    std::vector<int> ts;
    for (int i = 0; i < K; ++i) {
        int t = static_cast<int>(std::lround(1.0 + (T - 1.0) * i / (K - 1.0)));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

// Deterministic (eta = 0) update: x_{t_prev} = sqrt(abar_prev) x0_hat +
// sqrt(1 - abar_prev) eps_hat, with abar_prev = 1 past the smallest step.
template <class Model, class T = typename Model::Scalar>
Samples<T> ddim_sample(const Model& m, const NoiseSchedule& s, const SamplerConfig& cfg, int n) {
    if (n < 1) throw UsageError("sampler: need n >= 1");
    std::vector<int> ts = ddim_subsequence(s.T(), cfg.ddim_steps);
    Rng rng(cfg.seed);
    TensorT<T> x = randn<T>(rng, m.sample_shape(n));
    int evals = 0;
    for (int i = static_cast<int>(ts.size()) - 1; i >= 0; --i) {
        int t = ts[static_cast<size_t>(i)];
        TensorT<T> eps;
        {
            NoGradGuard ng;
            eps = m.predict(x, t);
        }
        ++evals;
        auto mx = mean_from_epsilon(x, eps, t, s);
        double ab_prev = i > 0 ? s.alpha_bar(ts[static_cast<size_t>(i - 1)]) : 1.0;
        double ca = std::sqrt(ab_prev), ce = std::sqrt(1.0 - ab_prev);
        TensorT<T> next(x.shape());
        for (size_t j = 0; j < next.data().size(); ++j)
            next.data()[j] =
                static_cast<T>(ca * mx.x0_hat.data()[j] + ce * eps.data()[j]);
        x = std::move(next);
        detail::check_chain_finite(x, t);
    }
    detail::clip_unit(x);
    return {std::move(x), evals};
}

}  // namespace tinydpm
