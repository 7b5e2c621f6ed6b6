#pragma once

// Optimizers (Adam, SGD-momentum), EMA shadow parameters, the simplified
// diffusion objective, per-step VLB diagnostics, and the training loops for
// the denoiser and the guidance classifier.

#include <cmath>
#include <string>
#include <vector>

#include "tinydpm/classifier.hpp"
#include "tinydpm/denoiser.hpp"
#include "tinydpm/diffusion.hpp"
#include "tinydpm/nn.hpp"
#include "tinydpm/ops.hpp"

namespace tinydpm {

struct TrainConfig {
    int steps = 2000;
    int batch_size = 32;
    double learning_rate = 1e-4;
    std::string optimizer = "adam";  // or "sgd-momentum"
    double momentum = 0.9;
    uint64_t seed = 0;
    double ema_decay = 0.0;  // 0 disables EMA
};

inline void check_train_config(const TrainConfig& cfg) {
    if (cfg.steps < 0) throw UsageError("TrainConfig: steps must be >= 0");
    if (cfg.batch_size < 1) throw UsageError("TrainConfig: batch_size must be >= 1");
    if (cfg.learning_rate < 0) throw UsageError("TrainConfig: learning_rate must be >= 0");
    if (cfg.optimizer != "adam" && cfg.optimizer != "sgd-momentum")
        throw UsageError("TrainConfig: unknown optimizer '" + cfg.optimizer + "'");
    if (cfg.ema_decay < 0 || cfg.ema_decay >= 1)
        throw UsageError("TrainConfig: ema_decay must be in [0,1)");
}

// Both optimizers consume the accumulated gradients and clear them.
template <class T>
class Optimizer {
public:
    explicit Optimizer(ParamList<T> params) : params_(std::move(params)) {}
    virtual ~Optimizer() = default;
    virtual void step(double lr) = 0;

protected:
    ParamList<T> params_;
};

template <class T>
class Adam : public Optimizer<T> {
public:
    explicit Adam(ParamList<T> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : Optimizer<T>(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
        for (auto& p : this->params_) {
            m_.emplace_back(p.tensor->numel(), 0.0);
            v_.emplace_back(p.tensor->numel(), 0.0);
        }
    }

    void step(double lr) override {
        ++t_;
        double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
        for (size_t k = 0; k < this->params_.size(); ++k) {
            auto& p = *this->params_[k].tensor;
            auto g = p.grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < g.size(); ++i) {
                double gi = g[i];
                m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
                v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
                double mh = m[i] / c1, vh = v[i] / c2;
                p.data()[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps_));
            }
            p.zero_grad();
        }
    }

private:
    double b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

template <class T>
class SgdMomentum : public Optimizer<T> {
public:
    explicit SgdMomentum(ParamList<T> params, double momentum = 0.9)
        : Optimizer<T>(std::move(params)), mu_(momentum) {
        for (auto& p : this->params_) vel_.emplace_back(p.tensor->numel(), 0.0);
    }

    void step(double lr) override {
        for (size_t k = 0; k < this->params_.size(); ++k) {
            auto& p = *this->params_[k].tensor;
            auto g = p.grad();
            auto& v = vel_[k];
            for (size_t i = 0; i < g.size(); ++i) {
                v[i] = mu_ * v[i] + static_cast<double>(g[i]);
                p.data()[i] -= static_cast<T>(lr * v[i]);
            }
            p.zero_grad();
        }
    }

private:
    double mu_;
    std::vector<std::vector<double>> vel_;
};

template <class T>
std::unique_ptr<Optimizer<T>> make_optimizer(const TrainConfig& cfg, ParamList<T> params) {
    if (cfg.optimizer == "adam") return std::make_unique<Adam<T>>(std::move(params));
    return std::make_unique<SgdMomentum<T>>(std::move(params), cfg.momentum);
}

// Exponential moving average of parameters: ema = d*ema + (1-d)*theta.
template <class T>
class Ema {
public:
    Ema(const ParamList<T>& params, double decay) : decay_(decay) {
        for (auto& p : params) shadow_.push_back(p.tensor->data());
    }

    void update(const ParamList<T>& params) {
        for (size_t k = 0; k < shadow_.size(); ++k) {
            const auto& src = params[k].tensor->data();
            auto& dst = shadow_[k];
            for (size_t i = 0; i < dst.size(); ++i)
                dst[i] = static_cast<T>(decay_ * dst[i] + (1.0 - decay_) * src[i]);
        }
    }

    void copy_to(ParamList<T>& params) const {
        for (size_t k = 0; k < shadow_.size(); ++k) params[k].tensor->data() = shadow_[k];
    }

    const std::vector<std::vector<T>>& shadow() const { return shadow_; }

private:
    double decay_;
    std::vector<std::vector<T>> shadow_;
};

namespace detail {

// Row-wise diffuse with per-row t: x_t[i] = sqrt(abar_{t_i}) x0[i] + sqrt(1-abar_{t_i}) z[i].
template <class T>
TensorT<T> diffuse_rows(const TensorT<T>& x0, const std::vector<int>& ts,
                        const TensorT<T>& z, const NoiseSchedule& s) {
    if (x0.shape() != z.shape()) throw ShapeError("diffuse_rows: x0/z mismatch");
    int n = x0.dim(0);
    if (static_cast<int>(ts.size()) != n) throw ShapeError("diffuse_rows: one t per row");
    int64_t stride = x0.numel() / n;
    TensorT<T> xt(x0.shape());
    for (int i = 0; i < n; ++i) {
        double ab = s.alpha_bar(ts[static_cast<size_t>(i)]);
        double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        const T* px = x0.raw() + i * stride;
        const T* pz = z.raw() + i * stride;
        T* po = xt.raw() + i * stride;
        for (int64_t j = 0; j < stride; ++j) po[j] = static_cast<T>(a * px[j] + b * pz[j]);
    }
    return xt;
}

}  // namespace detail

// Deterministic core of the simplified objective for given draws:
// mean over the batch of || z - eps_hat(x_t, t) ||^2.
template <class Model, class T = typename Model::Scalar>
TensorT<T> simple_loss_given(const Model& m, const TensorT<T>& x0,
                             const std::vector<int>& ts, const TensorT<T>& z,
                             const NoiseSchedule& s) {
    if (!x0.defined() || x0.dim(0) < 1) throw UsageError("simple_loss: empty batch");
    TensorT<T> xt = detail::diffuse_rows(x0, ts, z, s);
    TensorT<T> eps_hat = m.predict(xt, ts);
    TensorT<T> diff = sub(z, eps_hat);
    int n = x0.dim(0);
    int d = static_cast<int>(x0.numel() / n);
    return mean(sum_rows(reshape(mul(diff, diff), {n, d})));
}

// Draw order: first the n uniform timesteps, then the n*d normal deviates.
template <class Model, class T = typename Model::Scalar>
TensorT<T> simple_loss(const Model& m, const TensorT<T>& x0, Rng& rng,
                       const NoiseSchedule& s) {
    if (!x0.defined()) throw UsageError("simple_loss: empty batch");
    int n = x0.dim(0);
    if (n < 1) throw UsageError("simple_loss: empty batch");
    std::vector<int> ts(static_cast<size_t>(n));
    for (auto& t : ts) t = static_cast<int>(rng.next_int(1, s.T()));
    TensorT<T> z = randn<T>(rng, x0.shape());
    return simple_loss_given(m, x0, ts, z, s);
}

// KL( N(mu_q, var I) || N(mu_p, var I) ) = ||mu_q - mu_p||^2 / (2 var).
template <class T>
double gaussian_kl_same_var(const TensorT<T>& mu_q, const TensorT<T>& mu_p, double var) {
    if (mu_q.shape() != mu_p.shape()) throw ShapeError("gaussian_kl: mean shape mismatch");
    if (var <= 0) throw UsageError("gaussian_kl: variance must be positive");
    double sq = 0;
    for (size_t i = 0; i < mu_q.data().size(); ++i) {
        double d = static_cast<double>(mu_q.data()[i]) - mu_p.data()[i];
        sq += d * d;
    }
    return sq / (2.0 * var);
}

// KL( q(x_{t-1}|x_t,x0) || p_theta(x_{t-1}|x_t) ) with the model variance
// fixed to the posterior variance; diagnostic only, 2 <= t <= T.
template <class Model, class T = typename Model::Scalar>
double vlb_term_given(const Model& m, const TensorT<T>& x0, int t, const TensorT<T>& z,
                      const NoiseSchedule& s) {
    if (t < 2 || t > s.T()) throw UsageError("vlb_term: t must be in [2,T]");
    TensorT<T> xt = diffuse_closed_form(x0, t, z, s);
    NoGradGuard ng;
    TensorT<T> eps_hat = m.predict(xt, t);
    TensorT<T> mu_q = posterior_params(x0, xt, t, s).mean;
    TensorT<T> mu_p = mean_from_epsilon(xt, eps_hat, t, s).mean;
    return gaussian_kl_same_var(mu_q, mu_p, s.posterior_var(t));
}

template <class Model, class T = typename Model::Scalar>
double vlb_term(const Model& m, const TensorT<T>& x0, int t, Rng& rng,
                const NoiseSchedule& s) {
    TensorT<T> z = randn<T>(rng, x0.shape());
    return vlb_term_given(m, x0, t, z, s);
}

namespace detail {

template <class T>
TensorT<T> gather_rows(const TensorT<T>& data, const std::vector<int>& idx) {
    Shape shape = data.shape();
    int64_t stride = data.numel() / shape[0];
    shape[0] = static_cast<int>(idx.size());
    TensorT<T> out(shape);
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(data.raw() + idx[i] * stride, stride, out.raw() + static_cast<int64_t>(i) * stride);
    return out;
}

}  // namespace detail

// Train the epsilon-prediction model with L_simple. Batch rows are drawn
// uniformly with replacement; order is a pure function of cfg.seed. Returns
// the per-step loss trace.
template <class Model, class T = typename Model::Scalar>
std::vector<double> train_diffusion(Model& m, const TensorT<T>& data, const TrainConfig& cfg,
                                    const NoiseSchedule& s, Ema<T>* ema_out = nullptr) {
    check_train_config(cfg);
    if (!data.defined() || data.dim(0) < 1) throw UsageError("train_diffusion: empty dataset");
    auto params = m.named_params();
    set_trainable(params, true);
    auto opt = make_optimizer<T>(cfg, params);
    Rng rng(cfg.seed);
    std::unique_ptr<Ema<T>> ema;
    if (cfg.ema_decay > 0) ema = std::make_unique<Ema<T>>(params, cfg.ema_decay);
    int nrows = data.dim(0);
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx(static_cast<size_t>(cfg.batch_size));
        for (auto& i : idx) i = static_cast<int>(rng.next_int(0, nrows - 1));
        TensorT<T> x0 = detail::gather_rows(data, idx);
        TensorT<T> loss = simple_loss(m, x0, rng, s);
        double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
            throw NumericError("train_diffusion: non-finite loss at step " + std::to_string(step));
        backward(loss);
        opt->step(cfg.learning_rate);
        if (ema) ema->update(params);
        trace.push_back(lv);
    }
    set_trainable(params, false);
    if (ema && ema_out) *ema_out = *ema;
    return trace;
}

// Train p(y | x_t, t): each example is diffused to a uniformly drawn t
// before the forward pass; standard cross-entropy on the logits.
template <class T>
std::vector<double> train_guidance_classifier(GuidanceClassifier<T>& c, const TensorT<T>& data,
                                              const std::vector<int>& labels,
                                              const TrainConfig& cfg, const NoiseSchedule& s) {
    check_train_config(cfg);
    if (!data.defined()) throw UsageError("train_guidance_classifier: empty dataset");
    int nrows = data.dim(0);
    if (nrows < 1 || static_cast<int>(labels.size()) != nrows)
        throw UsageError("train_guidance_classifier: labels must match dataset rows");
    int lo = labels[0];
    bool multi = false;
    for (int y : labels) {
        if (y < 0 || y >= c.cfg.num_classes)
            throw DataError("train_guidance_classifier: label out of range");
        if (y != lo) multi = true;
    }
    if (!multi) throw DataError("train_guidance_classifier: single-class dataset");
    auto params = c.named_params();
    set_trainable(params, true);
    auto opt = make_optimizer<T>(cfg, params);
    Rng rng(cfg.seed);
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx(static_cast<size_t>(cfg.batch_size));
        for (auto& i : idx) i = static_cast<int>(rng.next_int(0, nrows - 1));
        TensorT<T> x0 = detail::gather_rows(data, idx);
        std::vector<int> yb(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) yb[i] = labels[static_cast<size_t>(idx[i])];
        std::vector<int> ts(idx.size());
        for (auto& t : ts) t = static_cast<int>(rng.next_int(1, s.T()));
        TensorT<T> z = randn<T>(rng, x0.shape());
        TensorT<T> xt = detail::diffuse_rows(x0, ts, z, s);
        TensorT<T> loss = cross_entropy(c.logits(xt, ts), yb);
        double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
            throw NumericError("train_guidance_classifier: non-finite loss at step " +
                               std::to_string(step));
        backward(loss);
        opt->step(cfg.learning_rate);
        trace.push_back(lv);
    }
    set_trainable(params, false);
    return trace;
}

}  // namespace tinydpm
