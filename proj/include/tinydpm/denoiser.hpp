#pragma once

// Epsilon-prediction models. UNetDenoiser: 3-resolution convolutional
// encoder-decoder with skip connections, two residual blocks per
// resolution, additive sinusoidal time embedding, no attention.
// MlpDenoiser: the same contract for flat vector data (2-D point clouds).

#include <cmath>
#include <string>
#include <vector>

#include "tinydpm/nn.hpp"
#include "tinydpm/schedule.hpp"

namespace tinydpm {

struct UNetConfig {
    int in_channels = 3;
    int height = 16;
    int width = 16;
    std::vector<int> widths = {24, 32, 48};  // one per resolution
    int T = 1000;                            // schedule length trained for
};

inline bool is_pow2(int v) { return v >= 1 && (v & (v - 1)) == 0; }

template <class T>
class UNetDenoiser {
public:
    using Scalar = T;
    UNetConfig cfg;

    UNetDenoiser() = default;

    UNetDenoiser(const UNetConfig& c, Rng rng) : cfg(c) {
        if (!is_pow2(cfg.height) || !is_pow2(cfg.width) || cfg.height < 8 || cfg.width < 8)
            throw UsageError("UNetDenoiser: H, W must be powers of two >= 8");
        if (cfg.widths.size() != 3) throw UsageError("UNetDenoiser: need 3 widths");
        for (int w : cfg.widths)
            if (w < 2 || w % 2 != 0) throw UsageError("UNetDenoiser: widths must be even >= 2");
        int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
        sin_dim_ = w0;
        temb_dim_ = 4 * w0;
        emb1_ = Dense<T>(sin_dim_, temb_dim_, rng);
        emb2_ = Dense<T>(temb_dim_, temb_dim_, rng);
        stem_ = Conv2dLayer<T>(cfg.in_channels, w0, 3, 1, 1, rng);
        rb_enc0a_ = ResBlock<T>(w0, w0, temb_dim_, rng);
        rb_enc0b_ = ResBlock<T>(w0, w0, temb_dim_, rng);
        down1_ = Conv2dLayer<T>(w0, w1, 3, 2, 1, rng);
        rb_enc1a_ = ResBlock<T>(w1, w1, temb_dim_, rng);
        rb_enc1b_ = ResBlock<T>(w1, w1, temb_dim_, rng);
        down2_ = Conv2dLayer<T>(w1, w2, 3, 2, 1, rng);
        rb_enc2a_ = ResBlock<T>(w2, w2, temb_dim_, rng);
        rb_enc2b_ = ResBlock<T>(w2, w2, temb_dim_, rng);
        up1_ = Conv2dLayer<T>(w2, w1, 3, 1, 1, rng);
        rb_dec1a_ = ResBlock<T>(2 * w1, w1, temb_dim_, rng);
        rb_dec1b_ = ResBlock<T>(w1, w1, temb_dim_, rng);
        up0_ = Conv2dLayer<T>(w1, w0, 3, 1, 1, rng);
        rb_dec0a_ = ResBlock<T>(2 * w0, w0, temb_dim_, rng);
        rb_dec0b_ = ResBlock<T>(w0, w0, temb_dim_, rng);
        head_norm_ = GroupNormLayer<T>(w0);
        head_ = Conv2dLayer<T>(w0, cfg.in_channels, 3, 1, 1, rng, /*zero_init=*/true);
    }

    // x: [n, C, H, W], one timestep per row.
    TensorT<T> predict(const TensorT<T>& x, const std::vector<int>& ts) const {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.height ||
            x.dim(3) != cfg.width)
            throw ShapeError("UNetDenoiser: input " + shape_str(x.shape()) + " does not match model");
        if (static_cast<int>(ts.size()) != x.dim(0))
            throw ShapeError("UNetDenoiser: one timestep per sample required");
        for (int t : ts)
            if (t < 1 || t > cfg.T) throw UsageError("UNetDenoiser: t out of [1,T]");
        TensorT<T> temb = emb2_.forward(silu(emb1_.forward(
            sinusoidal_time_embedding<T>(ts, sin_dim_))));
        TensorT<T> e0 = rb_enc0b_.forward(rb_enc0a_.forward(stem_.forward(x), temb), temb);
        TensorT<T> e1 = rb_enc1b_.forward(rb_enc1a_.forward(down1_.forward(e0), temb), temb);
        TensorT<T> e2 = rb_enc2b_.forward(rb_enc2a_.forward(down2_.forward(e1), temb), temb);
        TensorT<T> d1 = rb_dec1b_.forward(
            rb_dec1a_.forward(concat_channels(up1_.forward(upsample_nearest2(e2)), e1), temb), temb);
        TensorT<T> d0 = rb_dec0b_.forward(
            rb_dec0a_.forward(concat_channels(up0_.forward(upsample_nearest2(d1)), e0), temb), temb);
        return head_.forward(silu(head_norm_.forward(d0)));
    }

    TensorT<T> predict(const TensorT<T>& x, int t) const {
        return predict(x, std::vector<int>(static_cast<size_t>(x.dim(0)), t));
    }

    ParamList<T> named_params() {
        ParamList<T> p;
        emb1_.collect("temb.l1", p);
        emb2_.collect("temb.l2", p);
        stem_.collect("stem", p);
        rb_enc0a_.collect("enc0a", p);
        rb_enc0b_.collect("enc0b", p);
        down1_.collect("down1", p);
        rb_enc1a_.collect("enc1a", p);
        rb_enc1b_.collect("enc1b", p);
        down2_.collect("down2", p);
        rb_enc2a_.collect("enc2a", p);
        rb_enc2b_.collect("enc2b", p);
        up1_.collect("up1", p);
        rb_dec1a_.collect("dec1a", p);
        rb_dec1b_.collect("dec1b", p);
        up0_.collect("up0", p);
        rb_dec0a_.collect("dec0a", p);
        rb_dec0b_.collect("dec0b", p);
        head_norm_.collect("head.norm", p);
        head_.collect("head.conv", p);
        return p;
    }

    Shape sample_shape(int n) const { return {n, cfg.in_channels, cfg.height, cfg.width}; }

private:
    int sin_dim_ = 0, temb_dim_ = 0;
    Dense<T> emb1_, emb2_;
    Conv2dLayer<T> stem_, down1_, down2_, up1_, up0_, head_;
    ResBlock<T> rb_enc0a_, rb_enc0b_, rb_enc1a_, rb_enc1b_, rb_enc2a_, rb_enc2b_;
    ResBlock<T> rb_dec1a_, rb_dec1b_, rb_dec0a_, rb_dec0b_;
    GroupNormLayer<T> head_norm_;
};

struct MlpConfig {
    int dim = 2;
    int hidden = 96;
    int T = 200;
};

template <class T>
class MlpDenoiser {
public:
    using Scalar = T;
    MlpConfig cfg;

    MlpDenoiser() = default;

    MlpDenoiser(const MlpConfig& c, Rng rng) : cfg(c) {
        if (cfg.dim < 1 || cfg.hidden < 2) throw UsageError("MlpDenoiser: bad config");
        t1_ = Dense<T>(sin_dim_, 64, rng);
        t2_ = Dense<T>(64, 64, rng);
        tp_ = Dense<T>(64, cfg.hidden, rng);
        l1_ = Dense<T>(cfg.dim, cfg.hidden, rng);
        l2_ = Dense<T>(cfg.hidden, cfg.hidden, rng);
        l3_ = Dense<T>(cfg.hidden, cfg.hidden, rng);
        head_ = Dense<T>(cfg.hidden, cfg.dim, rng, /*zero_init=*/true);
    }

    TensorT<T> predict(const TensorT<T>& x, const std::vector<int>& ts) const {
        if (x.rank() != 2 || x.dim(1) != cfg.dim)
            throw ShapeError("MlpDenoiser: input " + shape_str(x.shape()) + " does not match model");
        if (static_cast<int>(ts.size()) != x.dim(0))
            throw ShapeError("MlpDenoiser: one timestep per sample required");
        for (int t : ts)
            if (t < 1 || t > cfg.T) throw UsageError("MlpDenoiser: t out of [1,T]");
        TensorT<T> temb = t2_.forward(silu(t1_.forward(
            sinusoidal_time_embedding<T>(ts, sin_dim_))));
        TensorT<T> h = silu(add(l1_.forward(x), tp_.forward(silu(temb))));
        h = silu(l2_.forward(h));
        h = silu(l3_.forward(h));
        return head_.forward(h);
    }

    TensorT<T> predict(const TensorT<T>& x, int t) const {
        return predict(x, std::vector<int>(static_cast<size_t>(x.dim(0)), t));
    }

    ParamList<T> named_params() {
        ParamList<T> p;
        t1_.collect("temb.l1", p);
        t2_.collect("temb.l2", p);
        tp_.collect("temb.proj", p);
        l1_.collect("l1", p);
        l2_.collect("l2", p);
        l3_.collect("l3", p);
        head_.collect("head", p);
        return p;
    }

    Shape sample_shape(int n) const { return {n, cfg.dim}; }

private:
    static constexpr int sin_dim_ = 32;
    Dense<T> t1_, t2_, tp_, l1_, l2_, l3_, head_;
};

template <class T>
struct MeanAndX0 {
    TensorT<T> mean;     // mu_theta(x_t, t), direct formula
    TensorT<T> x0_hat;   // implied clean-image estimate, clipped to data range
};

// mu = (x_t - beta_t/sqrt(1-abar_t) * eps) / sqrt(a_t)
// x0 = (x_t - sqrt(1-abar_t) * eps) / sqrt(abar_t), clipped to [-1, 1]
template <class T>
MeanAndX0<T> mean_from_epsilon(const TensorT<T>& x_t, const TensorT<T>& eps, int t,
                               const NoiseSchedule& s) {
    if (x_t.shape() != eps.shape())
        throw ShapeError("mean_from_epsilon: x_t/eps shape mismatch");
    auto e = s.at(t);
    double om = 1.0 - e.alpha_bar;
    if (om < 1e-12) throw NumericError("mean_from_epsilon: 1-abar_t degenerate at t=" + std::to_string(t));
    double cm = e.beta / std::sqrt(om);
    double inv_sa = 1.0 / std::sqrt(e.alpha);
    double so = std::sqrt(om);
    double inv_sab = 1.0 / std::sqrt(e.alpha_bar);
    TensorT<T> mean(x_t.shape()), x0(x_t.shape());
    const auto& xv = x_t.data();
    const auto& ev = eps.data();
    for (size_t i = 0; i < xv.size(); ++i) {
        double x = xv[i], ep = ev[i];
        mean.data()[i] = static_cast<T>((x - cm * ep) * inv_sa);
        double x0v = (x - so * ep) * inv_sab;
        x0.data()[i] = static_cast<T>(std::clamp(x0v, -1.0, 1.0));
    }
    return {std::move(mean), std::move(x0)};
}

}  // namespace tinydpm
