#pragma once

// GuidanceClassifier: p(y | x_t, t) on noisy inputs — the denoiser's encoder
// half with a mean-pool head. EvalClassifier: plain classifiers (two sizes,
// arch-a / arch-b) for clean images; doubles as the metric feature extractor
// through its penultimate activations.

#include <string>
#include <vector>

#include "tinydpm/nn.hpp"

namespace tinydpm {

struct GuidanceConfig {
    int in_channels = 3;
    int height = 16;
    int width = 16;
    int num_classes = 4;
    std::vector<int> widths = {24, 32, 48};
    int T = 1000;
};

template <class T>
class GuidanceClassifier {
public:
    using Scalar = T;
    GuidanceConfig cfg;

    GuidanceClassifier() = default;

    GuidanceClassifier(const GuidanceConfig& c, Rng rng) : cfg(c) {
        if (cfg.num_classes < 2) throw UsageError("GuidanceClassifier: need >= 2 classes");
        if (cfg.widths.size() != 3) throw UsageError("GuidanceClassifier: need 3 widths");
        int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
        sin_dim_ = w0;
        temb_dim_ = 4 * w0;
        emb1_ = Dense<T>(sin_dim_, temb_dim_, rng);
        emb2_ = Dense<T>(temb_dim_, temb_dim_, rng);
        stem_ = Conv2dLayer<T>(cfg.in_channels, w0, 3, 1, 1, rng);
        rb0a_ = ResBlock<T>(w0, w0, temb_dim_, rng);
        rb0b_ = ResBlock<T>(w0, w0, temb_dim_, rng);
        down1_ = Conv2dLayer<T>(w0, w1, 3, 2, 1, rng);
        rb1a_ = ResBlock<T>(w1, w1, temb_dim_, rng);
        rb1b_ = ResBlock<T>(w1, w1, temb_dim_, rng);
        down2_ = Conv2dLayer<T>(w1, w2, 3, 2, 1, rng);
        rb2a_ = ResBlock<T>(w2, w2, temb_dim_, rng);
        rb2b_ = ResBlock<T>(w2, w2, temb_dim_, rng);
        head_norm_ = GroupNormLayer<T>(w2);
        head_ = Dense<T>(w2, cfg.num_classes, rng, /*zero_init=*/true);
    }

    // logits [n, M]
    TensorT<T> logits(const TensorT<T>& x, const std::vector<int>& ts) const {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.height ||
            x.dim(3) != cfg.width)
            throw ShapeError("GuidanceClassifier: input " + shape_str(x.shape()) + " mismatch");
        if (static_cast<int>(ts.size()) != x.dim(0))
            throw ShapeError("GuidanceClassifier: one timestep per sample required");
        for (int t : ts)
            if (t < 1 || t > cfg.T) throw UsageError("GuidanceClassifier: t out of [1,T]");
        TensorT<T> temb = emb2_.forward(silu(emb1_.forward(
            sinusoidal_time_embedding<T>(ts, sin_dim_))));
        TensorT<T> h = rb0b_.forward(rb0a_.forward(stem_.forward(x), temb), temb);
        h = rb1b_.forward(rb1a_.forward(down1_.forward(h), temb), temb);
        h = rb2b_.forward(rb2a_.forward(down2_.forward(h), temb), temb);
        return head_.forward(avg_pool_global(silu(head_norm_.forward(h))));
    }

    TensorT<T> logits(const TensorT<T>& x, int t) const {
        return logits(x, std::vector<int>(static_cast<size_t>(x.dim(0)), t));
    }

    ParamList<T> named_params() {
        ParamList<T> p;
        emb1_.collect("temb.l1", p);
        emb2_.collect("temb.l2", p);
        stem_.collect("stem", p);
        rb0a_.collect("rb0a", p);
        rb0b_.collect("rb0b", p);
        down1_.collect("down1", p);
        rb1a_.collect("rb1a", p);
        rb1b_.collect("rb1b", p);
        down2_.collect("down2", p);
        rb2a_.collect("rb2a", p);
        rb2b_.collect("rb2b", p);
        head_norm_.collect("head.norm", p);
        head_.collect("head.fc", p);
        return p;
    }

private:
    int sin_dim_ = 0, temb_dim_ = 0;
    Dense<T> emb1_, emb2_, head_;
    Conv2dLayer<T> stem_, down1_, down2_;
    ResBlock<T> rb0a_, rb0b_, rb1a_, rb1b_, rb2a_, rb2b_;
    GroupNormLayer<T> head_norm_;
};

struct EvalConfig {
    std::string arch = "arch-a";  // or "arch-b"
    int in_channels = 3;
    int height = 16;
    int width = 16;
    int num_classes = 4;
};

// arch-a: three convs, global pool; penultimate = 64-d pooled vector.
// arch-b: five convs plus a hidden dense layer; penultimate = 48-d.
template <class T>
class EvalClassifier {
public:
    using Scalar = T;
    EvalConfig cfg;

    EvalClassifier() = default;

    EvalClassifier(const EvalConfig& c, Rng rng) : cfg(c) {
        if (cfg.num_classes < 2) throw UsageError("EvalClassifier: need >= 2 classes");
        if (cfg.arch == "arch-a") {
            convs_.emplace_back(cfg.in_channels, 16, 3, 1, 1, rng);
            convs_.emplace_back(16, 32, 3, 2, 1, rng);
            convs_.emplace_back(32, 64, 3, 2, 1, rng);
            feat_dim_ = 64;
            head_ = Dense<T>(feat_dim_, cfg.num_classes, rng, /*zero_init=*/true);
        } else if (cfg.arch == "arch-b") {
            convs_.emplace_back(cfg.in_channels, 16, 3, 1, 1, rng);
            convs_.emplace_back(16, 32, 3, 1, 1, rng);
            convs_.emplace_back(32, 32, 3, 2, 1, rng);
            convs_.emplace_back(32, 64, 3, 1, 1, rng);
            convs_.emplace_back(64, 64, 3, 2, 1, rng);
            hidden_ = Dense<T>(64, 48, rng);
            has_hidden_ = true;
            feat_dim_ = 48;
            head_ = Dense<T>(feat_dim_, cfg.num_classes, rng, /*zero_init=*/true);
        } else {
            throw UsageError("EvalClassifier: unknown arch '" + cfg.arch + "'");
        }
    }

    // Penultimate activations, one row per image.
    TensorT<T> features(const TensorT<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.height ||
            x.dim(3) != cfg.width)
            throw ShapeError("EvalClassifier: input " + shape_str(x.shape()) + " mismatch");
        TensorT<T> h = x;
        for (auto& c : convs_) h = relu(c.forward(h));
        TensorT<T> pooled = avg_pool_global(h);
        if (has_hidden_) return relu(hidden_.forward(pooled));
        return pooled;
    }

    TensorT<T> logits(const TensorT<T>& x) const { return head_.forward(features(x)); }

    int feature_dim() const { return feat_dim_; }

    ParamList<T> named_params() {
        ParamList<T> p;
        for (size_t i = 0; i < convs_.size(); ++i)
            convs_[i].collect("conv" + std::to_string(i), p);
        if (has_hidden_) hidden_.collect("hidden", p);
        head_.collect("head", p);
        return p;
    }

private:
    std::vector<Conv2dLayer<T>> convs_;
    Dense<T> hidden_, head_;
    bool has_hidden_ = false;
    int feat_dim_ = 0;
};

}  // namespace tinydpm
