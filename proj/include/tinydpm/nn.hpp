#pragma once

// Small layer library on top of the op set: Dense, Conv2d, GroupNorm,
// sinusoidal timestep embedding, and the residual block used by the
// denoiser and classifiers. Layers own their parameters and expose them
// through collect() for optimizers and checkpointing.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tinydpm/ops.hpp"
#include "tinydpm/rng.hpp"
#include "tinydpm/tensor.hpp"

namespace tinydpm {

template <class T>
struct NamedParam {
    std::string name;
    TensorT<T>* tensor;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
void set_trainable(ParamList<T>& params, bool on) {
    for (auto& p : params) p.tensor->set_requires_grad(on);
}

template <class T>
int64_t param_count(const ParamList<T>& params) {
    int64_t n = 0;
    for (auto& p : params) n += p.tensor->numel();
    return n;
}

// Weights ~ N(0, 1/fan_in), biases zero; heads that should start silent use
// zero_init.
template <class T>
struct Dense {
    TensorT<T> w, b;
    int in = 0, out = 0;

    Dense() = default;
    Dense(int in_, int out_, Rng& rng, bool zero_init = false) : in(in_), out(out_) {
        w = TensorT<T>({out, in});
        b = TensorT<T>({out});
        if (!zero_init) {
            double std = 1.0 / std::sqrt(static_cast<double>(in));
            for (auto& v : w.data()) v = static_cast<T>(rng.next_normal() * std);
        }
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return add_bias_rows(matmul_nt(x, w), b);
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        out_list.push_back({prefix + ".w", &w});
        out_list.push_back({prefix + ".b", &b});
    }
};

template <class T>
struct Conv2dLayer {
    TensorT<T> w, b;
    int stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, Rng& rng,
                bool zero_init = false)
        : stride(stride_), pad(pad_) {
        w = TensorT<T>({cout, cin, k, k});
        b = TensorT<T>({cout});
        if (!zero_init) {
            double std = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
            for (auto& v : w.data()) v = static_cast<T>(rng.next_normal() * std);
        }
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return add_bias_channels(conv2d(x, w, stride, pad), b);
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        out_list.push_back({prefix + ".w", &w});
        out_list.push_back({prefix + ".b", &b});
    }
};

inline int norm_groups_for(int channels) {
    for (int g : {8, 4, 2})
        if (channels % g == 0) return g;
    return 1;
}

template <class T>
struct GroupNormLayer {
    TensorT<T> gamma, beta;
    int groups = 1;

    GroupNormLayer() = default;
    explicit GroupNormLayer(int channels, int groups_ = 0)
        : groups(groups_ > 0 ? groups_ : norm_groups_for(channels)) {
        gamma = TensorT<T>({channels}, T(1));
        beta = TensorT<T>({channels}, T(0));
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return group_norm(x, gamma, beta, groups);
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        out_list.push_back({prefix + ".gamma", &gamma});
        out_list.push_back({prefix + ".beta", &beta});
    }
};

// Transformer-style sinusoidal embedding of integer timesteps; dim must be
// even. Pure function of t — never part of the gradient graph.
template <class T>
TensorT<T> sinusoidal_time_embedding(const std::vector<int>& ts, int dim) {
    if (dim < 2 || dim % 2 != 0) throw UsageError("time embedding dim must be even and >= 2");
    int half = dim / 2;
    int n = static_cast<int>(ts.size());
    TensorT<T> out({n, dim});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(10000.0) * j / half);
            double a = ts[static_cast<size_t>(i)] * freq;
            out.data()[static_cast<size_t>(i) * dim + j] = static_cast<T>(std::sin(a));
            out.data()[static_cast<size_t>(i) * dim + half + j] = static_cast<T>(std::cos(a));
        }
    return out;
}

// norm -> silu -> conv, add projected time embedding, norm -> silu -> conv,
// plus identity (or 1x1-conv) shortcut.
template <class T>
struct ResBlock {
    GroupNormLayer<T> n1, n2;
    Conv2dLayer<T> c1, c2, skip;
    Dense<T> emb;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(int cin, int cout, int temb_dim, Rng& rng)
        : n1(cin),
          n2(cout),
          c1(cin, cout, 3, 1, 1, rng),
          c2(cout, cout, 3, 1, 1, rng),
          emb(temb_dim, cout, rng),
          has_skip(cin != cout) {
        if (has_skip) skip = Conv2dLayer<T>(cin, cout, 1, 1, 0, rng);
    }

    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& temb) const {
        TensorT<T> h = c1.forward(silu(n1.forward(x)));
        h = add_channels_vec(h, emb.forward(silu(temb)));
        h = c2.forward(silu(n2.forward(h)));
        return add(h, has_skip ? skip.forward(x) : x);
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        n1.collect(prefix + ".n1", out_list);
        c1.collect(prefix + ".c1", out_list);
        emb.collect(prefix + ".emb", out_list);
        n2.collect(prefix + ".n2", out_list);
        c2.collect(prefix + ".c2", out_list);
        if (has_skip) skip.collect(prefix + ".skip", out_list);
    }
};

}  // namespace tinydpm
