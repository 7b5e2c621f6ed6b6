#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "tinydpm/samplers.hpp"
#include "tinydpm/training.hpp"

using namespace tinydpm;

namespace {

// denoiser stub with a fixed prediction; d = 1 per sample
template <class T>
struct ConstModel {
    using Scalar = T;
    T value = 0;
    Shape sample_shape(int n) const { return {n, 1}; }
    TensorT<T> predict(const TensorT<T>& x, int) const {
        return TensorT<T>::full(x.shape(), value);
    }
};

template <class T>
struct NanModel {
    using Scalar = T;
    Shape sample_shape(int n) const { return {n, 1}; }
    TensorT<T> predict(const TensorT<T>& x, int) const {
        return TensorT<T>::full(x.shape(), std::numeric_limits<T>::quiet_NaN());
    }
};

UNetConfig tiny_unet_cfg(int T_) {
    UNetConfig c;
    c.in_channels = 1;
    c.height = 8;
    c.width = 8;
    c.widths = {4, 4, 4};
    c.T = T_;
    return c;
}

GuidanceConfig tiny_guide_cfg(int T_) {
    GuidanceConfig c;
    c.in_channels = 1;
    c.height = 8;
    c.width = 8;
    c.num_classes = 2;
    c.widths = {4, 4, 4};
    c.T = T_;
    return c;
}

// a fresh U-Net has a zero output head; randomize it so predictions depend
// on (x, t)
template <class T>
void randomize_head(UNetDenoiser<T>& m, uint64_t seed) {
    Rng rng(seed);
    for (auto& np : m.named_params())
        if (np.name == "head.conv.w")
            for (auto& v : np.tensor->data()) v = static_cast<T>(rng.next_normal() * 0.1);
}

}  // namespace

// Replays the exact normal draws of the library chain through an independent
// scalar transcription of the documented update rule. With eps_hat == 0 each
// coordinate evolves independently, so d = 1 chains are full-fidelity runs.
TEST(Ancestral, MatchesScalarRecursionUnderCommonRandomNumbers) {
    const int T = 20, n = 10000;
    auto s = build_linear_schedule(T, 1e-3, 0.08);
    ConstModel<float> m;
    SamplerConfig cfg;
    cfg.seed = 42;
    auto out = ancestral_sample(m, s, cfg, n);

    Rng rng(42);  // same stream: n draws for x_T, then n per step T..2
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = rng.next_normal();
    for (int t = T; t >= 1; --t) {
        double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
        double beta = s.at(t).beta, a = s.at(t).alpha;
        double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        double ct = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
        double sd = std::sqrt(s.posterior_var(t));
        for (int i = 0; i < n; ++i) {
            double x0 = std::clamp(x[static_cast<size_t>(i)] / std::sqrt(ab), -1.0, 1.0);
            x[static_cast<size_t>(i)] = c0 * x0 + ct * x[static_cast<size_t>(i)];
        }
        if (t > 1)
            for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] += sd * rng.next_normal();
    }
    double lib_mean = 0, ora_mean = 0, lib_sq = 0, ora_sq = 0;
    for (int i = 0; i < n; ++i) {
        double xi = std::clamp(x[static_cast<size_t>(i)], -1.0, 1.0);
        lib_mean += out.x.data()[static_cast<size_t>(i)];
        ora_mean += xi;
        lib_sq += out.x.data()[static_cast<size_t>(i)] * out.x.data()[static_cast<size_t>(i)];
        ora_sq += xi * xi;
    }
    EXPECT_NEAR(lib_mean / n, ora_mean / n, 1e-4);
    EXPECT_NEAR(lib_sq / n, ora_sq / n, 1e-4);
    EXPECT_EQ(out.model_evals, T);
}

TEST(Ancestral, SeedDeterminismAndRange) {
    auto s = build_linear_schedule(15, 1e-3, 0.05);
    UNetDenoiser<float> m(tiny_unet_cfg(15), Rng(1));
    randomize_head(m, 2);
    SamplerConfig cfg;
    cfg.seed = 7;
    auto a = ancestral_sample(m, s, cfg, 3);
    auto b = ancestral_sample(m, s, cfg, 3);
    EXPECT_EQ(a.x.shape(), (Shape{3, 1, 8, 8}));
    EXPECT_EQ(a.x.data(), b.x.data());
    for (float v : a.x.data()) {
        EXPECT_GE(v, -1.f);
        EXPECT_LE(v, 1.f);
    }
    cfg.seed = 8;
    auto c = ancestral_sample(m, s, cfg, 3);
    EXPECT_NE(a.x.data(), c.x.data());
}

TEST(Ancestral, NonFiniteModelAborts) {
    auto s = build_linear_schedule(5, 1e-3, 0.02);
    NanModel<float> m;
    SamplerConfig cfg;
    EXPECT_THROW(ancestral_sample(m, s, cfg, 2), NumericError);
}

TEST(Guided, ScaleZeroBitIdenticalToAncestral) {
    auto s = build_linear_schedule(12, 1e-3, 0.05);
    UNetDenoiser<float> m(tiny_unet_cfg(12), Rng(3));
    randomize_head(m, 4);
    GuidanceClassifier<float> c(tiny_guide_cfg(12), Rng(5));
    Rng prng(6);
    for (auto& np : c.named_params())
        for (auto& v : np.tensor->data()) v += static_cast<float>(prng.next_normal() * 0.05);
    for (uint64_t seed : {0ull, 1ull, 2ull, 3ull, 4ull}) {
        SamplerConfig cfg;
        cfg.seed = seed;
        cfg.scale = 0.0;
        cfg.target_class = 1;
        auto g = guided_sample(m, c, s, cfg, 2);
        auto a = ancestral_sample(m, s, cfg, 2);
        ASSERT_EQ(g.x.data().size(), a.x.data().size());
        for (size_t i = 0; i < g.x.data().size(); ++i)
            EXPECT_EQ(std::memcmp(&g.x.data()[i], &a.x.data()[i], sizeof(float)), 0) << i;
    }
}

TEST(Guided, ZeroGradientClassifierBitIdenticalAtAnyScale) {
    auto s = build_linear_schedule(10, 1e-3, 0.05);
    UNetDenoiser<float> m(tiny_unet_cfg(10), Rng(7));
    randomize_head(m, 8);
    // fresh classifier: zero output head -> constant logits -> zero gradient
    GuidanceClassifier<float> c(tiny_guide_cfg(10), Rng(9));
    for (uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
        SamplerConfig cfg;
        cfg.seed = seed;
        cfg.scale = 2.5;
        auto g = guided_sample(m, c, s, cfg, 2);
        auto a = ancestral_sample(m, s, cfg, 2);
        for (size_t i = 0; i < g.x.data().size(); ++i)
            EXPECT_EQ(std::memcmp(&g.x.data()[i], &a.x.data()[i], sizeof(float)), 0) << i;
    }
}

TEST(Guided, ArgumentValidation) {
    auto s = build_linear_schedule(5, 1e-3, 0.02);
    UNetDenoiser<float> m(tiny_unet_cfg(5), Rng(10));
    GuidanceClassifier<float> c(tiny_guide_cfg(5), Rng(11));
    SamplerConfig cfg;
    cfg.scale = -1.0;
    EXPECT_THROW(guided_sample(m, c, s, cfg, 1), UsageError);
    cfg.scale = 1.0;
    cfg.target_class = 2;
    EXPECT_THROW(guided_sample(m, c, s, cfg, 1), DataError);
}

TEST(Guided, DefaultScaleIsOne) { EXPECT_DOUBLE_EQ(SamplerConfig{}.scale, 1.0); }

TEST(Guided, NonzeroGradientShiftsTheChain) {
    auto s = build_linear_schedule(10, 1e-3, 0.05);
    UNetDenoiser<float> m(tiny_unet_cfg(10), Rng(12));
    randomize_head(m, 13);
    GuidanceClassifier<float> c(tiny_guide_cfg(10), Rng(14));
    Rng prng(15);
    for (auto& np : c.named_params())
        if (np.name == "head.fc.w")
            for (auto& v : np.tensor->data()) v = static_cast<float>(prng.next_normal());
    SamplerConfig cfg;
    cfg.seed = 16;
    cfg.scale = 4.0;
    cfg.target_class = 0;
    auto g = guided_sample(m, c, s, cfg, 2);
    auto a = ancestral_sample(m, s, cfg, 2);
    EXPECT_NE(g.x.data(), a.x.data());
}

TEST(DdimSubsequence, Properties) {
    EXPECT_EQ(ddim_subsequence(200, 1), (std::vector<int>{200}));
    auto ts = ddim_subsequence(200, 25);
    EXPECT_EQ(ts.front(), 1);
    EXPECT_EQ(ts.back(), 200);
    EXPECT_LE(ts.size(), 25u);
    EXPECT_TRUE(std::is_sorted(ts.begin(), ts.end()));
    EXPECT_TRUE(std::adjacent_find(ts.begin(), ts.end()) == ts.end());
    auto all = ddim_subsequence(10, 10);
    EXPECT_EQ(all.size(), 10u);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(all[static_cast<size_t>(i)], i + 1);
    EXPECT_THROW(ddim_subsequence(10, 0), UsageError);
    EXPECT_THROW(ddim_subsequence(10, 11), UsageError);
}

TEST(Ddim, DeterministicGivenSeed) {
    auto s = build_linear_schedule(40, 1e-3, 0.05);
    UNetDenoiser<float> m(tiny_unet_cfg(40), Rng(17));
    randomize_head(m, 18);
    SamplerConfig cfg;
    cfg.kind = "ddim";
    cfg.ddim_steps = 8;
    cfg.seed = 19;
    auto a = ddim_sample(m, s, cfg, 2);
    auto b = ddim_sample(m, s, cfg, 2);
    EXPECT_EQ(a.x.data(), b.x.data());
    EXPECT_EQ(a.model_evals, 8);
}

TEST(Ddim, SingleStepReturnsClippedX0Estimate) {
    const int T = 30;
    auto s = build_linear_schedule(T, 1e-3, 0.08);
    UNetDenoiser<float> m(tiny_unet_cfg(T), Rng(20));
    randomize_head(m, 21);
    SamplerConfig cfg;
    cfg.ddim_steps = 1;
    cfg.seed = 22;
    auto out = ddim_sample(m, s, cfg, 2);
    EXPECT_EQ(out.model_evals, 1);

    Rng rng(22);
    Tensor xT = randn(rng, m.sample_shape(2));
    NoGradGuard ng;
    Tensor eps = m.predict(xT, T);
    Tensor x0 = mean_from_epsilon(xT, eps, T, s).x0_hat;  // already clipped
    ASSERT_EQ(out.x.data().size(), x0.data().size());
    for (size_t i = 0; i < x0.data().size(); ++i)
        EXPECT_EQ(out.x.data()[i], x0.data()[i]) << i;
}

TEST(Ddim, FewStepSamplingCutsModelEvals) {
    const int T = 200;
    auto s = build_linear_schedule(T, 1e-4, 0.02);
    ConstModel<float> m;
    SamplerConfig full, few;
    full.seed = few.seed = 23;
    few.ddim_steps = 25;
    auto a = ancestral_sample(m, s, full, 4);
    auto d = ddim_sample(m, s, few, 4);
    EXPECT_EQ(a.model_evals, 200);
    EXPECT_LE(d.model_evals, 25);
    EXPECT_GE(a.model_evals / d.model_evals, 8);
}

TEST(Ddim, RejectsBadArgs) {
    auto s = build_linear_schedule(10, 1e-3, 0.02);
    ConstModel<float> m;
    SamplerConfig cfg;
    cfg.ddim_steps = 11;
    EXPECT_THROW(ddim_sample(m, s, cfg, 1), UsageError);
    cfg.ddim_steps = 5;
    EXPECT_THROW(ddim_sample(m, s, cfg, 0), UsageError);
}

// with eps_hat == c the one-jump DDIM estimate is analytic
TEST(Ddim, SingleStepAnalytic) {
    const int T = 10;
    auto s = build_linear_schedule(T, 0.05, 0.3);
    ConstModel<double> m;
    m.value = 0.25;
    SamplerConfig cfg;
    cfg.ddim_steps = 1;
    cfg.seed = 24;
    auto out = ddim_sample(m, s, cfg, 64);
    Rng rng(24);
    DTensor xT = randn<double>(rng, m.sample_shape(64));
    double ab = s.alpha_bar(T);
    for (size_t i = 0; i < xT.data().size(); ++i) {
        double x0 = (xT.data()[i] - std::sqrt(1 - ab) * 0.25) / std::sqrt(ab);
        EXPECT_NEAR(out.x.data()[i], std::clamp(x0, -1.0, 1.0), 1e-12);
    }
}
