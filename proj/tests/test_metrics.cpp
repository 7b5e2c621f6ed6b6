#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "tinydpm/metrics.hpp"
#include "tinydpm/ops.hpp"
#include "tinydpm/rng.hpp"
#include "tinydpm/training.hpp"

using namespace tinydpm;

namespace {

FeatureSet random_set(Rng& rng, int n, int d, double scale = 1.0, double shift = 0.0) {
    FeatureSet f;
    f.phi.resize(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) f.phi(i, j) = rng.next_normal() * scale + shift;
    return f;
}

// straight-line O(N^2) transcription of the documented definitions, kept
// deliberately independent of the library path
std::vector<double> brute_radii(const Eigen::MatrixXd& m, int k) {
    int n = static_cast<int>(m.rows());
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> d2;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double acc = 0;
            for (int c = 0; c < m.cols(); ++c) {
                double d = m(i, c) - m(j, c);
                acc += d * d;
            }
            d2.push_back(acc);
        }
        std::sort(d2.begin(), d2.end());
        out[static_cast<size_t>(i)] = std::sqrt(d2[static_cast<size_t>(k - 1)]);
    }
    return out;
}

std::pair<double, double> brute_pr(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen,
                                   int k) {
    auto rr = brute_radii(real, k), rg = brute_radii(gen, k);
    auto cover = [](const Eigen::MatrixXd& q, int qi, const Eigen::MatrixXd& ref,
                    const std::vector<double>& radii) {
        for (int j = 0; j < ref.rows(); ++j) {
            double acc = 0;
            for (int c = 0; c < ref.cols(); ++c) {
                double d = q(qi, c) - ref(j, c);
                acc += d * d;
            }
            if (acc <= radii[static_cast<size_t>(j)] * radii[static_cast<size_t>(j)]) return true;
        }
        return false;
    };
    int cg = 0, cr = 0;
    for (int i = 0; i < gen.rows(); ++i) cg += cover(gen, i, real, rr);
    for (int i = 0; i < real.rows(); ++i) cr += cover(real, i, gen, rg);
    return {cg / static_cast<double>(gen.rows()), cr / static_cast<double>(real.rows())};
}

}  // namespace

TEST(FitMoments, IdenticalRowsGiveZeroCovariance) {
    auto f = FeatureSet::from_rows({{1.5, -2.0}, {1.5, -2.0}});
    auto m = fit_moments(f);
    EXPECT_NEAR(m.mu(0), 1.5, 1e-12);
    EXPECT_NEAR(m.mu(1), -2.0, 1e-12);
    EXPECT_NEAR(m.sigma.norm(), 0.0, 1e-12);
}

TEST(FitMoments, BesselNormalization) {
    auto m = fit_moments(FeatureSet::from_rows({{0.0}, {2.0}}));
    EXPECT_DOUBLE_EQ(m.mu(0), 1.0);
    EXPECT_DOUBLE_EQ(m.sigma(0, 0), 2.0);  // 1/(N-1) = 1
}

TEST(FitMoments, EquivariantUnderRotation) {
    Rng rng(1);
    auto f = random_set(rng, 40, 3);
    Eigen::MatrixXd g(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) g(i, j) = rng.next_normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    FeatureSet rot;
    rot.phi = f.phi * q.transpose();
    auto a = fit_moments(f), b = fit_moments(rot);
    EXPECT_LT((b.mu - q * a.mu).norm(), 1e-8);
    EXPECT_LT((b.sigma - q * a.sigma * q.transpose()).norm(), 1e-8);
}

TEST(FitMoments, RejectsSingleRow) {
    EXPECT_THROW(fit_moments(FeatureSet::from_rows({{1.0, 2.0}})), UsageError);
}

TEST(Frechet, ZeroForEqualMoments) {
    Rng rng(2);
    auto m = fit_moments(random_set(rng, 30, 4));
    EXPECT_NEAR(frechet_distance(m, m), 0.0, 1e-6);
}

TEST(Frechet, UnivariateClosedForm) {
    GaussianMoments a, b;
    a.mu.resize(1);
    b.mu.resize(1);
    a.sigma.resize(1, 1);
    b.sigma.resize(1, 1);
    a.mu << 0.0;
    a.sigma << 1.0;
    b.mu << 1.0;
    b.sigma << 1.0;
    EXPECT_NEAR(frechet_distance(a, b), 1.0, 1e-8);  // (mu1-mu2)^2 + (s1-s2)^2
    b.sigma << 4.0;  // sd 2 -> (1-2)^2 + 1
    EXPECT_NEAR(frechet_distance(a, b), 2.0, 1e-8);
}

TEST(Frechet, EqualCovarianceReducesToMeanGap) {
    Rng rng(3);
    auto f = random_set(rng, 50, 3);
    auto a = fit_moments(f);
    GaussianMoments b = a;
    Eigen::VectorXd v(3);
    v << 0.3, -1.2, 2.0;
    b.mu += v;
    EXPECT_NEAR(frechet_distance(a, b), v.squaredNorm(), 1e-8);
}

TEST(Frechet, SymmetricAndNonNegative) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = fit_moments(random_set(rng, 12, 3, 1.0));
        auto b = fit_moments(random_set(rng, 12, 3, 2.0, 0.5));
        double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
        EXPECT_NEAR(ab, ba, 1e-8);
        EXPECT_GE(ab, 0.0);
    }
}

TEST(Frechet, HandlesRankDeficientCovariance) {
    // covariance from 3 points in 5-D is rank <= 2; the clamped eigendecomp
    // must stay finite and symmetric
    Rng rng(5);
    auto a = fit_moments(random_set(rng, 3, 5));
    auto b = fit_moments(random_set(rng, 3, 5, 0.5, 1.0));
    double d = frechet_distance(a, b);
    EXPECT_TRUE(std::isfinite(d));
    EXPECT_GE(d, 0.0);
    EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-6);
}

TEST(Frechet, RejectsMismatchAndNonFinite) {
    GaussianMoments a, b;
    a.mu = Eigen::VectorXd::Zero(2);
    a.sigma = Eigen::MatrixXd::Identity(2, 2);
    b.mu = Eigen::VectorXd::Zero(3);
    b.sigma = Eigen::MatrixXd::Identity(3, 3);
    EXPECT_THROW(frechet_distance(a, b), ShapeError);
    GaussianMoments c = a;
    c.sigma(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(frechet_distance(a, c), NumericError);
}

TEST(InceptionScore, UniformRowsGiveOne) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(6, 4, 0.25);
    EXPECT_DOUBLE_EQ(inception_score(p), 1.0);
}

TEST(InceptionScore, DiagonalOneHotGivesClassCount) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(10, 10);
    EXPECT_NEAR(inception_score(p), 10.0, 1e-9);
}

TEST(InceptionScore, CollapsedOneHotGivesOne) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(7, 5);
    p.col(0).setOnes();
    EXPECT_DOUBLE_EQ(inception_score(p), 1.0);
}

TEST(InceptionScore, BoundedByClassCount) {
    Rng rng(6);
    for (int trial = 0; trial < 25; ++trial) {
        int n = 2 + static_cast<int>(rng.next_int(1, 12));
        int m = 2 + static_cast<int>(rng.next_int(1, 6));
        Eigen::MatrixXd p(n, m);
        for (int i = 0; i < n; ++i) {
            double tot = 0;
            for (int j = 0; j < m; ++j) {
                p(i, j) = -std::log(rng.next_uniform());
                tot += p(i, j);
            }
            p.row(i) /= tot;
        }
        double is = inception_score(p);
        EXPECT_GE(is, 1.0 - 1e-12);
        EXPECT_LE(is, m + 1e-12);
    }
}

TEST(InceptionScore, RejectsBadRows) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(2, 2, 0.4);
    EXPECT_THROW(inception_score(p), DataError);  // rows sum to 0.8
    p << 1.5, -0.5, 0.5, 0.5;
    EXPECT_THROW(inception_score(p), DataError);  // negative entry
}

TEST(KnnRadii, HandEnumeration) {
    auto f = FeatureSet::from_rows({{0.0}, {1.0}});
    auto r = knn_radii(f, 1);
    EXPECT_DOUBLE_EQ(r[0], 1.0);
    EXPECT_DOUBLE_EQ(r[1], 1.0);
}

TEST(KnnRadii, DuplicatesGetZeroRadius) {
    auto f = FeatureSet::from_rows({{2.0, 2.0}, {2.0, 2.0}, {9.0, 9.0}});
    auto r = knn_radii(f, 1);
    EXPECT_DOUBLE_EQ(r[0], 0.0);
    EXPECT_DOUBLE_EQ(r[1], 0.0);
    EXPECT_DOUBLE_EQ(r[2], std::sqrt(2.0) * 7.0);
}

TEST(KnnRadii, RejectsTooLargeK) {
    auto f = FeatureSet::from_rows({{0.0}, {1.0}, {2.0}});
    EXPECT_THROW(knn_radii(f, 3), UsageError);
    EXPECT_THROW(knn_radii(f, 0), UsageError);
    EXPECT_NO_THROW(knn_radii(f, 2));
}

TEST(PrecisionRecall, IdenticalSetsArePerfect) {
    Rng rng(7);
    auto f = random_set(rng, 10, 2);
    auto g = f;
    auto [prc, rec] = precision_recall(f, g, 2);
    EXPECT_DOUBLE_EQ(prc, 1.0);
    EXPECT_DOUBLE_EQ(rec, 1.0);
}

TEST(PrecisionRecall, HandEnumeration) {
    auto real = FeatureSet::from_rows({{0.0}, {1.0}});
    auto gen = FeatureSet::from_rows({{0.1}, {5.0}});
    auto [prc, rec] = precision_recall(real, gen, 1);
    EXPECT_DOUBLE_EQ(prc, 0.5);  // 0.1 inside radius-1 sphere of 0; 5 outside
    EXPECT_DOUBLE_EQ(rec, 1.0);  // both reals inside the generated radii 4.9
}

TEST(PrecisionRecall, FarSeparatedSetsScoreZero) {
    Rng rng(8);
    auto real = random_set(rng, 8, 2, 1.0, 0.0);
    auto gen = random_set(rng, 8, 2, 1.0, 1e6);
    auto [prc, rec] = precision_recall(real, gen, 1);
    EXPECT_DOUBLE_EQ(prc, 0.0);
    EXPECT_DOUBLE_EQ(rec, 0.0);
}

TEST(PrecisionRecall, PermutationInvariant) {
    Rng rng(9);
    auto real = random_set(rng, 12, 3);
    auto gen = random_set(rng, 14, 3, 1.2, 0.2);
    auto base = precision_recall(real, gen, 3);
    FeatureSet rp = real, gp = gen;
    std::vector<int> ri(12), gi(14);
    for (int i = 0; i < 12; ++i) ri[static_cast<size_t>(i)] = i;
    for (int i = 0; i < 14; ++i) gi[static_cast<size_t>(i)] = i;
    rng.shuffle(ri.begin(), ri.end());
    rng.shuffle(gi.begin(), gi.end());
    for (int i = 0; i < 12; ++i) rp.phi.row(i) = real.phi.row(ri[static_cast<size_t>(i)]);
    for (int i = 0; i < 14; ++i) gp.phi.row(i) = gen.phi.row(gi[static_cast<size_t>(i)]);
    auto perm = precision_recall(rp, gp, 3);
    EXPECT_DOUBLE_EQ(base.first, perm.first);
    EXPECT_DOUBLE_EQ(base.second, perm.second);
}

TEST(PrecisionRecall, MatchesBruteForceExactly) {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        int k = 1 + static_cast<int>(rng.next_int(0, 2));
        int d = 1 + static_cast<int>(rng.next_int(0, 3));
        int nr = k + 2 + static_cast<int>(rng.next_int(0, 46 - k));
        int ng = k + 2 + static_cast<int>(rng.next_int(0, 46 - k));
        auto real = random_set(rng, nr, d);
        auto gen = random_set(rng, ng, d, 1.1, 0.3);
        auto fast = precision_recall(real, gen, k);
        auto slow = brute_pr(real.phi, gen.phi, k);
        EXPECT_EQ(fast.first, slow.first) << "trial " << trial;
        EXPECT_EQ(fast.second, slow.second) << "trial " << trial;
        auto fr = knn_radii(real, k);
        auto br = brute_radii(real.phi, k);
        for (size_t i = 0; i < fr.size(); ++i) EXPECT_EQ(fr[i], br[i]);
    }
}

TEST(PrecisionRecall, RejectsDimensionMismatch) {
    auto a = FeatureSet::from_rows({{0.0}, {1.0}});
    auto b = FeatureSet::from_rows({{0.0, 1.0}, {1.0, 2.0}});
    EXPECT_THROW(precision_recall(a, b, 1), ShapeError);
}

TEST(Realism, CoincidenceGivesInfinity) {
    auto real = FeatureSet::from_rows({{0.0}, {1.0}});
    Eigen::VectorXd g(1);
    g << 1.0;
    EXPECT_TRUE(std::isinf(realism_score(g, real, 1)));
}

TEST(Realism, HandEnumerations) {
    auto real = FeatureSet::from_rows({{0.0}, {1.0}});
    Eigen::VectorXd mid(1), far(1);
    mid << 0.5;
    far << 100.0;
    EXPECT_DOUBLE_EQ(realism_score(mid, real, 1), 2.0);        // max(1/0.5, 1/0.5)
    EXPECT_DOUBLE_EQ(realism_score(far, real, 1), 1.0 / 99.0);  // max(1/100, 1/99)
}

TEST(Realism, SphereMembershipImpliesScoreAtLeastOne) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto real = random_set(rng, 10, 2);
        auto radii = knn_radii(real, 3);
        Eigen::VectorXd g(2);
        g << rng.next_normal(), rng.next_normal();
        bool member = false;
        for (int j = 0; j < 10; ++j)
            if ((g.transpose() - real.phi.row(j)).norm() <= radii[static_cast<size_t>(j)])
                member = true;
        if (member) EXPECT_GE(realism_score(g, real, 3), 1.0);
    }
}

TEST(Realism, MedianRestrictionOnlyShrinksTheScore) {
    Rng rng(12);
    for (int trial = 0; trial < 25; ++trial) {
        auto real = random_set(rng, 11, 2);
        Eigen::VectorXd g(2);
        g << rng.next_normal() * 2, rng.next_normal() * 2;
        EXPECT_LE(realism_score(g, real, 3, true), realism_score(g, real, 3, false));
    }
}

TEST(RealismFilter, KeepsExactlyTheHighRealismRows) {
    auto real = FeatureSet::from_rows({{0.0}, {1.0}});
    FeatureSet gen = FeatureSet::from_rows({{0.5}, {100.0}}, "generated");
    auto res = filter_by_realism(gen, real, 1);
    ASSERT_EQ(res.kept.size(), 1u);
    EXPECT_EQ(res.kept[0], 0);
    ASSERT_EQ(res.removed.size(), 1u);
    EXPECT_EQ(res.removed[0].first, 1);
    EXPECT_DOUBLE_EQ(res.removed[0].second, 1.0 / 99.0);
    EXPECT_DOUBLE_EQ(res.scores[0], 2.0);
}

TEST(RealismFilter, IdenticalToRealAllRetained) {
    Rng rng(13);
    auto real = random_set(rng, 8, 2);
    FeatureSet gen = real;
    auto res = filter_by_realism(gen, real, 2);
    EXPECT_EQ(res.kept.size(), 8u);
    EXPECT_TRUE(res.removed.empty());
}

TEST(RealismFilter, AgreesWithStraightLineOracle) {
    Rng rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        auto real = random_set(rng, 12, 2);
        auto gen = random_set(rng, 9, 2, 1.4, 0.6);
        auto res = filter_by_realism(gen, real, 3);
        auto radii = brute_radii(real.phi, 3);
        std::vector<int> expect_kept;
        for (int i = 0; i < 9; ++i) {
            double best = 0;
            for (int j = 0; j < 12; ++j) {
                double d = (gen.phi.row(i) - real.phi.row(j)).norm();
                best = d == 0 ? std::numeric_limits<double>::infinity()
                              : std::max(best, radii[static_cast<size_t>(j)] / d);
            }
            if (best >= 1.0) expect_kept.push_back(i);
        }
        EXPECT_EQ(res.kept, expect_kept) << "trial " << trial;
    }
}

TEST(SelectRows, GathersSubsets) {
    Tensor x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor out = select_rows(x, {2, 0});
    EXPECT_EQ(out.shape(), (Shape{2, 2}));
    EXPECT_FLOAT_EQ(out.data()[0], 5);
    EXPECT_FLOAT_EQ(out.data()[3], 2);
    EXPECT_THROW(select_rows(x, {3}), UsageError);
}

TEST(ExtractFeatures, ShapeAndDeterminism) {
    EvalConfig ec;
    ec.in_channels = 1;
    ec.height = 8;
    ec.width = 8;
    ec.num_classes = 2;
    EvalClassifier<float> clf(ec, Rng(15));
    // mark as trained: non-zero head
    for (auto& np : clf.named_params())
        if (np.name == "head.w") np.tensor->data()[0] = 1.f;
    Rng rng(16);
    Tensor imgs = randn(rng, {5, 1, 8, 8});
    // duplicate row 0 into row 4
    std::copy_n(imgs.data().begin(), 64, imgs.data().begin() + 4 * 64);
    auto f = extract_features(clf, imgs, "real", 2);
    EXPECT_EQ(f.rows(), 5);
    EXPECT_EQ(f.dim(), clf.feature_dim());
    EXPECT_LT((f.phi.row(0) - f.phi.row(4)).norm(), 1e-12);
    auto again = extract_features(clf, imgs, "real", 3);  // batching must not matter
    EXPECT_LT((f.phi - again.phi).norm(), 1e-12);
}

TEST(ExtractFeatures, FlagsUntrainedClassifier) {
    EvalConfig ec;
    ec.in_channels = 1;
    ec.height = 8;
    ec.width = 8;
    EvalClassifier<float> clf(ec, Rng(17));
    Rng rng(18);
    Tensor imgs = randn(rng, {2, 1, 8, 8});
    EXPECT_THROW(extract_features(clf, imgs), DataError);
}

TEST(ExtractFeatures, TrainedFeaturesClusterByClass) {
    // vertical vs horizontal stripes; after a short training run the
    // penultimate features must separate classes better than they spread
    // within a class
    EvalConfig ec;
    ec.in_channels = 1;
    ec.height = 8;
    ec.width = 8;
    ec.num_classes = 2;
    EvalClassifier<float> clf(ec, Rng(19));
    Rng drng(20);
    auto fill = [&](int n, Tensor& x, std::vector<int>& y) {
        x = Tensor({n, 1, 8, 8});
        y.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            int cls = i % 2;
            y[static_cast<size_t>(i)] = cls;
            for (int r = 0; r < 8; ++r)
                for (int c = 0; c < 8; ++c) {
                    int ph = cls == 0 ? c : r;
                    double v = (ph % 2 == 0 ? 0.7 : -0.7) + drng.next_normal() * 0.1;
                    x.data()[static_cast<size_t>(i * 64 + r * 8 + c)] =
                        static_cast<float>(std::clamp(v, -1.0, 1.0));
                }
        }
    };
    Tensor x;
    std::vector<int> y;
    fill(128, x, y);
    auto params = clf.named_params();
    set_trainable(params, true);
    TrainConfig tc;
    tc.optimizer = "adam";
    auto opt = make_optimizer<float>(tc, params);
    Rng trng(21);
    for (int step = 0; step < 300; ++step) {
        std::vector<int> idx(16);
        for (auto& i : idx) i = static_cast<int>(trng.next_int(0, 127));
        std::vector<int> yb(16);
        for (size_t i = 0; i < idx.size(); ++i) yb[i] = y[static_cast<size_t>(idx[i])];
        Tensor loss = cross_entropy(clf.logits(select_rows(x, idx)), yb);
        backward(loss);
        opt->step(3e-3);
    }
    set_trainable(params, false);

    Tensor xh;
    std::vector<int> yh;
    fill(64, xh, yh);
    auto f = extract_features(clf, xh);
    Eigen::VectorXd c0 = Eigen::VectorXd::Zero(f.dim()), c1 = c0;
    int n0 = 0, n1 = 0;
    for (int i = 0; i < 64; ++i)
        if (yh[static_cast<size_t>(i)] == 0) {
            c0 += f.phi.row(i).transpose();
            ++n0;
        } else {
            c1 += f.phi.row(i).transpose();
            ++n1;
        }
    c0 /= n0;
    c1 /= n1;
    double inter = (c0 - c1).norm();
    double intra = 0;
    for (int i = 0; i < 64; ++i)
        intra += (f.phi.row(i).transpose() -
                  (yh[static_cast<size_t>(i)] == 0 ? c0 : c1)).norm();
    intra /= 64;
    EXPECT_GT(inter, intra);
}

TEST(FeatureIO, RoundTripIsExact) {
    Rng rng(22);
    auto f = random_set(rng, 7, 3);
    std::string path = "/tmp/tinydpm_feats_test.bin";
    save_features(path, f);
    auto g = load_features(path, "generated");
    EXPECT_EQ(g.rows(), 7);
    EXPECT_EQ(g.dim(), 3);
    EXPECT_EQ(g.source, "generated");
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_EQ(f.phi(i, j), g.phi(i, j));
    std::remove(path.c_str());
}

TEST(FeatureIO, RejectsMissingAndTruncated) {
    EXPECT_THROW(load_features("/tmp/tinydpm_does_not_exist.bin"), DataError);
    std::string path = "/tmp/tinydpm_feats_trunc.bin";
    {
        Rng rng(23);
        save_features(path, random_set(rng, 4, 2));
        std::filesystem::resize_file(path, 24);  // header + half a row
    }
    EXPECT_THROW(load_features(path), DataError);
    std::remove(path.c_str());
}

TEST(MetricsCsv, WritesHeaderAndRows) {
    std::string path = "/tmp/tinydpm_metrics_test.csv";
    write_metrics_csv(path, {{"fid", 12.5, 3, 100, 200, 7}, {"is", 1.8, 3, 100, 200, 7}});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "metric,value,k,n_real,n_gen,seed");
    std::getline(in, line);
    EXPECT_EQ(line, "fid,12.5,3,100,200,7");
    std::getline(in, line);
    EXPECT_EQ(line, "is,1.8,3,100,200,7");
    std::remove(path.c_str());
}
