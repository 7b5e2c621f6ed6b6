#pragma once

// Sample-quality measures over feature sets: Fréchet distance between fitted
// Gaussians, inception-style score from class probabilities, kNN
// precision/recall, and realism-score filtering. Everything here is pure and
// double precision.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tinydpm/classifier.hpp"
#include "tinydpm/errors.hpp"
#include "tinydpm/tensor.hpp"

namespace tinydpm {

struct FeatureSet {
    Eigen::MatrixXd phi;  // N x d, one row per sample
    std::string source = "real";

    int rows() const { return static_cast<int>(phi.rows()); }
    int dim() const { return static_cast<int>(phi.cols()); }

    static FeatureSet from_rows(const std::vector<std::vector<double>>& rows,
                                std::string source = "real") {
        if (rows.empty()) throw UsageError("FeatureSet: no rows");
        FeatureSet f;
        f.source = std::move(source);
        f.phi.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(rows[0].size()));
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows[0].size())
                throw ShapeError("FeatureSet: ragged rows");
            for (size_t j = 0; j < rows[i].size(); ++j)
                f.phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
        if (!f.phi.allFinite()) throw NumericError("FeatureSet: non-finite rows");
        return f;
    }
};

struct GaussianMoments {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
};

inline GaussianMoments fit_moments(const FeatureSet& f) {
    if (f.rows() < 2) throw UsageError("fit_moments: need N >= 2");
    if (!f.phi.allFinite()) throw NumericError("fit_moments: non-finite features");
    GaussianMoments m;
    m.mu = f.phi.colwise().mean();
    Eigen::MatrixXd centered = f.phi.rowwise() - m.mu.transpose();
    m.sigma = centered.transpose() * centered / static_cast<double>(f.rows() - 1);
    return m;
}

namespace detail {

// symmetric PSD square root; eigenvalues clamped at zero
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((s + s.transpose()) / 2.0);
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

// squared Euclidean distance between rows; plain index-order accumulation so
// independent reimplementations reproduce it bit for bit
inline double row_dist2(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b,
                        Eigen::Index j) {
    double acc = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        double d = a(i, c) - b(j, c);
        acc += d * d;
    }
    return acc;
}

inline bool covered(const Eigen::MatrixXd& queries, Eigen::Index qi, const Eigen::MatrixXd& ref,
                    const std::vector<double>& ref_radii) {
    for (Eigen::Index j = 0; j < ref.rows(); ++j) {
        double r = ref_radii[static_cast<size_t>(j)];
        if (row_dist2(queries, qi, ref, j) <= r * r) return true;
    }
    return false;
}

}  // namespace detail

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with the cross term
// computed from the symmetrized product Sa^{1/2} Sb Sa^{1/2}
inline double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
    if (a.mu.size() != b.mu.size()) throw ShapeError("frechet_distance: dimension mismatch");
    if (!a.mu.allFinite() || !a.sigma.allFinite() || !b.mu.allFinite() || !b.sigma.allFinite())
        throw NumericError("frechet_distance: non-finite moments");
    Eigen::MatrixXd ra = detail::psd_sqrt(a.sigma);
    Eigen::MatrixXd inner = ra * b.sigma * ra;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((inner + inner.transpose()) / 2.0);
    double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    double d = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    return std::max(0.0, d);
}

// exp( mean_i KL(p(y|x_i) || mean_i p(y|x_i)) ), rows are class distributions
inline double inception_score(const Eigen::MatrixXd& class_probs) {
    if (class_probs.rows() < 1 || class_probs.cols() < 1)
        throw UsageError("inception_score: empty matrix");
    if ((class_probs.array() < 0).any())
        throw DataError("inception_score: negative probabilities");
    for (Eigen::Index i = 0; i < class_probs.rows(); ++i)
        if (std::abs(class_probs.row(i).sum() - 1.0) > 1e-6)
            throw DataError("inception_score: row " + std::to_string(i) + " does not sum to 1");
    Eigen::VectorXd marginal = class_probs.colwise().mean();
    double kl = 0;
    for (Eigen::Index i = 0; i < class_probs.rows(); ++i)
        for (Eigen::Index j = 0; j < class_probs.cols(); ++j) {
            double p = class_probs(i, j);
            if (p > 0) kl += p * (std::log(p) - std::log(marginal(j)));  // 0 log 0 := 0
        }
    return std::exp(kl / static_cast<double>(class_probs.rows()));
}

// distance to the kth nearest other row (self excluded); kth order statistic,
// so equal distances need no tie-breaking here
inline std::vector<double> knn_radii(const FeatureSet& f, int k = 3) {
    int n = f.rows();
    if (k < 1) throw UsageError("knn_radii: need k >= 1");
    if (n < k + 1) throw UsageError("knn_radii: need N >= k+1");
    std::vector<double> radii(static_cast<size_t>(n));
    std::vector<double> d2(static_cast<size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
        size_t m = 0;
        for (int j = 0; j < n; ++j)
            if (j != i) d2[m++] = detail::row_dist2(f.phi, i, f.phi, j);
        std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
        radii[static_cast<size_t>(i)] = std::sqrt(d2[static_cast<size_t>(k - 1)]);
    }
    return radii;
}

// f(phi, Phi) = 1 iff phi lies in some reference sample's kNN sphere.
// precision: fraction of generated covered by the real manifold; recall:
// fraction of real covered by the generated manifold.
inline std::pair<double, double> precision_recall(const FeatureSet& real, const FeatureSet& gen,
                                                  int k = 3) {
    if (real.dim() != gen.dim()) throw ShapeError("precision_recall: dimension mismatch");
    std::vector<double> rr = knn_radii(real, k), rg = knn_radii(gen, k);
    int covered_g = 0, covered_r = 0;
    for (Eigen::Index i = 0; i < gen.phi.rows(); ++i)
        covered_g += detail::covered(gen.phi, i, real.phi, rr);
    for (Eigen::Index i = 0; i < real.phi.rows(); ++i)
        covered_r += detail::covered(real.phi, i, gen.phi, rg);
    return {covered_g / static_cast<double>(gen.rows()),
            covered_r / static_cast<double>(real.rows())};
}

// R = max over real rows of radius / distance; exact coincidence gives +inf.
// median_restrict limits candidates to rows with radius <= median radius
// (off by default).
inline double realism_score(const Eigen::VectorXd& phi_g, const FeatureSet& real, int k = 3,
                            bool median_restrict = false) {
    if (phi_g.size() != real.dim()) throw ShapeError("realism_score: dimension mismatch");
    std::vector<double> radii = knn_radii(real, k);
    double cutoff = std::numeric_limits<double>::infinity();
    if (median_restrict) {
        std::vector<double> sorted = radii;
        std::sort(sorted.begin(), sorted.end());
        size_t n = sorted.size();
        cutoff = n % 2 == 1 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
    }
    double best = 0;
    for (Eigen::Index j = 0; j < real.phi.rows(); ++j) {
        double r = radii[static_cast<size_t>(j)];
        if (r > cutoff) continue;
        double d2 = 0;
        for (Eigen::Index c = 0; c < phi_g.size(); ++c) {
            double d = phi_g(c) - real.phi(j, c);
            d2 += d * d;
        }
        if (d2 == 0) return std::numeric_limits<double>::infinity();
        best = std::max(best, r / std::sqrt(d2));
    }
    return best;
}

struct RealismFilterResult {
    std::vector<int> kept;                      // indices with R >= 1
    std::vector<std::pair<int, double>> removed;  // (index, R) of rejects
    std::vector<double> scores;                 // R per input row
};

inline RealismFilterResult filter_by_realism(const FeatureSet& gen, const FeatureSet& real,
                                             int k = 3) {
    if (gen.dim() != real.dim()) throw ShapeError("filter_by_realism: dimension mismatch");
    RealismFilterResult out;
    out.scores.reserve(static_cast<size_t>(gen.rows()));
    for (Eigen::Index i = 0; i < gen.phi.rows(); ++i) {
        double r = realism_score(gen.phi.row(i).transpose(), real, k);
        out.scores.push_back(r);
        if (r >= 1.0)
            out.kept.push_back(static_cast<int>(i));
        else
            out.removed.emplace_back(static_cast<int>(i), r);
    }
    return out;
}

// gather the retained sample rows alongside the index filter
template <class T>
TensorT<T> select_rows(const TensorT<T>& x, const std::vector<int>& idx) {
    if (!x.defined() || x.rank() < 1) throw UsageError("select_rows: undefined input");
    Shape s = x.shape();
    int stride = 1;
    for (size_t i = 1; i < s.size(); ++i) stride *= s[i];
    s[0] = static_cast<int>(idx.size());
    TensorT<T> out(s);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= x.dim(0)) throw UsageError("select_rows: index out of range");
        std::copy_n(x.data().begin() + static_cast<size_t>(idx[i]) * static_cast<size_t>(stride),
                    static_cast<size_t>(stride),
                    out.data().begin() + i * static_cast<size_t>(stride));
    }
    return out;
}

// penultimate-layer activations of the trained eval classifier, one row per
// image; batched to bound peak memory
template <class T>
FeatureSet extract_features(EvalClassifier<T>& clf, const TensorT<T>& images,
                            std::string source = "real", int batch = 64) {
    if (!images.defined() || images.rank() != 4)
        throw ShapeError("extract_features: need [n,c,h,w] images");
    bool head_zero = true;
    for (auto& np : clf.named_params())
        if (np.name == "head.w")
            for (auto v : np.tensor->data())
                if (v != 0) head_zero = false;
    if (head_zero) throw DataError("extract_features: classifier looks untrained (zero head)");
    int n = images.dim(0);
    FeatureSet f;
    f.source = std::move(source);
    f.phi.resize(n, clf.feature_dim());
    NoGradGuard ng;
    for (int at = 0; at < n; at += batch) {
        int take = std::min(batch, n - at);
        std::vector<int> idx(static_cast<size_t>(take));
        for (int i = 0; i < take; ++i) idx[static_cast<size_t>(i)] = at + i;
        TensorT<T> feats = clf.features(select_rows(images, idx));
        for (int i = 0; i < take; ++i)
            for (int j = 0; j < clf.feature_dim(); ++j)
                f.phi(at + i, j) = static_cast<double>(
                    feats.data()[static_cast<size_t>(i * clf.feature_dim() + j)]);
    }
    if (!f.phi.allFinite()) throw NumericError("extract_features: non-finite activations");
    return f;
}

// flat binary feature export: uint64 d, uint64 N (little endian), then N*d
// float64 values row-major
inline void save_features(const std::string& path, const FeatureSet& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_features: cannot open " + path);
    uint64_t d = static_cast<uint64_t>(f.dim()), n = static_cast<uint64_t>(f.rows());
    out.write(reinterpret_cast<const char*>(&d), 8);
    out.write(reinterpret_cast<const char*>(&n), 8);
    for (Eigen::Index i = 0; i < f.phi.rows(); ++i)
        for (Eigen::Index j = 0; j < f.phi.cols(); ++j) {
            double v = f.phi(i, j);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    if (!out) throw DataError("save_features: write failed for " + path);
}

inline FeatureSet load_features(const std::string& path, std::string source = "real") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_features: cannot open " + path);
    uint64_t d = 0, n = 0;
    in.read(reinterpret_cast<char*>(&d), 8);
    in.read(reinterpret_cast<char*>(&n), 8);
    if (!in || d == 0 || n == 0 || d > (1u << 20) || n > (1u << 28))
        throw DataError("load_features: bad header in " + path);
    FeatureSet f;
    f.source = std::move(source);
    f.phi.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (uint64_t i = 0; i < n; ++i)
        for (uint64_t j = 0; j < d; ++j) {
            double v;
            in.read(reinterpret_cast<char*>(&v), 8);
            if (!in) throw DataError("load_features: truncated file " + path);
            f.phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    if (!f.phi.allFinite()) throw NumericError("load_features: non-finite features");
    return f;
}

struct MetricRow {
    std::string metric;
    double value;
    int k;
    int n_real;
    int n_gen;
    uint64_t seed;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("write_metrics_csv: cannot open " + path);
    out << "metric,value,k,n_real,n_gen,seed\n";
    for (const auto& r : rows)
        out << r.metric << ',' << r.value << ',' << r.k << ',' << r.n_real << ',' << r.n_gen
            << ',' << r.seed << '\n';
    if (!out) throw DataError("write_metrics_csv: write failed for " + path);
}

}  // namespace tinydpm
