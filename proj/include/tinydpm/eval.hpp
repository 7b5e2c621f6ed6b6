#pragma once

// Classifier-side evaluation: stratified splitting with a frozen test set,
// Monte Carlo cross-validation, the augmentation and mixing-ratio
// experiments, and one-vs-rest classification metrics.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinydpm/checkpoint.hpp"
#include "tinydpm/classifier.hpp"
#include "tinydpm/datasets.hpp"
#include "tinydpm/metrics.hpp"
#include "tinydpm/training.hpp"

namespace tinydpm {

// ---------------------------------------------------------------------------
// splits

struct DatasetSplit {
    std::vector<int> train_pool;  // 90%, re-split per replication
    std::vector<int> test;        // 10%, frozen for the whole campaign
};

struct TrainValSplit {
    std::vector<int> train;  // 85% of the pool
    std::vector<int> val;    // 15%
};

namespace detail {

inline std::vector<std::vector<int>> by_class(const std::vector<int>& labels) {
    int m = 0;
    for (int y : labels) {
        if (y < 0) throw DataError("split: negative label");
        m = std::max(m, y + 1);
    }
    std::vector<std::vector<int>> cls(static_cast<size_t>(m));
    for (size_t i = 0; i < labels.size(); ++i)
        cls[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
    return cls;
}

// deterministic per-(seed, class) shuffle; held-out count rounds to nearest
// with at least one element on each side
inline void stratified_take(const std::vector<int>& labels, uint64_t seed, double held_fraction,
                            std::vector<int>& kept, std::vector<int>& held) {
    auto cls = by_class(labels);
    for (size_t c = 0; c < cls.size(); ++c) {
        auto idx = cls[c];
        if (idx.empty()) throw DataError("split: class " + std::to_string(c) + " has no images");
        Rng rng = Rng(seed).split(c);
        rng.shuffle(idx.begin(), idx.end());
        int n = static_cast<int>(idx.size());
        int nh = std::clamp(static_cast<int>(std::lround(held_fraction * n)), 1, n - 1);
        for (int i = 0; i < n; ++i) (i < nh ? held : kept).push_back(idx[static_cast<size_t>(i)]);
    }
    std::sort(kept.begin(), kept.end());
    std::sort(held.begin(), held.end());
}

}  // namespace detail

// Frozen 90/10 stratified split. Every class needs >= 10 images so both
// sides of the split are non-degenerate.
inline DatasetSplit split_dataset(const std::vector<int>& labels, uint64_t seed) {
    if (labels.empty()) throw UsageError("split_dataset: empty dataset");
    for (const auto& cls : detail::by_class(labels))
        if (cls.size() < 10)
            throw DataError("split_dataset: every class needs >= 10 images, found " +
                            std::to_string(cls.size()));
    DatasetSplit s;
    detail::stratified_take(labels, seed, 0.10, s.train_pool, s.test);
    return s;
}

// Per-replication 85/15 stratified re-split of the training pool.
inline TrainValSplit resplit_train_val(const std::vector<int>& pool,
                                       const std::vector<int>& labels, uint64_t seed) {
    if (pool.size() < 2) throw UsageError("resplit_train_val: pool too small");
    std::vector<int> pool_labels(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        pool_labels[i] = labels[static_cast<size_t>(pool[static_cast<size_t>(i)])];
    std::vector<int> kept, held;
    detail::stratified_take(pool_labels, seed, 0.15, kept, held);
    TrainValSplit out;
    for (int i : kept) out.train.push_back(pool[static_cast<size_t>(i)]);
    for (int i : held) out.val.push_back(pool[static_cast<size_t>(i)]);
    return out;
}

// ---------------------------------------------------------------------------
// classification metrics (one-vs-rest)

struct ClassificationMetrics {
    double top1 = 0;
    double macro_precision = 0;
    double macro_recall = 0;
    std::vector<double> per_class_precision;
    std::vector<double> per_class_recall;
};

inline ClassificationMetrics classification_metrics(const std::vector<int>& predictions,
                                                    const std::vector<int>& labels,
                                                    int num_classes = 0) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw UsageError("classification_metrics: empty or mismatched inputs");
    int m = num_classes;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || predictions[i] < 0)
            throw DataError("classification_metrics: negative class id");
        m = std::max({m, labels[i] + 1, predictions[i] + 1});
    }
    std::vector<int> tp(static_cast<size_t>(m), 0), fp(tp), fn(tp);
    int correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] == labels[i]) {
            ++correct;
            ++tp[static_cast<size_t>(labels[i])];
        } else {
            ++fp[static_cast<size_t>(predictions[i])];
            ++fn[static_cast<size_t>(labels[i])];
        }
    }
    ClassificationMetrics out;
    out.top1 = correct / static_cast<double>(labels.size());
    for (int c = 0; c < m; ++c) {
        auto cc = static_cast<size_t>(c);
        // empty denominators (class never predicted / never present) score 0
        double prec = tp[cc] + fp[cc] ? tp[cc] / static_cast<double>(tp[cc] + fp[cc]) : 0.0;
        double rec = tp[cc] + fn[cc] ? tp[cc] / static_cast<double>(tp[cc] + fn[cc]) : 0.0;
        out.per_class_precision.push_back(prec);
        out.per_class_recall.push_back(rec);
        out.macro_precision += prec / m;
        out.macro_recall += rec / m;
    }
    return out;
}

// ---------------------------------------------------------------------------
// classifier training

struct EvalTrainConfig {
    int epochs = 20;
    double learning_rate = 1e-3;
    int batch_size = 32;
    double momentum = 0.9;
    uint64_t seed = 0;
    bool augment = true;  // random 360-degree rotation + horizontal flip
};

// Epoch-based SGD-momentum training. Per epoch: one shuffle of the index
// order, then full batches in order; augmentation draws follow each batch
// gather.
template <class T>
std::vector<double> train_eval_classifier(EvalClassifier<T>& clf, const TensorT<T>& x,
                                          const std::vector<int>& y, const EvalTrainConfig& cfg) {
    if (!x.defined() || x.dim(0) < 1) throw UsageError("train_eval_classifier: empty dataset");
    if (static_cast<int>(y.size()) != x.dim(0))
        throw UsageError("train_eval_classifier: labels must match images");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.learning_rate <= 0)
        throw UsageError("train_eval_classifier: bad config");
    for (int v : y)
        if (v < 0 || v >= clf.cfg.num_classes)
            throw DataError("train_eval_classifier: label out of range");
    auto params = clf.named_params();
    set_trainable(params, true);
    TrainConfig oc;
    oc.optimizer = "sgd-momentum";
    oc.momentum = cfg.momentum;
    auto opt = make_optimizer<T>(oc, params);
    Rng rng(cfg.seed);
    int n = x.dim(0);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> trace;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (int at = 0; at < n; at += cfg.batch_size) {
            int take = std::min(cfg.batch_size, n - at);
            std::vector<int> idx(order.begin() + at, order.begin() + at + take);
            TensorT<T> xb = select_rows(x, idx);
            if (cfg.augment) xb = augment_rotate_flip(xb, rng);
            std::vector<int> yb(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) yb[i] = y[static_cast<size_t>(idx[i])];
            TensorT<T> loss = cross_entropy(clf.logits(xb), yb);
            double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw NumericError("train_eval_classifier: non-finite loss in epoch " +
                                   std::to_string(epoch));
            backward(loss);
            opt->step(cfg.learning_rate);
            trace.push_back(lv);
        }
    }
    set_trainable(params, false);
    return trace;
}

template <class T>
std::vector<int> predict_labels(EvalClassifier<T>& clf, const TensorT<T>& x, int batch = 64) {
    NoGradGuard ng;
    int n = x.dim(0), m = clf.cfg.num_classes;
    std::vector<int> preds(static_cast<size_t>(n));
    for (int at = 0; at < n; at += batch) {
        int take = std::min(batch, n - at);
        std::vector<int> idx(static_cast<size_t>(take));
        std::iota(idx.begin(), idx.end(), at);
        TensorT<T> lg = clf.logits(select_rows(x, idx));
        for (int i = 0; i < take; ++i) {
            int best = 0;
            for (int c = 1; c < m; ++c)
                if (lg.data()[static_cast<size_t>(i * m + c)] >
                    lg.data()[static_cast<size_t>(i * m + best)])
                    best = c;
            preds[static_cast<size_t>(at + i)] = best;
        }
    }
    return preds;
}

// ---------------------------------------------------------------------------
// experiments

struct ExperimentConfig {
    uint64_t split_seed = 0;
    int replications = 5;
    std::vector<double> real_fractions = {0.1, 0.4, 0.6, 0.8, 1.0};
    std::vector<std::string> architectures = {"arch-a"};
    int epochs = 20;
    double learning_rate = 1e-3;
    int batch_size = 32;
    bool augment = true;
    std::string checkpoint_dir;  // save the final replication's classifier per arm when set
};

inline void check_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.replications < 1) throw UsageError("ExperimentConfig: replications must be >= 1");
    for (double f : cfg.real_fractions)
        if (f <= 0 || f > 1) throw UsageError("ExperimentConfig: fractions must be in (0,1]");
    if (cfg.architectures.empty()) throw UsageError("ExperimentConfig: no architectures");
}

struct RunReport {
    std::string arch;
    std::string arm;            // "real-only" | "real+synthetic"
    double real_fraction = 1.0;
    int train_size = 0;
    int synthetic_used = 0;
    std::vector<double> top1, precision, recall;  // one entry per replication
    double top1_mean = 0, top1_std = 0;
    double precision_mean = 0, precision_std = 0;
    double recall_mean = 0, recall_std = 0;
    std::string config_hash;
    std::string test_hash;  // frozen-test identifier hash
    double wall_seconds = 0;
    std::string note;
};

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) {
        sd = 0;
        return;
    }
    double acc = 0;
    for (double x : v) acc += (x - mean) * (x - mean);
    sd = std::sqrt(acc / static_cast<double>(v.size() - 1));  // 1/(n-1)
}

inline void finalize_report(RunReport& r) {
    mean_std(r.top1, r.top1_mean, r.top1_std);
    mean_std(r.precision, r.precision_mean, r.precision_std);
    mean_std(r.recall, r.recall_mean, r.recall_std);
}

inline std::string hash_hex(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;  // FNV-1a
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

inline std::string hash_indices(const std::vector<int>& idx) {
    std::ostringstream os;
    for (int i : idx) os << i << ',';
    return hash_hex(os.str());
}

inline std::string hash_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << cfg.split_seed << '|' << cfg.replications << '|' << cfg.epochs << '|'
       << cfg.learning_rate << '|' << cfg.batch_size << '|' << cfg.augment << '|';
    for (double f : cfg.real_fractions) os << f << ',';
    for (const auto& a : cfg.architectures) os << a << ',';
    return hash_hex(os.str());
}

// ids below the synthetic base are real; val/test must never cross it
inline constexpr int kSyntheticIdBase = 1'000'000'000;

inline void assert_no_leakage(const std::vector<int>& val, const std::vector<int>& test) {
    for (int i : val)
        if (i >= kSyntheticIdBase) throw DataError("leakage: synthetic id in validation set");
    for (int i : test)
        if (i >= kSyntheticIdBase) throw DataError("leakage: synthetic id in test set");
}

// per-class stratified subsample of `want` indices from idx (grouped by label)
inline std::vector<int> stratified_subsample(const std::vector<int>& idx,
                                             const std::vector<int>& labels, int want,
                                             uint64_t seed) {
    if (want > static_cast<int>(idx.size()))
        throw UsageError("stratified_subsample: want exceeds available");
    std::vector<int> lab(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) lab[i] = labels[static_cast<size_t>(idx[i])];
    auto cls = by_class(lab);
    int m = static_cast<int>(cls.size());
    std::vector<int> out;
    for (int c = 0; c < m; ++c) {
        auto& members = cls[static_cast<size_t>(c)];
        Rng rng = Rng(seed).split(static_cast<uint64_t>(c));
        rng.shuffle(members.begin(), members.end());
        // proportional share, remainders to the lowest class ids
        int share = want * static_cast<int>(members.size()) / static_cast<int>(idx.size());
        for (int i = 0; i < share && i < static_cast<int>(members.size()); ++i)
            out.push_back(idx[static_cast<size_t>(members[static_cast<size_t>(i)])]);
    }
    // top up any rounding shortfall deterministically
    size_t cursor = 0;
    while (static_cast<int>(out.size()) < want && cursor < idx.size()) {
        int cand = idx[cursor++];
        if (std::find(out.begin(), out.end(), cand) == out.end()) out.push_back(cand);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

struct ExperimentData {
    Tensor real_x;
    std::vector<int> real_y;
    Tensor synth_x;  // may be undefined when a campaign has no synthetic pool
    std::vector<int> synth_y;
};

namespace detail {

template <class TrainSetBuilder>
RunReport run_arm(const ExperimentData& data, const ExperimentConfig& cfg,
                  const std::string& arch, const std::string& arm_name,
                  const std::string& ckpt_tag, const DatasetSplit& split,
                  TrainSetBuilder&& build_train) {
    auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.arch = arch;
    report.arm = arm_name;
    report.config_hash = hash_config(cfg);
    report.test_hash = hash_indices(split.test);

    int num_classes = 0;
    for (int y : data.real_y) num_classes = std::max(num_classes, y + 1);

    Tensor test_x = select_rows(data.real_x, split.test);
    std::vector<int> test_y(split.test.size());
    for (size_t i = 0; i < split.test.size(); ++i)
        test_y[i] = data.real_y[static_cast<size_t>(split.test[i])];

    for (int rep = 0; rep < cfg.replications; ++rep) {
        uint64_t rep_seed = Rng(cfg.split_seed).split(static_cast<uint64_t>(rep + 1)).next_u64();
        TrainValSplit tv = resplit_train_val(split.train_pool, data.real_y, rep_seed);
        assert_no_leakage(tv.val, split.test);

        Tensor train_x;
        std::vector<int> train_y;
        build_train(rep, rep_seed, tv, train_x, train_y, report);

        EvalConfig ec;
        ec.arch = arch;
        ec.in_channels = data.real_x.dim(1);
        ec.height = data.real_x.dim(2);
        ec.width = data.real_x.dim(3);
        ec.num_classes = num_classes;
        EvalClassifier<float> clf(ec, Rng(rep_seed ^ 0xabcdef));
        EvalTrainConfig tc;
        tc.epochs = cfg.epochs;
        tc.learning_rate = cfg.learning_rate;
        tc.batch_size = cfg.batch_size;
        tc.seed = rep_seed ^ 0x5eed;
        tc.augment = cfg.augment;
        train_eval_classifier(clf, train_x, train_y, tc);
        if (!cfg.checkpoint_dir.empty() && rep == cfg.replications - 1)
            save_eval_checkpoint(cfg.checkpoint_dir + "/" + ckpt_tag + ".dfck", clf, 0, rep_seed);

        auto m = classification_metrics(predict_labels(clf, test_x), test_y, num_classes);
        report.top1.push_back(m.top1);
        report.precision.push_back(m.macro_precision);
        report.recall.push_back(m.macro_recall);
    }
    finalize_report(report);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace detail

// Paired arms per architecture: trained on real data only, and on real plus
// the (already realism-filtered) synthetic pool. Seeds depend only on
// (split_seed, replication), so the real-only arm is unchanged by the
// presence of the synthetic arm.
struct AugmentationResult {
    std::vector<RunReport> original;       // real-only, one per architecture
    std::vector<RunReport> with_synthetic;  // real+synthetic
};

inline AugmentationResult augmentation_experiment(const ExperimentData& data,
                                                  const ExperimentConfig& cfg) {
    check_experiment_config(cfg);
    if (!data.synth_x.defined() || data.synth_x.dim(0) < 1)
        throw UsageError("augmentation_experiment: synthetic pool required for the "
                         "with-augmentation arm");
    DatasetSplit split = split_dataset(data.real_y, cfg.split_seed);
    AugmentationResult out;
    for (const auto& arch : cfg.architectures) {
        out.original.push_back(detail::run_arm(
            data, cfg, arch, "real-only", arch + "_real-only", split,
            [&](int, uint64_t, const TrainValSplit& tv, Tensor& x, std::vector<int>& y,
                RunReport& r) {
                x = select_rows(data.real_x, tv.train);
                y.clear();
                for (int i : tv.train) y.push_back(data.real_y[static_cast<size_t>(i)]);
                r.train_size = static_cast<int>(tv.train.size());
            }));
        out.with_synthetic.push_back(detail::run_arm(
            data, cfg, arch, "real+synthetic", arch + "_real-synth", split,
            [&](int, uint64_t, const TrainValSplit& tv, Tensor& x, std::vector<int>& y,
                RunReport& r) {
                Tensor real_part = select_rows(data.real_x, tv.train);
                Shape s = real_part.shape();
                int nr = s[0], ns = data.synth_x.dim(0);
                s[0] = nr + ns;
                x = Tensor(s);
                std::copy(real_part.data().begin(), real_part.data().end(), x.data().begin());
                std::copy(data.synth_x.data().begin(), data.synth_x.data().end(),
                          x.data().begin() + real_part.data().size());
                y.clear();
                for (int i : tv.train) y.push_back(data.real_y[static_cast<size_t>(i)]);
                y.insert(y.end(), data.synth_y.begin(), data.synth_y.end());
                r.train_size = nr + ns;
                r.synthetic_used = ns;
            }));
    }
    return out;
}

// Mixing-ratio protocol: training-set size held constant across fractions;
// the real part is a stratified subsample and the remainder is backfilled
// from the synthetic pool.
inline std::vector<RunReport> mixing_experiment(const ExperimentData& data,
                                                const ExperimentConfig& cfg) {
    check_experiment_config(cfg);
    DatasetSplit split = split_dataset(data.real_y, cfg.split_seed);
    std::vector<RunReport> out;
    for (const auto& arch : cfg.architectures) {
        for (double fraction : cfg.real_fractions) {
            std::ostringstream tag;
            tag << arch << "_mix" << fraction;
            RunReport r = detail::run_arm(
                data, cfg, arch, "mixing", tag.str(), split,
                [&](int, uint64_t rep_seed, const TrainValSplit& tv, Tensor& x,
                    std::vector<int>& y, RunReport& rr) {
                    int total = static_cast<int>(tv.train.size());
                    int n_real = std::max(1, static_cast<int>(std::lround(fraction * total)));
                    int n_synth = total - n_real;
                    if (n_synth > 0 &&
                        (!data.synth_x.defined() || data.synth_x.dim(0) < n_synth))
                        throw DataError("mixing_experiment: synthetic pool too small to "
                                        "backfill fraction " + std::to_string(fraction));
                    std::vector<int> real_idx = detail::stratified_subsample(
                        tv.train, data.real_y, n_real, rep_seed ^ 0xf00d);
                    std::vector<int> synth_idx;
                    if (n_synth > 0) {
                        std::vector<int> all_synth(static_cast<size_t>(data.synth_x.dim(0)));
                        std::iota(all_synth.begin(), all_synth.end(), 0);
                        synth_idx = detail::stratified_subsample(all_synth, data.synth_y,
                                                                 n_synth, rep_seed ^ 0xbeef);
                    }
                    Shape s = data.real_x.shape();
                    s[0] = total;
                    x = Tensor(s);
                    Tensor rx = select_rows(data.real_x, real_idx);
                    std::copy(rx.data().begin(), rx.data().end(), x.data().begin());
                    y.clear();
                    for (int i : real_idx) y.push_back(data.real_y[static_cast<size_t>(i)]);
                    if (n_synth > 0) {
                        Tensor sx = select_rows(data.synth_x, synth_idx);
                        std::copy(sx.data().begin(), sx.data().end(),
                                  x.data().begin() + rx.data().size());
                        for (int i : synth_idx)
                            y.push_back(data.synth_y[static_cast<size_t>(i)]);
                    }
                    rr.train_size = total;
                    rr.synthetic_used = n_synth;
                });
            r.real_fraction = fraction;
            r.note = "training size held constant across fractions";
            out.push_back(std::move(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// report persistence

inline void write_reports_csv(const std::string& path, const std::vector<RunReport>& reports) {
    std::ofstream out(path);
    if (!out) throw DataError("write_reports_csv: cannot open " + path);
    out << "arch,arm,real_fraction,train_size,synthetic_used,replications,"
           "top1_mean,top1_std,precision_mean,precision_std,recall_mean,recall_std,"
           "config_hash,test_hash,wall_seconds\n";
    for (const auto& r : reports)
        out << r.arch << ',' << r.arm << ',' << r.real_fraction << ',' << r.train_size << ','
            << r.synthetic_used << ',' << r.top1.size() << ',' << r.top1_mean << ','
            << r.top1_std << ',' << r.precision_mean << ',' << r.precision_std << ','
            << r.recall_mean << ',' << r.recall_std << ',' << r.config_hash << ','
            << r.test_hash << ',' << r.wall_seconds << '\n';
    if (!out) throw DataError("write_reports_csv: write failed for " + path);
}

inline nlohmann::json report_to_json(const RunReport& r) {
    return {{"arch", r.arch},
            {"arm", r.arm},
            {"real_fraction", r.real_fraction},
            {"train_size", r.train_size},
            {"synthetic_used", r.synthetic_used},
            {"top1", r.top1},
            {"precision", r.precision},
            {"recall", r.recall},
            {"top1_mean", r.top1_mean},
            {"top1_std", r.top1_std},
            {"precision_mean", r.precision_mean},
            {"precision_std", r.precision_std},
            {"recall_mean", r.recall_mean},
            {"recall_std", r.recall_std},
            {"config_hash", r.config_hash},
            {"test_hash", r.test_hash},
            {"wall_seconds", r.wall_seconds},
            {"note", r.note}};
}

inline void write_reports_json(const std::string& path, const std::vector<RunReport>& reports) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(report_to_json(r));
    std::ofstream out(path);
    if (!out) throw DataError("write_reports_json: cannot open " + path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write_reports_json: write failed for " + path);
}

}  // namespace tinydpm
