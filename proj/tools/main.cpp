// dpm: command-line front end for the diffusion toolkit.
//
// Subcommands: gen-data, train-diffusion, train-guidance, sample, filter,
// metrics, train-classifier, experiment, report. Every command writes its
// artifacts into --out and exits 0 on success, 2 on usage errors, 3 on
// data errors, 4 on numeric failures.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tinydpm/checkpoint.hpp"
#include "tinydpm/config.hpp"
#include "tinydpm/datasets.hpp"
#include "tinydpm/eval.hpp"
#include "tinydpm/metrics.hpp"
#include "tinydpm/reporting.hpp"
#include "tinydpm/samplers.hpp"
#include "tinydpm/training.hpp"

namespace fs = std::filesystem;
using namespace tinydpm;

namespace {

// One user-facing seed per command; internal consumers get disjoint
// streams derived from it.
uint64_t derive(uint64_t seed, uint64_t purpose) { return Rng(seed).split(purpose).next_u64(); }

constexpr uint64_t kSeedDataset = 1, kSeedTrain = 2, kSeedInit = 3;

void ensure_dir(const std::string& d) { fs::create_directories(d); }

struct ImagesAndNames {
    LabeledImages data;
    std::vector<std::string> names;
};

ImagesAndNames build_images(const CampaignConfig& cfg, uint64_t seed) {
    if (cfg.dataset.kind == "shapes") {
        ShapesSpec s;
        s.classes = cfg.dataset.classes;
        s.per_class = cfg.dataset.per_class;
        s.side = cfg.dataset.side;
        s.seed = seed;
        auto d = gen_shapes_dataset(s);
        std::vector<std::string> names;
        for (int c = 0; c < s.classes; ++c) names.push_back("class_" + std::to_string(c));
        return {std::move(d), std::move(names)};
    }
    if (cfg.dataset.kind == "folder") {
        auto f = load_image_folder(cfg.dataset.path, cfg.dataset.side);
        return {{std::move(f.x), std::move(f.y)}, std::move(f.class_names)};
    }
    throw UsageError("this command needs an image dataset (dataset.kind shapes or folder)");
}

Tensor points_to_tensor(const DTensor& p) {
    Tensor out(p.shape());
    for (size_t i = 0; i < p.data().size(); ++i) out.data()[i] = static_cast<float>(p.data()[i]);
    return out;
}

void write_points_csv(const std::string& path, const Tensor& x, const std::vector<int>* labels) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path);
    out << "x,y,label\n";
    for (int i = 0; i < x.dim(0); ++i)
        out << x.data()[static_cast<size_t>(2 * i)] << ','
            << x.data()[static_cast<size_t>(2 * i + 1)] << ','
            << (labels ? (*labels)[static_cast<size_t>(i)] : 0) << '\n';
}

void write_trace_csv(const std::string& path, const std::vector<double>& trace) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path);
    out << "step,loss\n";
    for (size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
}

void write_indices_csv(const std::string& path, const std::vector<int>& idx,
                       const std::string& column) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path);
    out << column << '\n';
    for (int i : idx) out << i << '\n';
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    Shape s = parts.front().shape();
    int n = 0;
    for (const auto& p : parts) n += p.dim(0);
    s[0] = n;
    Tensor out(s);
    size_t at = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + at);
        at += p.data().size();
    }
    return out;
}

Eigen::MatrixXd class_probs(EvalClassifier<float>& clf, const Tensor& x, int batch) {
    NoGradGuard ng;
    int n = x.dim(0), m = clf.cfg.num_classes;
    Eigen::MatrixXd probs(n, m);
    for (int at = 0; at < n; at += batch) {
        int take = std::min(batch, n - at);
        std::vector<int> idx(static_cast<size_t>(take));
        std::iota(idx.begin(), idx.end(), at);
        Tensor p = softmax_rows(clf.logits(select_rows(x, idx)));
        for (int i = 0; i < take; ++i)
            for (int c = 0; c < m; ++c)
                probs(at + i, c) = p.data()[static_cast<size_t>(i * m + c)];
    }
    return probs;
}

TrainConfig diffusion_train_config(const CampaignConfig& cfg) {
    TrainConfig tc;
    tc.steps = cfg.denoiser.steps;
    tc.batch_size = cfg.denoiser.batch_size;
    tc.learning_rate = cfg.denoiser.learning_rate;
    tc.optimizer = cfg.denoiser.optimizer;
    tc.ema_decay = cfg.denoiser.ema_decay;
    tc.seed = derive(cfg.seed, kSeedTrain);
    return tc;
}

// ---------------------------------------------------------------------------
// shared option bundle

struct Opts {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out;
    uint64_t seed = 0;
    bool seed_given = false;
    bool deterministic = false;

    // sample
    std::string checkpoint, guidance_path, classifier_path, kind;
    int target_class = -2;  // -2: take from config
    double scale = -1;      // <0: take from config
    int n = 0, ddim_steps = 0, cols = 8;

    // filter / metrics
    std::string real_path, gen_path, probs_path;
    int k = 3;

    // train-classifier / report
    std::string arch = "arch-a";
    std::string dir, gen_dir, train_dir;
    int top_n = 3, side = 16;
    bool nn = false;

    // experiment
    std::string synthetic_dir;

    // gen-data
    std::string split = "train";
};

CampaignConfig resolved_config(const Opts& o) {
    CampaignConfig cfg = load_campaign_config(o.config_path, o.sets);
    if (o.seed_given) cfg.seed = o.seed;
    check_campaign(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// handlers

void cmd_gen_data(const Opts& o) {
    CampaignConfig cfg = resolved_config(o);
    ensure_dir(o.out);
    if (cfg.dataset.kind == "mixture") {
        MixtureSpec ms;
        ms.modes = cfg.dataset.modes;
        ms.per_mode = cfg.dataset.per_mode;
        ms.radius = cfg.dataset.radius;
        ms.sigma = cfg.dataset.sigma;
        ms.seed = derive(cfg.seed, kSeedDataset);
        auto pts = gen_gaussian_mixture(ms);
        Tensor x = points_to_tensor(pts.x);
        write_points_csv(o.out + "/points.csv", x, &pts.y);
        echo_config(o.out, cfg);
        std::cout << "wrote " << x.dim(0) << " points to " << o.out << "/points.csv\n";
        return;
    }
    auto [data, names] = build_images(cfg, derive(cfg.seed, kSeedDataset));
    int written = save_dataset_png(o.out + "/images", data, names, o.split);
    export_sample_grid(o.out + "/preview.png", data.x, 0, &data.y);
    echo_config(o.out, cfg);
    std::cout << "wrote " << written << " images to " << o.out << "/images\n";
}

void cmd_train_diffusion(const Opts& o) {
    CampaignConfig cfg = resolved_config(o);
    ensure_dir(o.out);
    NoiseSchedule sched = build_linear_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                                cfg.schedule.beta_end);
    nlohmann::json sj =
        schedule_to_json(cfg.schedule.timesteps, cfg.schedule.beta_start, cfg.schedule.beta_end);
    TrainConfig tc = diffusion_train_config(cfg);
    std::vector<double> trace;
    if (cfg.denoiser.kind == "unet") {
        auto [data, names] = build_images(cfg, derive(cfg.seed, kSeedDataset));
        UNetConfig uc;
        uc.in_channels = data.x.dim(1);
        uc.height = data.x.dim(2);
        uc.width = data.x.dim(3);
        uc.widths = cfg.denoiser.widths;
        uc.T = cfg.schedule.timesteps;
        UNetDenoiser<float> m(uc, Rng(derive(cfg.seed, kSeedInit)));
        if (tc.ema_decay > 0) {
            Ema<float> ema(m.named_params(), tc.ema_decay);
            trace = train_diffusion(m, data.x, tc, sched, &ema);
            auto ps = m.named_params();
            ema.copy_to(ps);  // checkpoint the averaged weights
        } else {
            trace = train_diffusion(m, data.x, tc, sched);
        }
        save_unet_checkpoint(o.out + "/model.dfck", m, sj, tc.steps, cfg.seed);
    } else {
        if (cfg.dataset.kind != "mixture")
            throw UsageError("denoiser.kind 'mlp' needs dataset.kind 'mixture'");
        MixtureSpec ms;
        ms.modes = cfg.dataset.modes;
        ms.per_mode = cfg.dataset.per_mode;
        ms.radius = cfg.dataset.radius;
        ms.sigma = cfg.dataset.sigma;
        ms.seed = derive(cfg.seed, kSeedDataset);
        Tensor x = points_to_tensor(gen_gaussian_mixture(ms).x);
        MlpConfig mc;
        mc.dim = 2;
        mc.hidden = cfg.denoiser.hidden;
        mc.T = cfg.schedule.timesteps;
        MlpDenoiser<float> m(mc, Rng(derive(cfg.seed, kSeedInit)));
        if (tc.ema_decay > 0) {
            Ema<float> ema(m.named_params(), tc.ema_decay);
            trace = train_diffusion(m, x, tc, sched, &ema);
            auto ps = m.named_params();
            ema.copy_to(ps);
        } else {
            trace = train_diffusion(m, x, tc, sched);
        }
        save_mlp_checkpoint(o.out + "/model.dfck", m, sj, tc.steps, cfg.seed);
    }
    write_trace_csv(o.out + "/loss_trace.csv", trace);
    echo_config(o.out, cfg);
    std::cout << "trained " << cfg.denoiser.kind << " for " << tc.steps << " steps, final loss "
              << (trace.empty() ? 0.0 : trace.back()) << "; checkpoint " << o.out
              << "/model.dfck\n";
}

void cmd_train_guidance(const Opts& o) {
    CampaignConfig cfg = resolved_config(o);
    ensure_dir(o.out);
    auto [data, names] = build_images(cfg, derive(cfg.seed, kSeedDataset));
    NoiseSchedule sched = build_linear_schedule(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                                cfg.schedule.beta_end);
    GuidanceConfig gc;
    gc.in_channels = data.x.dim(1);
    gc.height = data.x.dim(2);
    gc.width = data.x.dim(3);
    gc.num_classes = static_cast<int>(names.size());
    gc.widths = cfg.guidance.widths;
    gc.T = cfg.schedule.timesteps;
    GuidanceClassifier<float> c(gc, Rng(derive(cfg.seed, kSeedInit)));
    TrainConfig tc;
    tc.steps = cfg.guidance.steps;
    tc.batch_size = cfg.guidance.batch_size;
    tc.learning_rate = cfg.guidance.learning_rate;
    tc.optimizer = cfg.guidance.optimizer;
    tc.seed = derive(cfg.seed, kSeedTrain);
    auto trace = train_guidance_classifier(c, data.x, data.y, tc, sched);
    save_guidance_checkpoint(o.out + "/guidance.dfck", c,
                             schedule_to_json(cfg.schedule.timesteps, cfg.schedule.beta_start,
                                              cfg.schedule.beta_end),
                             tc.steps, cfg.seed);
    write_trace_csv(o.out + "/loss_trace.csv", trace);
    echo_config(o.out, cfg);
    std::cout << "trained guidance classifier for " << tc.steps << " steps, final loss "
              << (trace.empty() ? 0.0 : trace.back()) << "; checkpoint " << o.out
              << "/guidance.dfck\n";
}

void cmd_train_classifier(const Opts& o) {
    CampaignConfig cfg = resolved_config(o);
    ensure_dir(o.out);
    auto [data, names] = build_images(cfg, derive(cfg.seed, kSeedDataset));
    DatasetSplit split = split_dataset(data.y, cfg.seed);
    Tensor train_x = select_rows(data.x, split.train_pool);
    std::vector<int> train_y;
    for (int i : split.train_pool) train_y.push_back(data.y[static_cast<size_t>(i)]);

    EvalConfig ec;
    ec.arch = o.arch;
    ec.in_channels = data.x.dim(1);
    ec.height = data.x.dim(2);
    ec.width = data.x.dim(3);
    ec.num_classes = static_cast<int>(names.size());
    EvalClassifier<float> clf(ec, Rng(derive(cfg.seed, kSeedInit)));
    EvalTrainConfig tc;
    tc.epochs = cfg.experiment.epochs;
    tc.learning_rate = cfg.experiment.learning_rate;
    tc.batch_size = cfg.experiment.batch_size;
    tc.augment = cfg.experiment.augment;
    tc.seed = derive(cfg.seed, kSeedTrain);
    auto trace = train_eval_classifier(clf, train_x, train_y, tc);
    save_eval_checkpoint(o.out + "/eval.dfck", clf, tc.epochs, cfg.seed);
    write_trace_csv(o.out + "/loss_trace.csv", trace);

    // held-out features for downstream metrics; never computed on training rows
    Tensor test_x = select_rows(data.x, split.test);
    std::vector<int> test_y;
    for (int i : split.test) test_y.push_back(data.y[static_cast<size_t>(i)]);
    save_features(o.out + "/real_feats.bin",
                  extract_features(clf, test_x, "real", cfg.metrics.batch));
    write_indices_csv(o.out + "/test_indices.csv", split.test, "index");
    auto m = classification_metrics(predict_labels(clf, test_x), test_y, ec.num_classes);
    echo_config(o.out, cfg);
    std::cout << "trained " << o.arch << " on " << train_x.dim(0) << " images; held-out top1 "
              << m.top1 << "; checkpoint " << o.out << "/eval.dfck\n";
}

void cmd_sample(const Opts& o) {
    ensure_dir(o.out);
    Dfck peek = load_dfck(o.checkpoint);
    std::string model_kind = peek.header.at("model_kind").get<std::string>();

    SamplerConfig sc;
    sc.kind = o.kind;
    sc.scale = o.scale < 0 ? 1.0 : o.scale;
    sc.ddim_steps = o.ddim_steps > 0 ? o.ddim_steps : 25;
    sc.seed = o.seed;
    int n = o.n > 0 ? o.n : 64;

    nlohmann::json meta = {{"kind", sc.kind},       {"scale", sc.scale},
                           {"n", n},                {"seed", o.seed},
                           {"ddim_steps", sc.ddim_steps}, {"checkpoint", o.checkpoint},
                           {"deterministic", o.deterministic}};

    if (model_kind == "mlp") {
        if (sc.kind == "guided") throw UsageError("guided sampling needs an image model");
        auto [m, sched] = load_mlp_checkpoint(o.checkpoint);
        Samples<float> s = sc.kind == "ddim" ? ddim_sample(m, sched, sc, n)
                                             : ancestral_sample(m, sched, sc, n);
        write_points_csv(o.out + "/points.csv", s.x, nullptr);
        meta["model_evals"] = s.model_evals;
        std::ofstream(o.out + "/sample_run.json") << meta.dump(2) << '\n';
        std::cout << "sampled " << n << " points -> " << o.out << "/points.csv\n";
        return;
    }

    auto [m, sched] = load_unet_checkpoint(o.checkpoint);
    Tensor x;
    std::vector<int> labels;
    bool labeled = false;
    int model_evals = 0;
    if (sc.kind == "guided") {
        if (o.guidance_path.empty()) throw UsageError("guided sampling needs --guidance");
        auto [c, gsched] = load_guidance_checkpoint(o.guidance_path);
        if (gsched.T() != sched.T())
            throw DataError("guidance checkpoint schedule (T=" + std::to_string(gsched.T()) +
                            ") does not match the denoiser (T=" + std::to_string(sched.T()) +
                            ")");
        labeled = true;
        if (o.target_class >= 0) {
            sc.target_class = o.target_class;
            Samples<float> s = guided_sample(m, c, sched, sc, n);
            x = s.x;
            model_evals = s.model_evals;
            labels.assign(static_cast<size_t>(n), o.target_class);
        } else {
            // cycle through every class, one chain per class
            int M = c.cfg.num_classes;
            std::vector<Tensor> parts;
            for (int cls = 0; cls < M; ++cls) {
                int nc = n / M + (cls < n % M ? 1 : 0);
                if (nc == 0) continue;
                SamplerConfig pc = sc;
                pc.target_class = cls;
                pc.seed = derive(o.seed, static_cast<uint64_t>(cls) + 1);
                Samples<float> s = guided_sample(m, c, sched, pc, nc);
                parts.push_back(s.x);
                model_evals += s.model_evals;
                labels.insert(labels.end(), static_cast<size_t>(nc), cls);
            }
            x = concat_rows(parts);
        }
        meta["class"] = o.target_class;
    } else if (sc.kind == "ddim") {
        Samples<float> s = ddim_sample(m, sched, sc, n);
        x = s.x;
        model_evals = s.model_evals;
    } else {
        Samples<float> s = ancestral_sample(m, sched, sc, n);
        x = s.x;
        model_evals = s.model_evals;
    }
    meta["model_evals"] = model_evals;

    export_sample_grid(o.out + "/grid.png", x, o.cols, labeled ? &labels : nullptr);
    LabeledImages out_set{x, labeled ? labels : std::vector<int>(static_cast<size_t>(n), 0)};
    save_dataset_png(o.out + "/samples", out_set, {}, "synthetic");

    if (!o.classifier_path.empty()) {
        EvalClassifier<float> clf = load_eval_checkpoint(o.classifier_path);
        save_features(o.out + "/gen_feats.bin", extract_features(clf, x, "generated", 64));
        FeatureSet probs;
        probs.phi = class_probs(clf, x, 64);
        probs.source = "generated";
        save_features(o.out + "/gen_probs.bin", probs);
    }
    std::ofstream(o.out + "/sample_run.json") << meta.dump(2) << '\n';
    std::cout << "sampled " << x.dim(0) << " images (" << model_evals << " model evals) -> "
              << o.out << "/grid.png\n";
}

void cmd_filter(const Opts& o) {
    ensure_dir(o.out);
    FeatureSet real = load_features(o.real_path, "real");
    FeatureSet gen = load_features(o.gen_path, "generated");
    RealismFilterResult res = filter_by_realism(gen, real, o.k);

    write_indices_csv(o.out + "/kept_indices.csv", res.kept, "index");
    std::ofstream scores(o.out + "/realism_scores.csv");
    if (!scores) throw DataError("cannot open " + o.out + "/realism_scores.csv");
    scores << "index,realism,kept\n";
    for (size_t i = 0; i < res.scores.size(); ++i) {
        bool kept = std::find(res.kept.begin(), res.kept.end(), static_cast<int>(i)) !=
                    res.kept.end();
        scores << i << ',' << res.scores[i] << ',' << (kept ? 1 : 0) << '\n';
    }
    FeatureSet filtered;
    filtered.phi.resize(static_cast<Eigen::Index>(res.kept.size()), gen.phi.cols());
    for (size_t i = 0; i < res.kept.size(); ++i)
        filtered.phi.row(static_cast<Eigen::Index>(i)) = gen.phi.row(res.kept[i]);
    filtered.source = "generated";
    save_features(o.out + "/gen_feats_filtered.bin", filtered);
    std::cout << "kept " << res.kept.size() << " of " << res.scores.size()
              << " generated samples (realism >= 1)\n";
}

void cmd_metrics(const Opts& o) {
    ensure_dir(o.out);
    FeatureSet real = load_features(o.real_path, "real");
    FeatureSet gen = load_features(o.gen_path, "generated");
    double fid = frechet_distance(fit_moments(real), fit_moments(gen));
    double is = std::numeric_limits<double>::quiet_NaN();
    if (!o.probs_path.empty()) is = inception_score(load_features(o.probs_path).phi);
    auto [prc, rec] = precision_recall(real, gen, o.k);

    std::vector<MetricRow> rows = {
        {"fid", fid, o.k, real.rows(), gen.rows(), o.seed},
        {"inception_score", is, o.k, real.rows(), gen.rows(), o.seed},
        {"precision", prc, o.k, real.rows(), gen.rows(), o.seed},
        {"recall", rec, o.k, real.rows(), gen.rows(), o.seed},
    };
    write_metrics_csv(o.out + "/metrics.csv", rows);
    for (const auto& r : rows) std::cout << r.metric << " = " << r.value << '\n';
    if (o.probs_path.empty())
        std::cout << "(inception_score is nan: pass --probs with class probabilities)\n";
}

void cmd_experiment(const Opts& o) {
    CampaignConfig cfg = resolved_config(o);
    ensure_dir(o.out);
    ensure_dir(o.out + "/splits");
    ensure_dir(o.out + "/checkpoints");
    ensure_dir(o.out + "/reports");

    auto [data, names] = build_images(cfg, derive(cfg.seed, kSeedDataset));
    ExperimentData ed;
    ed.real_x = data.x;
    ed.real_y = data.y;

    bool needs_synth = cfg.experiment.mode == "augmentation";
    for (double f : cfg.experiment.real_fractions)
        if (f < 1.0) needs_synth = true;
    if (needs_synth) {
        if (!o.synthetic_dir.empty() || cfg.experiment.synthetic == "folder") {
            if (o.synthetic_dir.empty())
                throw UsageError("experiment.synthetic 'folder' needs --synthetic-dir");
            auto f = load_image_folder(o.synthetic_dir, cfg.dataset.side);
            ed.synth_x = f.x;
            ed.synth_y = f.y;
        } else {
            if (cfg.dataset.kind != "shapes")
                throw DataError("generator synthetic pool needs dataset.kind 'shapes'; "
                                "pass --synthetic-dir instead");
            ShapesSpec s;
            s.classes = cfg.dataset.classes;
            s.per_class = cfg.dataset.per_class;
            s.side = cfg.dataset.side;
            s.seed = cfg.experiment.synthetic_seed;
            auto synth = gen_shapes_dataset(s);
            ed.synth_x = synth.x;
            ed.synth_y = synth.y;
        }
    }

    ExperimentConfig ec;
    ec.split_seed = cfg.seed;
    ec.replications = cfg.experiment.replications;
    ec.real_fractions = cfg.experiment.real_fractions;
    ec.architectures = cfg.experiment.architectures;
    ec.epochs = cfg.experiment.epochs;
    ec.learning_rate = cfg.experiment.learning_rate;
    ec.batch_size = cfg.experiment.batch_size;
    ec.augment = cfg.experiment.augment;
    ec.checkpoint_dir = o.out + "/checkpoints";

    DatasetSplit split = split_dataset(ed.real_y, cfg.seed);
    write_indices_csv(o.out + "/splits/test_indices.csv", split.test, "index");
    write_indices_csv(o.out + "/splits/train_pool.csv", split.train_pool, "index");
    std::ofstream(o.out + "/splits/test_hash.txt") << detail::hash_indices(split.test) << '\n';

    std::vector<RunReport> reports;
    if (cfg.experiment.mode == "mixing") {
        reports = mixing_experiment(ed, ec);
    } else {
        AugmentationResult res = augmentation_experiment(ed, ec);
        reports = res.original;
        reports.insert(reports.end(), res.with_synthetic.begin(), res.with_synthetic.end());
    }
    write_reports_csv(o.out + "/reports/reports.csv", reports);
    write_reports_json(o.out + "/reports/reports.json", reports);
    echo_config(o.out, cfg);
    for (const auto& r : reports)
        std::cout << r.arch << ' ' << r.arm << " f=" << r.real_fraction << " top1 "
                  << r.top1_mean << " +- " << r.top1_std << '\n';
}

void cmd_report(const Opts& o) {
    if (o.nn) {
        ensure_dir(o.dir);
        EvalClassifier<float> clf = load_eval_checkpoint(o.classifier_path);
        auto gen = load_image_folder(o.gen_dir, o.side);
        auto train = load_image_folder(o.train_dir, o.side);
        FeatureSet gf = extract_features(clf, gen.x, "generated");
        FeatureSet tf = extract_features(clf, train.x, "real");
        auto rows = nearest_neighbors(gf, tf, o.top_n);
        write_nn_csv(o.dir + "/nn_report.csv", rows);
        if (!cv::imwrite(o.dir + "/nn_grid.png", nn_grid_image(gen.x, train.x, rows)))
            throw DataError("failed to write " + o.dir + "/nn_grid.png");
        std::cout << "wrote nearest-neighbor report for " << rows.size() << " samples -> "
                  << o.dir << "/nn_report.csv\n";
        return;
    }
    std::ifstream in(o.dir + "/reports/reports.json");
    if (!in) throw DataError("no reports found under " + o.dir + " (expected reports/reports.json)");
    nlohmann::json j = nlohmann::json::parse(in);
    std::ofstream md(o.dir + "/summary.md");
    if (!md) throw DataError("cannot write " + o.dir + "/summary.md");
    md << "| arch | arm | fraction | train size | top1 | precision | recall |\n"
       << "|---|---|---|---|---|---|---|\n";
    std::cout << std::left << std::setw(8) << "arch" << std::setw(16) << "arm" << std::setw(10)
              << "fraction" << std::setw(22) << "top1" << '\n';
    for (const auto& r : j) {
        std::ostringstream t1, pr, rc;
        t1 << std::fixed << std::setprecision(4) << r["top1_mean"].get<double>() << " +- "
           << r["top1_std"].get<double>();
        pr << std::fixed << std::setprecision(4) << r["precision_mean"].get<double>() << " +- "
           << r["precision_std"].get<double>();
        rc << std::fixed << std::setprecision(4) << r["recall_mean"].get<double>() << " +- "
           << r["recall_std"].get<double>();
        md << "| " << r["arch"].get<std::string>() << " | " << r["arm"].get<std::string>()
           << " | " << r["real_fraction"].get<double>() << " | " << r["train_size"].get<int>()
           << " | " << t1.str() << " | " << pr.str() << " | " << rc.str() << " |\n";
        std::cout << std::left << std::setw(8) << r["arch"].get<std::string>() << std::setw(16)
                  << r["arm"].get<std::string>() << std::setw(10)
                  << r["real_fraction"].get<double>() << std::setw(22) << t1.str() << '\n';
    }
    std::cout << "summary written to " << o.dir << "/summary.md\n";
    if (j.size() > 0 && j[0].contains("note") && !j[0]["note"].get<std::string>().empty())
        std::cout << "note: " << j[0]["note"].get<std::string>() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dpm: denoising-diffusion toolkit (training, guided sampling, "
                 "sample-quality metrics, augmentation experiments)"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    Opts o;
    app.add_flag("--deterministic", o.deterministic,
                 "assert deterministic execution (all code paths are single-threaded with "
                 "fixed batch order; recorded in run metadata)");

    auto add_common = [&](CLI::App* sub, bool needs_out = true) {
        sub->add_option("--config", o.config_path, "campaign config JSON (defaults when omitted)");
        sub->add_option("--set", o.sets, "override config keys, e.g. --set dataset.classes=2");
        auto* seed = sub->add_option("--seed", o.seed, "master seed (overrides config)");
        sub->parse_complete_callback([&o, seed] { o.seed_given = seed->count() > 0; });
        if (needs_out) sub->add_option("--out", o.out, "output directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate a dataset (PNG folder or points CSV)");
    add_common(gen);
    gen->add_option("--split", o.split, "split tag written into the manifest");
    gen->callback([&] { cmd_gen_data(o); });

    auto* td = app.add_subcommand("train-diffusion", "train the denoiser and save model.dfck");
    add_common(td);
    td->callback([&] { cmd_train_diffusion(o); });

    auto* tg = app.add_subcommand("train-guidance",
                                  "train the noise-aware guidance classifier");
    add_common(tg);
    tg->callback([&] { cmd_train_guidance(o); });

    auto* tc = app.add_subcommand("train-classifier",
                                  "train the evaluation classifier; exports held-out features");
    add_common(tc);
    tc->add_option("--arch", o.arch, "classifier architecture (arch-a | arch-b)");
    tc->callback([&] { cmd_train_classifier(o); });

    auto* sa = app.add_subcommand("sample", "draw samples from a checkpoint");
    sa->add_option("--checkpoint", o.checkpoint, "denoiser .dfck")->required();
    sa->add_option("--guidance", o.guidance_path, "guidance classifier .dfck (kind guided)");
    sa->add_option("--classifier", o.classifier_path,
                   "evaluation classifier .dfck; exports gen_feats.bin and gen_probs.bin");
    sa->add_option("--kind", o.kind, "ancestral | guided | ddim")->default_val("ancestral");
    sa->add_option("--class", o.target_class, "target class (guided; -1 cycles all classes)")
        ->default_val(-1);
    sa->add_option("--scale", o.scale, "guidance scale s")->default_val(1.0);
    sa->add_option("--n", o.n, "number of samples")->default_val(64);
    sa->add_option("--seed", o.seed, "sampling seed");
    sa->add_option("--ddim-steps", o.ddim_steps, "ddim step count")->default_val(25);
    sa->add_option("--cols", o.cols, "grid columns for unlabeled samples")->default_val(8);
    sa->add_option("--out", o.out, "output directory")->required();
    sa->callback([&] { cmd_sample(o); });

    auto* fi = app.add_subcommand("filter", "drop generated samples with realism < 1");
    fi->add_option("--real", o.real_path, "real feature .bin")->required();
    fi->add_option("--gen", o.gen_path, "generated feature .bin")->required();
    fi->add_option("--k", o.k, "kNN neighborhood size")->default_val(3);
    fi->add_option("--out", o.out, "output directory")->required();
    fi->callback([&] { cmd_filter(o); });

    auto* me = app.add_subcommand("metrics",
                                  "FID, inception score, precision, recall between feature sets");
    me->add_option("--real", o.real_path, "real feature .bin")->required();
    me->add_option("--gen", o.gen_path, "generated feature .bin")->required();
    me->add_option("--probs", o.probs_path, "generated class-probability .bin (for IS)");
    me->add_option("--k", o.k, "kNN neighborhood size")->default_val(3);
    me->add_option("--seed", o.seed, "seed recorded in the CSV");
    me->add_option("--out", o.out, "output directory")->required();
    me->callback([&] { cmd_metrics(o); });

    auto* ex = app.add_subcommand("experiment",
                                  "mixing-ratio or augmentation campaign with frozen test split");
    add_common(ex);
    ex->add_option("--synthetic-dir", o.synthetic_dir,
                   "PNG folder with synthetic images (class subdirectories)");
    ex->callback([&] { cmd_experiment(o); });

    auto* re = app.add_subcommand("report", "summarize campaign reports / nearest neighbors");
    re->add_option("--dir", o.dir, "campaign directory (or output dir with --nn)")->required();
    re->add_flag("--nn", o.nn, "nearest-neighbor report instead of campaign summary");
    re->add_option("--classifier", o.classifier_path, "evaluation classifier .dfck (--nn)");
    re->add_option("--gen-dir", o.gen_dir, "generated PNG folder (--nn)");
    re->add_option("--train-dir", o.train_dir, "training PNG folder (--nn)");
    re->add_option("--top-n", o.top_n, "neighbors per sample")->default_val(3);
    re->add_option("--side", o.side, "image side for folder loading")->default_val(16);
    re->callback([&] { cmd_report(o); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
