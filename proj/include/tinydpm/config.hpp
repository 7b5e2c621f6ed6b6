#pragma once

// Campaign configuration: one JSON document with a section per module,
// every field defaulted, unknown keys rejected, flag overrides via
// dotted "section.key=value" strings, and the fully resolved document
// echoed next to each command's outputs.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinydpm/errors.hpp"

namespace tinydpm {

struct CampaignConfig {
    uint64_t seed = 0;

    struct Dataset {
        std::string kind = "shapes";  // shapes | mixture | folder
        int classes = 4;
        int per_class = 500;
        int side = 16;
        std::string path;    // folder only
        int modes = 8;       // mixture only
        int per_mode = 1000;
        double radius = 1.0;
        double sigma = 0.05;
    } dataset;

    struct Schedule {
        int timesteps = 200;
        double beta_start = 1e-4;
        double beta_end = 0.05;
    } schedule;

    struct Denoiser {
        std::string kind = "unet";  // unet | mlp
        std::vector<int> widths = {16, 24, 32};
        int hidden = 96;  // mlp only
        int steps = 3000;
        int batch_size = 32;
        double learning_rate = 1e-3;
        std::string optimizer = "adam";
        double ema_decay = 0.0;
    } denoiser;

    struct Guidance {
        std::vector<int> widths = {16, 24, 32};
        int steps = 2000;
        int batch_size = 32;
        double learning_rate = 3e-3;
        std::string optimizer = "adam";
    } guidance;

    struct Sampler {
        std::string kind = "guided";  // ancestral | guided | ddim
        double scale = 1.0;
        int ddim_steps = 25;
        int target_class = -1;  // -1: cycle through all classes
        int n = 64;
    } sampler;

    struct Metrics {
        int k = 3;
        int batch = 64;
    } metrics;

    struct Experiment {
        std::string mode = "mixing";  // mixing | augmentation
        int replications = 5;
        std::vector<double> real_fractions = {0.1, 0.4, 0.6, 0.8, 1.0};
        std::vector<std::string> architectures = {"arch-a"};
        int epochs = 20;
        double learning_rate = 1e-3;
        int batch_size = 32;
        bool augment = true;
        std::string synthetic = "generator";  // generator | folder
        uint64_t synthetic_seed = 1;
    } experiment;
};

namespace detail {

using Setters = std::map<std::string, std::function<void(const nlohmann::json&)>>;

inline void apply_section(const nlohmann::json& j, const std::string& prefix,
                          const Setters& setters) {
    if (!j.is_object())
        throw DataError("config: section '" + prefix + "' must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto s = setters.find(it.key());
        if (s == setters.end())
            throw DataError("config: unknown key '" + prefix + "." + it.key() + "'");
        try {
            s->second(it.value());
        } catch (const nlohmann::json::exception& e) {
            throw DataError("config: bad value for '" + prefix + "." + it.key() + "': " +
                            e.what());
        }
    }
}

template <class T>
std::function<void(const nlohmann::json&)> into(T& field) {
    return [&field](const nlohmann::json& v) { field = v.get<T>(); };
}

}  // namespace detail

// Defaults overlaid with the document's keys; any unknown section or key
// is a config error.
inline CampaignConfig campaign_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("config: top level must be a JSON object");
    CampaignConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const nlohmann::json& v = it.value();
        if (key == "seed") {
            c.seed = v.get<uint64_t>();
        } else if (key == "dataset") {
            detail::apply_section(v, key,
                                  {{"kind", detail::into(c.dataset.kind)},
                                   {"classes", detail::into(c.dataset.classes)},
                                   {"per_class", detail::into(c.dataset.per_class)},
                                   {"side", detail::into(c.dataset.side)},
                                   {"path", detail::into(c.dataset.path)},
                                   {"modes", detail::into(c.dataset.modes)},
                                   {"per_mode", detail::into(c.dataset.per_mode)},
                                   {"radius", detail::into(c.dataset.radius)},
                                   {"sigma", detail::into(c.dataset.sigma)}});
        } else if (key == "schedule") {
            detail::apply_section(v, key,
                                  {{"timesteps", detail::into(c.schedule.timesteps)},
                                   {"beta_start", detail::into(c.schedule.beta_start)},
                                   {"beta_end", detail::into(c.schedule.beta_end)}});
        } else if (key == "denoiser") {
            detail::apply_section(v, key,
                                  {{"kind", detail::into(c.denoiser.kind)},
                                   {"widths", detail::into(c.denoiser.widths)},
                                   {"hidden", detail::into(c.denoiser.hidden)},
                                   {"steps", detail::into(c.denoiser.steps)},
                                   {"batch_size", detail::into(c.denoiser.batch_size)},
                                   {"learning_rate", detail::into(c.denoiser.learning_rate)},
                                   {"optimizer", detail::into(c.denoiser.optimizer)},
                                   {"ema_decay", detail::into(c.denoiser.ema_decay)}});
        } else if (key == "guidance") {
            detail::apply_section(v, key,
                                  {{"widths", detail::into(c.guidance.widths)},
                                   {"steps", detail::into(c.guidance.steps)},
                                   {"batch_size", detail::into(c.guidance.batch_size)},
                                   {"learning_rate", detail::into(c.guidance.learning_rate)},
                                   {"optimizer", detail::into(c.guidance.optimizer)}});
        } else if (key == "sampler") {
            detail::apply_section(v, key,
                                  {{"kind", detail::into(c.sampler.kind)},
                                   {"scale", detail::into(c.sampler.scale)},
                                   {"ddim_steps", detail::into(c.sampler.ddim_steps)},
                                   {"target_class", detail::into(c.sampler.target_class)},
                                   {"n", detail::into(c.sampler.n)}});
        } else if (key == "metrics") {
            detail::apply_section(v, key,
                                  {{"k", detail::into(c.metrics.k)},
                                   {"batch", detail::into(c.metrics.batch)}});
        } else if (key == "experiment") {
            detail::apply_section(
                v, key,
                {{"mode", detail::into(c.experiment.mode)},
                 {"replications", detail::into(c.experiment.replications)},
                 {"real_fractions", detail::into(c.experiment.real_fractions)},
                 {"architectures", detail::into(c.experiment.architectures)},
                 {"epochs", detail::into(c.experiment.epochs)},
                 {"learning_rate", detail::into(c.experiment.learning_rate)},
                 {"batch_size", detail::into(c.experiment.batch_size)},
                 {"augment", detail::into(c.experiment.augment)},
                 {"synthetic", detail::into(c.experiment.synthetic)},
                 {"synthetic_seed", detail::into(c.experiment.synthetic_seed)}});
        } else {
            throw DataError("config: unknown section '" + key + "'");
        }
    }
    return c;
}

inline nlohmann::json campaign_to_json(const CampaignConfig& c) {
    return {{"seed", c.seed},
            {"dataset",
             {{"kind", c.dataset.kind},
              {"classes", c.dataset.classes},
              {"per_class", c.dataset.per_class},
              {"side", c.dataset.side},
              {"path", c.dataset.path},
              {"modes", c.dataset.modes},
              {"per_mode", c.dataset.per_mode},
              {"radius", c.dataset.radius},
              {"sigma", c.dataset.sigma}}},
            {"schedule",
             {{"timesteps", c.schedule.timesteps},
              {"beta_start", c.schedule.beta_start},
              {"beta_end", c.schedule.beta_end}}},
            {"denoiser",
             {{"kind", c.denoiser.kind},
              {"widths", c.denoiser.widths},
              {"hidden", c.denoiser.hidden},
              {"steps", c.denoiser.steps},
              {"batch_size", c.denoiser.batch_size},
              {"learning_rate", c.denoiser.learning_rate},
              {"optimizer", c.denoiser.optimizer},
              {"ema_decay", c.denoiser.ema_decay}}},
            {"guidance",
             {{"widths", c.guidance.widths},
              {"steps", c.guidance.steps},
              {"batch_size", c.guidance.batch_size},
              {"learning_rate", c.guidance.learning_rate},
              {"optimizer", c.guidance.optimizer}}},
            {"sampler",
             {{"kind", c.sampler.kind},
              {"scale", c.sampler.scale},
              {"ddim_steps", c.sampler.ddim_steps},
              {"target_class", c.sampler.target_class},
              {"n", c.sampler.n}}},
            {"metrics", {{"k", c.metrics.k}, {"batch", c.metrics.batch}}},
            {"experiment",
             {{"mode", c.experiment.mode},
              {"replications", c.experiment.replications},
              {"real_fractions", c.experiment.real_fractions},
              {"architectures", c.experiment.architectures},
              {"epochs", c.experiment.epochs},
              {"learning_rate", c.experiment.learning_rate},
              {"batch_size", c.experiment.batch_size},
              {"augment", c.experiment.augment},
              {"synthetic", c.experiment.synthetic},
              {"synthetic_seed", c.experiment.synthetic_seed}}}};
}

// "section.key=value" (or "seed=7"); the value is parsed as JSON when it
// parses, and taken as a bare string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw UsageError("--set wants section.key=value, got '" + assignment + "'");
    std::string path = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    auto dot = path.find('.');
    if (dot == std::string::npos) {
        doc[path] = value;
    } else {
        std::string section = path.substr(0, dot);
        std::string key = path.substr(dot + 1);
        if (section.empty() || key.empty() || key.find('.') != std::string::npos)
            throw UsageError("--set wants section.key=value, got '" + assignment + "'");
        doc[section][key] = value;
    }
}

// Empty path means "all defaults"; --set overrides apply on top either way.
inline CampaignConfig load_campaign_config(const std::string& path,
                                           const std::vector<std::string>& overrides = {}) {
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw DataError("config: cannot open " + path);
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("config: invalid JSON in " + path + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return campaign_from_json(doc);
}

inline void check_campaign(const CampaignConfig& c) {
    auto one_of = [](const std::string& v, std::initializer_list<const char*> allowed,
                     const std::string& what) {
        for (const char* a : allowed)
            if (v == a) return;
        throw DataError("config: " + what + " '" + v + "' is not supported");
    };
    one_of(c.dataset.kind, {"shapes", "mixture", "folder"}, "dataset.kind");
    one_of(c.denoiser.kind, {"unet", "mlp"}, "denoiser.kind");
    one_of(c.sampler.kind, {"ancestral", "guided", "ddim"}, "sampler.kind");
    one_of(c.experiment.mode, {"mixing", "augmentation"}, "experiment.mode");
    one_of(c.experiment.synthetic, {"generator", "folder"}, "experiment.synthetic");
    if (c.dataset.kind == "folder" && c.dataset.path.empty())
        throw DataError("config: dataset.kind 'folder' needs dataset.path");
}

inline void echo_config(const std::string& out_dir, const CampaignConfig& c) {
    std::ofstream out(out_dir + "/config.json");
    if (!out) throw DataError("config: cannot write echo into " + out_dir);
    out << campaign_to_json(c).dump(2) << '\n';
}

}  // namespace tinydpm
