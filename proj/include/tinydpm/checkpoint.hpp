#pragma once

// DFCK checkpoint format and warm-start fine-tuning.
//
// Layout (all integers little-endian):
//   "DFCK" | u32 version | u32 header_len | header (UTF-8 JSON)
//   | u32 tensor_count | tensors
// Each tensor: u32 name_len | name | u32 rank | u32 dims[rank]
//   | u64 byte_count | raw float32 values.
// The JSON header carries model kind, architecture config, schedule
// parameters, class count, training step, and seed.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tinydpm/classifier.hpp"
#include "tinydpm/denoiser.hpp"
#include "tinydpm/schedule.hpp"
#include "tinydpm/training.hpp"

namespace tinydpm {

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError("checkpoint: truncated reading " + what);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

inline uint64_t get_u64(std::istream& in, const std::string& what) {
    uint64_t lo = get_u32(in, what);
    uint64_t hi = get_u32(in, what);
    return lo | hi << 32;
}

}  // namespace detail

struct Dfck {
    uint32_t version = kCheckpointVersion;
    nlohmann::json header;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

inline void save_dfck(const std::string& path, const nlohmann::json& header,
                      const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
    out.write("DFCK", 4);
    detail::put_u32(out, kCheckpointVersion);
    std::string hs = header.dump();
    detail::put_u32(out, static_cast<uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    detail::put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (!t.defined()) throw UsageError("checkpoint: undefined tensor " + name);
        detail::put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i)
            detail::put_u32(out, static_cast<uint32_t>(t.dim(i)));
        detail::put_u64(out, static_cast<uint64_t>(t.numel()) * 4);
        for (float v : t.data()) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_u32(out, bits);
        }
    }
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

inline Dfck load_dfck(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "DFCK", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path + " (not a DFCK file)");
    Dfck ck;
    ck.version = detail::get_u32(in, "version");
    if (ck.version > kCheckpointVersion)
        throw DataError("checkpoint: format version " + std::to_string(ck.version) +
                        " is newer than supported " + std::to_string(kCheckpointVersion));
    uint32_t hlen = detail::get_u32(in, "header length");
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), hlen)) throw DataError("checkpoint: truncated header in " + path);
    try {
        ck.header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: invalid JSON header: " + std::string(e.what()));
    }
    uint32_t count = detail::get_u32(in, "tensor count");
    ck.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nlen = detail::get_u32(in, "name length");
        std::string name(nlen, '\0');
        if (!in.read(name.data(), nlen)) throw DataError("checkpoint: truncated tensor name");
        uint32_t rank = detail::get_u32(in, "rank");
        if (rank > 8) throw DataError("checkpoint: implausible rank for " + name);
        Shape shape(rank);
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(detail::get_u32(in, "dims"));
            numel *= shape[d];
        }
        uint64_t nbytes = detail::get_u64(in, "byte count");
        if (nbytes != static_cast<uint64_t>(numel) * 4)
            throw DataError("checkpoint: byte count mismatch for " + name);
        Tensor t(shape);
        for (int64_t j = 0; j < numel; ++j) {
            uint32_t bits = detail::get_u32(in, "payload of " + name);
            float v;
            std::memcpy(&v, &bits, 4);
            t.data()[static_cast<size_t>(j)] = v;
        }
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

// Copy checkpoint tensors into an existing parameter list; any missing,
// extra, or shape-mismatched names are rejected together in one message.
inline void assign_params(ParamList<float>& params,
                          const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::string diff;
    auto note = [&diff](const std::string& line) {
        if (!diff.empty()) diff += "; ";
        diff += line;
    };
    for (auto& np : params) {
        const Tensor* found = nullptr;
        for (const auto& [name, t] : tensors)
            if (name == np.name) found = &t;
        if (!found) {
            note("missing " + np.name);
            continue;
        }
        if (found->shape() != np.tensor->shape())
            note("shape mismatch " + np.name + " model=" + shape_str(np.tensor->shape()) +
                 " checkpoint=" + shape_str(found->shape()));
    }
    for (const auto& [name, t] : tensors) {
        bool known = false;
        for (auto& np : params)
            if (np.name == name) known = true;
        if (!known) note("unexpected " + name);
    }
    if (!diff.empty()) throw DataError("checkpoint: parameter diff: " + diff);
    for (auto& np : params)
        for (const auto& [name, t] : tensors)
            if (name == np.name) np.tensor->data() = t.data();
}

inline nlohmann::json schedule_to_json(int T, double beta_start, double beta_end) {
    return {{"kind", "linear"}, {"T", T}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

inline NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    if (j.value("kind", "linear") != "linear")
        throw DataError("checkpoint: unknown schedule kind");
    return build_linear_schedule(j.at("T").get<int>(), j.at("beta_start").get<double>(),
                                 j.at("beta_end").get<double>());
}

inline nlohmann::json unet_config_to_json(const UNetConfig& c) {
    return {{"in_channels", c.in_channels}, {"height", c.height},     {"width", c.width},
            {"widths", c.widths},           {"T", c.T}};
}

inline UNetConfig unet_config_from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.T = j.at("T").get<int>();
    return c;
}

inline nlohmann::json mlp_config_to_json(const MlpConfig& c) {
    return {{"dim", c.dim}, {"hidden", c.hidden}, {"T", c.T}};
}

inline MlpConfig mlp_config_from_json(const nlohmann::json& j) {
    MlpConfig c;
    c.dim = j.at("dim").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.T = j.at("T").get<int>();
    return c;
}

inline nlohmann::json guidance_config_to_json(const GuidanceConfig& c) {
    return {{"in_channels", c.in_channels}, {"height", c.height},
            {"width", c.width},             {"num_classes", c.num_classes},
            {"widths", c.widths},           {"T", c.T}};
}

inline GuidanceConfig guidance_config_from_json(const nlohmann::json& j) {
    GuidanceConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.T = j.at("T").get<int>();
    return c;
}

inline nlohmann::json eval_config_to_json(const EvalConfig& c) {
    return {{"arch", c.arch},
            {"in_channels", c.in_channels},
            {"height", c.height},
            {"width", c.width},
            {"num_classes", c.num_classes}};
}

inline EvalConfig eval_config_from_json(const nlohmann::json& j) {
    EvalConfig c;
    c.arch = j.at("arch").get<std::string>();
    c.in_channels = j.at("in_channels").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    return c;
}

namespace detail {

inline nlohmann::json base_header(const std::string& kind, const nlohmann::json& arch,
                                  const nlohmann::json& schedule, int num_classes,
                                  int64_t training_step, uint64_t seed) {
    return {{"model_kind", kind},          {"arch", arch},
            {"schedule", schedule},        {"num_classes", num_classes},
            {"training_step", training_step}, {"seed", seed}};
}

template <class M>
std::vector<std::pair<std::string, Tensor>> snapshot_params(M& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& np : model.named_params()) out.emplace_back(np.name, np.tensor->detach());
    return out;
}

inline void expect_kind(const Dfck& ck, const std::string& kind) {
    std::string got = ck.header.value("model_kind", "");
    if (got != kind)
        throw DataError("checkpoint: model kind '" + got + "', expected '" + kind + "'");
}

}  // namespace detail

inline void save_unet_checkpoint(const std::string& path, UNetDenoiser<float>& m,
                                 const nlohmann::json& schedule, int64_t step, uint64_t seed) {
    save_dfck(path,
              detail::base_header("unet", unet_config_to_json(m.cfg), schedule, 0, step, seed),
              detail::snapshot_params(m));
}

inline std::pair<UNetDenoiser<float>, NoiseSchedule> load_unet_checkpoint(
    const std::string& path, nlohmann::json* header_out = nullptr) {
    Dfck ck = load_dfck(path);
    detail::expect_kind(ck, "unet");
    UNetDenoiser<float> m(unet_config_from_json(ck.header.at("arch")), Rng(0));
    auto params = m.named_params();
    assign_params(params, ck.tensors);
    if (header_out) *header_out = ck.header;
    return {std::move(m), schedule_from_json(ck.header.at("schedule"))};
}

inline void save_mlp_checkpoint(const std::string& path, MlpDenoiser<float>& m,
                                const nlohmann::json& schedule, int64_t step, uint64_t seed) {
    save_dfck(path, detail::base_header("mlp", mlp_config_to_json(m.cfg), schedule, 0, step, seed),
              detail::snapshot_params(m));
}

inline std::pair<MlpDenoiser<float>, NoiseSchedule> load_mlp_checkpoint(
    const std::string& path, nlohmann::json* header_out = nullptr) {
    Dfck ck = load_dfck(path);
    detail::expect_kind(ck, "mlp");
    MlpDenoiser<float> m(mlp_config_from_json(ck.header.at("arch")), Rng(0));
    auto params = m.named_params();
    assign_params(params, ck.tensors);
    if (header_out) *header_out = ck.header;
    return {std::move(m), schedule_from_json(ck.header.at("schedule"))};
}

inline void save_guidance_checkpoint(const std::string& path, GuidanceClassifier<float>& c,
                                     const nlohmann::json& schedule, int64_t step,
                                     uint64_t seed) {
    save_dfck(path,
              detail::base_header("guidance", guidance_config_to_json(c.cfg), schedule,
                                  c.cfg.num_classes, step, seed),
              detail::snapshot_params(c));
}

inline std::pair<GuidanceClassifier<float>, NoiseSchedule> load_guidance_checkpoint(
    const std::string& path, nlohmann::json* header_out = nullptr) {
    Dfck ck = load_dfck(path);
    detail::expect_kind(ck, "guidance");
    GuidanceClassifier<float> c(guidance_config_from_json(ck.header.at("arch")), Rng(0));
    auto params = c.named_params();
    assign_params(params, ck.tensors);
    if (header_out) *header_out = ck.header;
    return {std::move(c), schedule_from_json(ck.header.at("schedule"))};
}

inline void save_eval_checkpoint(const std::string& path, EvalClassifier<float>& c, int64_t step,
                                 uint64_t seed) {
    save_dfck(path,
              detail::base_header("eval", eval_config_to_json(c.cfg), nlohmann::json(),
                                  c.cfg.num_classes, step, seed),
              detail::snapshot_params(c));
}

inline EvalClassifier<float> load_eval_checkpoint(const std::string& path,
                                                  nlohmann::json* header_out = nullptr) {
    Dfck ck = load_dfck(path);
    detail::expect_kind(ck, "eval");
    EvalClassifier<float> c(eval_config_from_json(ck.header.at("arch")), Rng(0));
    auto params = c.named_params();
    assign_params(params, ck.tensors);
    if (header_out) *header_out = ck.header;
    return c;
}

struct FineTuneResult {
    UNetDenoiser<float> model;
    NoiseSchedule sched;
    std::vector<double> trace;
};

// Resume denoiser training from a checkpoint on a (possibly different)
// dataset. cfg.steps == 0 leaves the parameters exactly as loaded.
inline FineTuneResult fine_tune(const std::string& checkpoint_path, const Tensor& data,
                                const TrainConfig& cfg) {
    auto [m, sched] = load_unet_checkpoint(checkpoint_path);
    std::vector<double> trace;
    if (cfg.steps > 0) trace = train_diffusion(m, data, cfg, sched);
    return {std::move(m), std::move(sched), std::move(trace)};
}

}  // namespace tinydpm
