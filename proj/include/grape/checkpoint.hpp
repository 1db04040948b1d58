#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "grape/errors.hpp"
#include "grape/model.hpp"

namespace grape {

// Versioned binary checkpoint: header (magic, version, model config, P
// variant, bin table), then each parameter tagged by name and shape with a
// row-major float64 payload. Little-endian, bit-exact round trip.
namespace ckpt {

constexpr std::uint32_t kMagic = 0x47525045;  // "GRPE"
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(os, bits);
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IngestError("checkpoint truncated");
    return v;
}
inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IngestError("checkpoint truncated");
    return v;
}
inline double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}
inline std::string get_str(std::istream& is) {
    const std::uint32_t len = get_u32(is);
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) throw IngestError("checkpoint truncated");
    return s;
}

}  // namespace ckpt

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg, const BinTable& bins, const ParameterSet& params,
                            std::uint64_t seed = 0, int epoch = 0) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IngestError("cannot write checkpoint: " + path);
    ckpt::put_u32(os, ckpt::kMagic);
    ckpt::put_u32(os, ckpt::kVersion);
    ckpt::put_u64(os, seed);
    ckpt::put_u32(os, static_cast<std::uint32_t>(epoch));
    ckpt::put_u32(os, static_cast<std::uint32_t>(cfg.embedding_dim));
    ckpt::put_u32(os, static_cast<std::uint32_t>(cfg.heads));
    ckpt::put_u32(os, static_cast<std::uint32_t>(cfg.layers));
    ckpt::put_f64(os, cfg.delta);
    ckpt::put_u32(os, static_cast<std::uint32_t>(cfg.max_seq_len));
    ckpt::put_u32(os, static_cast<std::uint32_t>(cfg.indicator_count));
    ckpt::put_u32(os, cfg.attention_scaling ? 1 : 0);
    ckpt::put_u32(os, static_cast<std::uint32_t>(cfg.ffn_hidden));
    ckpt::put_u32(os, cfg.per_pair_projections ? 1 : 0);
    ckpt::put_u32(os, cfg.use_residual ? 1 : 0);
    ckpt::put_u32(os, static_cast<std::uint32_t>(params.p_variant));
    ckpt::put_f64(os, bins.delta);
    ckpt::put_u32(os, static_cast<std::uint32_t>(bins.max_bin.size()));
    for (const int b : bins.max_bin) ckpt::put_u32(os, static_cast<std::uint32_t>(b));
    ckpt::put_u32(os, static_cast<std::uint32_t>(bins.rows));

    const auto named = params.named_params();
    ckpt::put_u32(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        ckpt::put_str(os, name);
        ckpt::put_u32(os, static_cast<std::uint32_t>(t.rows()));
        ckpt::put_u32(os, static_cast<std::uint32_t>(t.cols()));
        for (const double v : t.values()) ckpt::put_f64(os, v);
    }
    if (!os) throw IngestError("short write while saving checkpoint: " + path);
}

struct LoadedCheckpoint {
    ModelConfig config;
    BinTable bins;
    PVariant p_variant = PVariant::PGrape;
    std::uint64_t seed = 0;
    int epoch = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& find(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return t;
        }
        throw IngestError("checkpoint missing parameter '" + name + "'");
    }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestError("cannot open checkpoint: " + path);
    if (ckpt::get_u32(is) != ckpt::kMagic) throw IngestError("not a checkpoint file: " + path);
    const std::uint32_t version = ckpt::get_u32(is);
    if (version != ckpt::kVersion) throw IngestError("unsupported checkpoint version " + std::to_string(version));
    LoadedCheckpoint out;
    out.seed = ckpt::get_u64(is);
    out.epoch = static_cast<int>(ckpt::get_u32(is));
    out.config.embedding_dim = static_cast<int>(ckpt::get_u32(is));
    out.config.heads = static_cast<int>(ckpt::get_u32(is));
    out.config.layers = static_cast<int>(ckpt::get_u32(is));
    out.config.delta = ckpt::get_f64(is);
    out.config.max_seq_len = static_cast<int>(ckpt::get_u32(is));
    out.config.indicator_count = static_cast<int>(ckpt::get_u32(is));
    out.config.attention_scaling = ckpt::get_u32(is) != 0;
    out.config.ffn_hidden = static_cast<int>(ckpt::get_u32(is));
    out.config.per_pair_projections = ckpt::get_u32(is) != 0;
    out.config.use_residual = ckpt::get_u32(is) != 0;
    out.p_variant = static_cast<PVariant>(ckpt::get_u32(is));
    out.bins.delta = ckpt::get_f64(is);
    const std::uint32_t nb = ckpt::get_u32(is);
    out.bins.max_bin.resize(nb);
    for (std::uint32_t j = 0; j < nb; ++j) out.bins.max_bin[j] = static_cast<int>(ckpt::get_u32(is));
    out.bins.rows = static_cast<int>(ckpt::get_u32(is));

    const std::uint32_t count = ckpt::get_u32(is);
    out.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = ckpt::get_str(is);
        const int rows = static_cast<int>(ckpt::get_u32(is));
        const int cols = static_cast<int>(ckpt::get_u32(is));
        Tensor t(rows, cols);
        for (auto& v : t.values()) v = ckpt::get_f64(is);
        out.tensors.emplace_back(name, std::move(t));
    }
    return out;
}

// Rebuilds a model from a checkpoint against the corpus it was trained on.
inline GrapeModel restore_model(const LoadedCheckpoint& loaded, const Corpus& corpus) {
    const ModelConfig& cfg = loaded.config;
    cfg.validate();
    if (cfg.indicator_count != corpus.n()) {
        throw IngestError("checkpoint indicator count does not match the corpus");
    }
    Rng rng(0);
    ParameterSet params = init_parameters(cfg, corpus.item_count, loaded.bins.rows, corpus, loaded.p_variant, rng);
    for (auto& [name, t] : params.named_params()) {
        const Tensor& src = loaded.find(name);
        if (src.rows() != t.rows() || src.cols() != t.cols()) {
            throw IngestError("checkpoint parameter '" + name + "' has shape " + src.shape_str() + ", expected " + t.shape_str());
        }
        Tensor dst = t;  // shared handle into params
        dst.values() = src.values();
    }
    return GrapeModel(cfg, loaded.bins, std::move(params), corpus);
}

}  // namespace grape
