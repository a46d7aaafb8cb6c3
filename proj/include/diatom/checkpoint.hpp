#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diatom/errors.hpp"
#include "diatom/model.hpp"

namespace diatom {

// Single-file archive: magic, version, config+vocabulary JSON, then every
// parameter tensor as a named, shape-tagged float32 array (row-major,
// little-endian). Loading validates all shapes against the config.

inline constexpr char kCheckpointMagic[4] = {'D', 'T', 'M', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw DataError("checkpoint truncated while reading " + what);
    return value;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& model,
                            const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);

    json meta;
    meta["config"] = model.cfg;
    meta["vocabulary"] = vocab.tokens;
    const std::string meta_str = meta.dump();

    out.write(kCheckpointMagic, 4);
    detail::write_pod(out, kCheckpointVersion);
    detail::write_pod(out, static_cast<std::uint64_t>(meta_str.size()));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    const auto tensors = model.params.registry();
    detail::write_pod(out, static_cast<std::uint32_t>(tensors.size()));
    std::vector<float> buf;
    for (const Tensor* t : tensors) {
        detail::write_pod(out, static_cast<std::uint16_t>(t->name.size()));
        out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
        detail::write_pod(out, static_cast<std::uint32_t>(t->v.rows()));
        detail::write_pod(out, static_cast<std::uint32_t>(t->v.cols()));
        buf.resize(static_cast<std::size_t>(t->v.size()));
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < t->v.rows(); ++i)
            for (Eigen::Index j = 0; j < t->v.cols(); ++j)
                buf[k++] = static_cast<float>(t->v(i, j));
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw DataError("failed while writing " + path);
}

struct LoadedCheckpoint {
    ModelConfig config;
    Vocabulary vocab;
    Model model;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError(path + ": not a checkpoint file");
    const auto version = detail::read_pod<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));

    const auto meta_len = detail::read_pod<std::uint64_t>(in, "metadata length");
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw DataError(path + ": truncated metadata");

    json meta = json::parse(meta_str, nullptr, false);
    if (meta.is_discarded()) throw DataError(path + ": corrupt metadata JSON");

    ModelConfig cfg = meta.at("config").get<ModelConfig>();
    Vocabulary vocab;
    vocab.tokens = meta.at("vocabulary").get<std::vector<std::string>>();
    for (int i = 0; i < static_cast<int>(vocab.tokens.size()); ++i)
        vocab.index.emplace(vocab.tokens[i], i);
    if (vocab.size() != cfg.V)
        throw ConfigError(path + ": vocabulary size does not match config V");

    // Allocate a model with the right shapes, then overwrite tensor values.
    Model model(cfg, /*seed=*/0);
    auto tensors = model.params.registry();

    const auto count = detail::read_pod<std::uint32_t>(in, "tensor count");
    if (count != tensors.size())
        throw ConfigError(path + ": tensor count mismatch (" + std::to_string(count) + " vs " +
                          std::to_string(tensors.size()) + ")");

    std::vector<float> buf;
    for (std::uint32_t idx = 0; idx < count; ++idx) {
        const auto name_len = detail::read_pod<std::uint16_t>(in, "tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = detail::read_pod<std::uint32_t>(in, "tensor rows");
        const auto cols = detail::read_pod<std::uint32_t>(in, "tensor cols");

        Tensor* target = nullptr;
        for (Tensor* t : tensors)
            if (t->name == name) target = t;
        if (!target) throw ConfigError(path + ": unknown tensor '" + name + "'");
        if (static_cast<Eigen::Index>(rows) != target->v.rows() ||
            static_cast<Eigen::Index>(cols) != target->v.cols())
            throw ConfigError(path + ": shape mismatch for tensor '" + name + "'");

        buf.resize(static_cast<std::size_t>(rows) * cols);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw DataError(path + ": truncated tensor '" + name + "'");
        std::size_t k = 0;
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j)
                target->v(i, j) = static_cast<double>(buf[k++]);
    }
    return {cfg, std::move(vocab), std::move(model)};
}

}  // namespace diatom
