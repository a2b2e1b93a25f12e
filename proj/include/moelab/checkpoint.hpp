// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "moelab/serialize.hpp"
#include "moelab/train.hpp"

namespace moelab {

/// Checkpoint layout, all integers and reals little-endian:
///   bytes 0..7   magic "MOELABCK"
///   bytes 8..15  uint64 header length H
///   H bytes      JSON header: model config, hyper, step, rng state,
///                running loss, and a tensor manifest (name + shape, in
///                named_params order)
///   payload      raw float64 data: every parameter tensor in manifest
///                order, then the Adam m and v vectors per parameter.
/// Only latent full-precision weights are stored; quantization is a pure
/// function of them and is recomputed on load.
constexpr char kCheckpointMagic[8] = {'M', 'O', 'E', 'L', 'A', 'B', 'C', 'K'};

struct Checkpoint {
    TrainState state;
    TrainHyper hyper;
};

namespace detail {

inline void write_doubles(std::ofstream& out, const std::vector<double>& values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
}

inline void read_doubles(std::ifstream& in, std::vector<double>& values) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw ConfigError("checkpoint payload truncated");
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const TrainState& state,
                            const TrainHyper& hyper) {
    json header;
    header["format"] = "moelab-checkpoint";
    header["version"] = 1;
    header["model"] = state.model.cfg;
    header["hyper"] = hyper;
    header["step"] = state.step;
    header["running_loss"] = state.running_loss;
    header["rng"] = {{"seed", state.data_rng.seed()},
                     {"position", state.data_rng.position()},
                     {"has_cached_normal", state.data_rng.has_cached_normal()},
                     {"cached_normal", state.data_rng.cached_normal()}};
    json manifest = json::array();
    for (const auto& [name, t] : state.model.named_params())
        manifest.push_back({{"name", name}, {"shape", t.shape()}});
    header["tensors"] = std::move(manifest);

    const std::string header_text = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const u64 header_len = header_text.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    for (const auto& [name, t] : state.model.named_params()) detail::write_doubles(out, t.values());
    for (const AdamSlot& slot : state.opt) {
        detail::write_doubles(out, slot.m);
        detail::write_doubles(out, slot.v);
    }
    if (!out) throw ConfigError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ConfigError("not a moelab checkpoint: " + path);
    u64 header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw ConfigError("checkpoint header truncated: " + path);
    const json header = json::parse(header_text);

    Checkpoint ckpt;
    const ModelConfig cfg = header.at("model").get<ModelConfig>();
    ckpt.state = init_train_state(cfg);
    ckpt.state.step = header.at("step").get<i64>();
    ckpt.state.running_loss = header.at("running_loss").get<double>();
    ckpt.hyper = header.at("hyper").get<TrainHyper>();

    const json& rng = header.at("rng");
    ckpt.state.data_rng = Rng(rng.at("seed").get<u64>());
    ckpt.state.data_rng.restore(rng.at("position").get<u64>(),
                                rng.at("has_cached_normal").get<bool>(),
                                rng.at("cached_normal").get<double>());

    auto params = ckpt.state.model.named_params();
    const json& manifest = header.at("tensors");
    if (manifest.size() != params.size())
        throw ConfigError("checkpoint manifest does not match the rebuilt model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (manifest[i].at("name").get<std::string>() != params[i].first)
            throw ConfigError("checkpoint tensor order mismatch at " + params[i].first);
        if (manifest[i].at("shape").get<std::vector<i64>>() != params[i].second.shape())
            throw ConfigError("checkpoint tensor shape mismatch at " + params[i].first);
        detail::read_doubles(in, params[i].second.values());
    }
    for (AdamSlot& slot : ckpt.state.opt) {
        detail::read_doubles(in, slot.m);
        detail::read_doubles(in, slot.v);
    }
    return ckpt;
}

} // namespace moelab
