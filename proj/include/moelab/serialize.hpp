// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <json.hpp>

#include "moelab/model.hpp"
#include "moelab/train.hpp"

namespace moelab {

using json = nlohmann::json;

inline QuantMode quant_mode_from_string(const std::string& s) {
    if (s == "off") return QuantMode::off;
    if (s == "ternary") return QuantMode::ternary;
    if (s == "binary") return QuantMode::binary;
    throw ConfigError("unknown quant mode '" + s + "' (expected off|ternary|binary)");
}

inline void to_json(json& j, const MoEConfig& cfg) {
    j = json{{"d", cfg.d},
             {"h", cfg.h},
             {"d_expert", cfg.d_expert},
             {"n_experts", cfg.n_experts},
             {"top_k", cfg.top_k},
             {"activation", to_string(cfg.activation)},
             {"use_head_layer", cfg.use_head_layer},
             {"use_merge_layer", cfg.use_merge_layer}};
    if (cfg.shared_expert_dim)
        j["shared_expert_dim"] = *cfg.shared_expert_dim;
    else
        j["shared_expert_dim"] = nullptr;
}

inline void from_json(const json& j, MoEConfig& cfg) {
    cfg.d = j.at("d").get<i64>();
    cfg.h = j.value("h", i64{1});
    cfg.d_expert = j.at("d_expert").get<i64>();
    cfg.n_experts = j.at("n_experts").get<i64>();
    cfg.top_k = j.value("top_k", i64{1});
    cfg.activation = activation_from_string(j.value("activation", std::string("swiglu3mat")));
    cfg.use_head_layer = j.value("use_head_layer", true);
    cfg.use_merge_layer = j.value("use_merge_layer", true);
    cfg.shared_expert_dim.reset();
    if (j.contains("shared_expert_dim") && !j.at("shared_expert_dim").is_null())
        cfg.shared_expert_dim = j.at("shared_expert_dim").get<i64>();
}

inline void to_json(json& j, const ModelConfig& cfg) {
    j = json{{"n_layers", cfg.n_layers},
             {"d", cfg.d},
             {"n_heads_attn", cfg.n_heads_attn},
             {"context_len", cfg.context_len},
             {"vocab", cfg.vocab},
             {"activation", to_string(cfg.activation)},
             {"dense_d_ff", cfg.dense_d_ff},
             {"quant", to_string(cfg.quant)},
             {"balance_coeff", cfg.balance_coeff},
             {"seed", cfg.seed}};
    if (cfg.moe)
        j["moe"] = *cfg.moe;
    else
        j["moe"] = nullptr;
}

inline void from_json(const json& j, ModelConfig& cfg) {
    cfg = ModelConfig{};
    cfg.n_layers = j.value("n_layers", cfg.n_layers);
    cfg.d = j.value("d", cfg.d);
    cfg.n_heads_attn = j.value("n_heads_attn", cfg.n_heads_attn);
    cfg.context_len = j.value("context_len", cfg.context_len);
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.activation = activation_from_string(j.value("activation", std::string("swiglu3mat")));
    cfg.dense_d_ff = j.value("dense_d_ff", cfg.dense_d_ff);
    cfg.quant = quant_mode_from_string(j.value("quant", std::string("off")));
    cfg.balance_coeff = j.value("balance_coeff", cfg.balance_coeff);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.moe.reset();
    if (j.contains("moe") && !j.at("moe").is_null()) {
        MoEConfig moe = j.at("moe").get<MoEConfig>();
        moe.activation = cfg.activation;
        cfg.moe = moe;
    }
}

inline void to_json(json& j, const TrainHyper& h) {
    j = json{{"total_steps", h.total_steps}, {"batch_sequences", h.batch_sequences},
             {"lr", h.lr},                   {"beta1", h.beta1},
             {"beta2", h.beta2},             {"adam_eps", h.adam_eps},
             {"warmup_frac", h.warmup_frac}, {"final_lr_frac", h.final_lr_frac}};
}

inline void from_json(const json& j, TrainHyper& h) {
    h = TrainHyper{};
    h.total_steps = j.value("total_steps", h.total_steps);
    h.batch_sequences = j.value("batch_sequences", h.batch_sequences);
    h.lr = j.value("lr", h.lr);
    h.beta1 = j.value("beta1", h.beta1);
    h.beta2 = j.value("beta2", h.beta2);
    h.adam_eps = j.value("adam_eps", h.adam_eps);
    h.warmup_frac = j.value("warmup_frac", h.warmup_frac);
    h.final_lr_frac = j.value("final_lr_frac", h.final_lr_frac);
}

/// Applies a dotted-path override ("train.lr=0.001") onto a JSON document.
/// The value parses as JSON when it can, otherwise it lands as a string.
inline void apply_override(json& doc, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    json* node = &doc;
    std::size_t begin = 0;
    for (;;) {
        const std::size_t dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
        if (dot == std::string::npos) {
            const json parsed = json::parse(raw, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? json(raw) : parsed;
            return;
        }
        node = &(*node)[key];
        begin = dot + 1;
    }
}

} // namespace moelab
