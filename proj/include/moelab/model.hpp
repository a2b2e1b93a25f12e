// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moelab/costs.hpp"
#include "moelab/layers.hpp"
#include "moelab/quant.hpp"
#include "moelab/rng.hpp"

namespace moelab {

/// Byte-level decoder-only transformer. When a MoE plan is present it
/// replaces the FFN of every second block (blocks 2, 4, ... 1-indexed);
/// odd blocks keep a dense FFN of width dense_d_ff.
struct ModelConfig {
    i64 n_layers = 2;
    i64 d = 48;
    i64 n_heads_attn = 4;
    i64 context_len = 64;
    i64 vocab = 256; // raw bytes
    Activation activation = Activation::swiglu3mat;
    i64 dense_d_ff = 128;
    std::optional<MoEConfig> moe;
    QuantMode quant = QuantMode::off;
    double balance_coeff = 0.01;
    u64 seed = 1;

    bool block_is_moe(i64 block_index) const { // 0-indexed
        return moe.has_value() && (block_index + 1) % 2 == 0;
    }

    void validate() const {
        if (n_layers <= 0 || d <= 0 || context_len <= 0 || dense_d_ff <= 0)
            throw ConfigError("model config: dimensions must be positive");
        if (vocab != 256) throw ConfigError("model config: vocab is fixed at 256 bytes");
        if (n_heads_attn <= 0 || d % n_heads_attn != 0)
            throw ConfigError("model config: n_heads_attn=" + std::to_string(n_heads_attn) +
                              " does not divide d=" + std::to_string(d));
        if (moe) {
            MoEConfig m = *moe;
            m.activation = activation;
            m.validate();
            if (m.d != d)
                throw ConfigError("model config: moe.d=" + std::to_string(m.d) +
                                  " differs from model d=" + std::to_string(d));
        }
    }
};

struct AttentionParams {
    Tensor wq, wk, wv, wo; // all d×d
};

struct TransformerBlock {
    AttentionParams attn;
    bool is_moe = false;
    MHMoEParams moe;  // populated when is_moe
    ExpertParams ffn; // populated otherwise
};

struct Model {
    ModelConfig cfg;
    Tensor tok_embedding; // vocab×d, full precision always
    Tensor pos_embedding; // context_len×d, full precision always
    Tensor output_proj;   // d×vocab, full precision always
    std::vector<TransformerBlock> blocks;

    /// Every trainable tensor in a fixed, documented order. Checkpoints and
    /// the optimizer rely on this order being stable.
    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("tok_embedding", tok_embedding);
        out.emplace_back("pos_embedding", pos_embedding);
        out.emplace_back("output_proj", output_proj);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::string prefix = "block" + std::to_string(b) + ".";
            const TransformerBlock& blk = blocks[b];
            out.emplace_back(prefix + "attn.wq", blk.attn.wq);
            out.emplace_back(prefix + "attn.wk", blk.attn.wk);
            out.emplace_back(prefix + "attn.wv", blk.attn.wv);
            out.emplace_back(prefix + "attn.wo", blk.attn.wo);
            if (blk.is_moe) {
                if (blk.moe.w_head.defined()) out.emplace_back(prefix + "moe.w_head", blk.moe.w_head);
                if (blk.moe.w_merge.defined())
                    out.emplace_back(prefix + "moe.w_merge", blk.moe.w_merge);
                out.emplace_back(prefix + "moe.gate", blk.moe.gate);
                for (std::size_t e = 0; e < blk.moe.experts.size(); ++e) {
                    const std::string ep = prefix + "moe.expert" + std::to_string(e) + ".";
                    out.emplace_back(ep + "w1", blk.moe.experts[e].w1);
                    out.emplace_back(ep + "w2", blk.moe.experts[e].w2);
                    if (blk.moe.experts[e].w3) out.emplace_back(ep + "w3", *blk.moe.experts[e].w3);
                }
                if (blk.moe.shared) {
                    out.emplace_back(prefix + "moe.shared.w1", blk.moe.shared->w1);
                    out.emplace_back(prefix + "moe.shared.w2", blk.moe.shared->w2);
                    if (blk.moe.shared->w3)
                        out.emplace_back(prefix + "moe.shared.w3", *blk.moe.shared->w3);
                }
            } else {
                out.emplace_back(prefix + "ffn.w1", blk.ffn.w1);
                out.emplace_back(prefix + "ffn.w2", blk.ffn.w2);
                if (blk.ffn.w3) out.emplace_back(prefix + "ffn.w3", *blk.ffn.w3);
            }
        }
        return out;
    }

    i64 param_count() const {
        i64 n = 0;
        for (const auto& [name, t] : named_params()) n += static_cast<i64>(t.numel());
        return n;
    }
};

/// Closed-form parameter count of a model built from cfg.
inline i64 model_param_count(const ModelConfig& cfg) {
    cfg.validate();
    const i64 m = activation_matrix_count(cfg.activation);
    i64 n = cfg.vocab * cfg.d + cfg.context_len * cfg.d + cfg.d * cfg.vocab;
    for (i64 b = 0; b < cfg.n_layers; ++b) {
        n += 4 * cfg.d * cfg.d; // attention projections
        if (cfg.block_is_moe(b)) {
            MoEConfig mc = *cfg.moe;
            mc.activation = cfg.activation;
            n += count_params(mc);
        } else {
            n += m * cfg.d * cfg.dense_d_ff;
        }
    }
    return n;
}

inline Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model model;
    model.cfg = cfg;
    if (model.cfg.moe) model.cfg.moe->activation = cfg.activation;

    Rng rng(derive_seed(cfg.seed, "model-init"));
    model.tok_embedding = detail::init_matrix(cfg.vocab, cfg.d, rng);
    model.pos_embedding = detail::init_matrix(cfg.context_len, cfg.d, rng);
    model.output_proj = detail::init_matrix(cfg.d, cfg.vocab, rng);

    for (i64 b = 0; b < cfg.n_layers; ++b) {
        TransformerBlock blk;
        blk.attn.wq = detail::init_matrix(cfg.d, cfg.d, rng);
        blk.attn.wk = detail::init_matrix(cfg.d, cfg.d, rng);
        blk.attn.wv = detail::init_matrix(cfg.d, cfg.d, rng);
        blk.attn.wo = detail::init_matrix(cfg.d, cfg.d, rng);
        blk.is_moe = cfg.block_is_moe(b);
        if (blk.is_moe) {
            blk.moe = init_params(*model.cfg.moe, rng);
        } else {
            blk.ffn.w1 = detail::init_matrix(cfg.d, cfg.dense_d_ff, rng);
            blk.ffn.w2 = detail::init_matrix(cfg.dense_d_ff, cfg.d, rng);
            if (cfg.activation == Activation::swiglu3mat)
                blk.ffn.w3 = detail::init_matrix(cfg.d, cfg.dense_d_ff, rng);
        }
        model.blocks.push_back(std::move(blk));
    }
    return model;
}

namespace detail {

inline Tensor causal_mask(i64 t) {
    Tensor mask = Tensor::zeros({t, t});
    for (i64 i = 0; i < t; ++i)
        for (i64 j = i + 1; j < t; ++j) mask.at(i, j) = -1e30;
    return mask;
}

/// Standard multi-head causal self-attention over one sequence (t×d rows).
inline Tensor attention_forward(const Tensor& x, const AttentionParams& p, i64 n_heads,
                                OpCounter* counter, QuantMode quant, const Tensor& mask) {
    const i64 t = x.rows(), d = x.cols();
    const i64 dh = d / n_heads;
    const Tensor q = split_last_dim(linear(x, p.wq, counter, quant), n_heads);
    const Tensor k = split_last_dim(linear(x, p.wk, counter, quant), n_heads);
    const Tensor v = split_last_dim(linear(x, p.wv, counter, quant), n_heads);

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor heads; // (t·n_heads)×dh, rebuilt per head via scatter
    for (i64 head = 0; head < n_heads; ++head) {
        std::vector<i64> rows(static_cast<std::size_t>(t));
        for (i64 i = 0; i < t; ++i) rows[static_cast<std::size_t>(i)] = i * n_heads + head;
        const Tensor qh = gather_rows(q, rows);
        const Tensor kh = gather_rows(k, rows);
        const Tensor vh = gather_rows(v, rows);
        const Tensor scores = add(scale(matmul_nt(qh, kh, counter), inv_sqrt), mask);
        const Tensor ctx = matmul(softmax_rows(scores), vh, counter);
        const Tensor placed = scatter_add_rows(ctx, rows, t * n_heads);
        heads = heads.defined() ? add(heads, placed) : placed;
    }
    return linear(merge_last_dim(heads, n_heads), p.wo, counter, quant);
}

} // namespace detail

struct ModelOutput {
    Tensor logits; // (B·T)×vocab
    Tensor loss;   // scalar: cross-entropy + balance_coeff · mean balance loss
    double cross_entropy = 0.0;
    double balance = 0.0;
    std::vector<RoutingDecision> routing; // one per MoE block
};

/// Forward pass over B sequences of T bytes each (flattened row-major).
/// Targets, when given, must align one-to-one with the inputs.
inline ModelOutput model_forward(const Model& model, const std::vector<i64>& input_bytes,
                                 i64 batch, i64 seq_len,
                                 const std::vector<i64>* targets = nullptr,
                                 OpCounter* counter = nullptr) {
    const ModelConfig& cfg = model.cfg;
    if (seq_len > cfg.context_len)
        throw ConfigError("model_forward: sequence length " + std::to_string(seq_len) +
                          " exceeds context_len " + std::to_string(cfg.context_len));
    if (static_cast<i64>(input_bytes.size()) != batch * seq_len)
        throw ShapeError("model_forward: token count does not match batch x seq_len");
    for (const i64 b : input_bytes)
        if (b < 0 || b >= cfg.vocab) throw ConfigError("model_forward: byte out of range");

    std::vector<i64> positions(static_cast<std::size_t>(batch * seq_len));
    for (i64 b = 0; b < batch; ++b)
        for (i64 t = 0; t < seq_len; ++t) positions[static_cast<std::size_t>(b * seq_len + t)] = t;

    Tensor h = add(gather_rows(model.tok_embedding, input_bytes),
                   gather_rows(model.pos_embedding, positions));

    const Tensor mask = detail::causal_mask(seq_len);
    ModelOutput out;
    Tensor balance_acc;
    for (const TransformerBlock& blk : model.blocks) {
        // attention sublayer, applied per sequence under a shared pre-norm
        const Tensor normed = rmsnorm_rows(h);
        Tensor attn_out;
        for (i64 b = 0; b < batch; ++b) {
            std::vector<i64> rows(static_cast<std::size_t>(seq_len));
            for (i64 t = 0; t < seq_len; ++t) rows[static_cast<std::size_t>(t)] = b * seq_len + t;
            const Tensor seq = gather_rows(normed, rows);
            const Tensor y = detail::attention_forward(seq, blk.attn, cfg.n_heads_attn, counter,
                                                       cfg.quant, mask);
            const Tensor placed = scatter_add_rows(y, rows, batch * seq_len);
            attn_out = attn_out.defined() ? add(attn_out, placed) : placed;
        }
        h = add(h, attn_out);

        // FFN or MoE sublayer
        const Tensor normed2 = rmsnorm_rows(h);
        if (blk.is_moe) {
            RoutingDecision routing;
            const Tensor y =
                mhmoe_forward(normed2, blk.moe, *cfg.moe, counter, cfg.quant, &routing);
            const Tensor bal = balance_loss_tensor(routing, cfg.moe->n_experts);
            balance_acc = balance_acc.defined() ? add(balance_acc, bal) : bal;
            out.routing.push_back(std::move(routing));
            h = add(h, y);
        } else {
            h = add(h, expert_forward(normed2, blk.ffn, cfg.activation, counter, cfg.quant));
        }
    }

    out.logits = matmul(rmsnorm_rows(h), model.output_proj, counter);

    if (targets) {
        if (targets->size() != input_bytes.size())
            throw ShapeError("model_forward: target count does not match inputs");
        const Tensor ce = cross_entropy_mean(out.logits, *targets);
        out.cross_entropy = ce.item();
        if (balance_acc.defined()) {
            const Tensor mean_balance =
                scale(balance_acc, 1.0 / static_cast<double>(out.routing.size()));
            out.balance = mean_balance.item();
            out.loss = add(ce, scale(mean_balance, cfg.balance_coeff));
        } else {
            out.loss = ce;
        }
    }
    return out;
}

/// Logit causality probe: perturbing byte t must not change logits before t.
inline bool logits_causal(const Model& model, const std::vector<i64>& bytes, i64 perturb_pos,
                          i64 new_byte) {
    NoGradGuard no_grad;
    const i64 t = static_cast<i64>(bytes.size());
    const ModelOutput base = model_forward(model, bytes, 1, t);
    std::vector<i64> changed = bytes;
    changed[static_cast<std::size_t>(perturb_pos)] = new_byte;
    const ModelOutput after = model_forward(model, changed, 1, t);
    for (i64 pos = 0; pos < perturb_pos; ++pos)
        for (i64 v = 0; v < model.cfg.vocab; ++v)
            if (base.logits.at(pos, v) != after.logits.at(pos, v)) return false;
    return true;
}

} // namespace moelab
