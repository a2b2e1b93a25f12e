// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "moelab/model.hpp"
#include "moelab/rng.hpp"

namespace moelab {

struct TrainHyper {
    i64 total_steps = 200;   // schedule horizon; training may stop earlier
    i64 batch_sequences = 2; // sequences per step, each context_len tokens
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double warmup_frac = 0.05;   // linear warmup share of total_steps
    double final_lr_frac = 0.10; // cosine decays to this fraction of lr
};

/// Linear warmup over warmup_frac of the horizon, then cosine decay to
/// final_lr_frac of the peak.
inline double lr_at_step(const TrainHyper& h, i64 step) {
    const i64 warmup = std::max<i64>(1, static_cast<i64>(std::llround(
                                            h.warmup_frac * static_cast<double>(h.total_steps))));
    if (step < warmup) return h.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const double span = static_cast<double>(std::max<i64>(1, h.total_steps - warmup));
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
    const double cosine = 0.5 * (1.0 + std::cos(3.141592653589793238462643 * progress));
    return h.lr * (h.final_lr_frac + (1.0 - h.final_lr_frac) * cosine);
}

struct AdamSlot {
    std::vector<double> m;
    std::vector<double> v;
};

struct MetricsRow {
    i64 step = 0;
    double loss = 0.0;
    double ppl = 0.0;
    double balance_loss = 0.0;
    i64 ops_per_token = 0;
};

struct TrainState {
    Model model;
    std::vector<AdamSlot> opt; // parallel to model.named_params() order
    i64 step = 0;
    Rng data_rng{0};
    double running_loss = 0.0; // EMA with factor 0.99
};

inline TrainState init_train_state(const ModelConfig& cfg) {
    TrainState state;
    state.model = build_model(cfg);
    const auto params = state.model.named_params();
    state.opt.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.opt[i].m.assign(params[i].second.numel(), 0.0);
        state.opt[i].v.assign(params[i].second.numel(), 0.0);
    }
    state.data_rng = Rng(derive_seed(cfg.seed, "data-order"));
    return state;
}

using Corpus = std::vector<unsigned char>;

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open corpus file: " + path);
    return Corpus(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// First 90% of the bytes train, the tail 10% validates; the two never overlap.
inline std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus) {
    const std::size_t cut = corpus.size() * 9 / 10;
    return {Corpus(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(cut)),
            Corpus(corpus.begin() + static_cast<std::ptrdiff_t>(cut), corpus.end())};
}

struct EvalResult {
    double mean_nll = 0.0;
    double perplexity = 0.0;
    i64 positions = 0;
};

/// exp(mean next-byte cross-entropy in nats) over non-overlapping context
/// windows; a trailing window shorter than the context still scores its bytes.
inline EvalResult evaluate_perplexity(const Model& model, const Corpus& corpus) {
    if (corpus.size() < 2)
        throw ConfigError("evaluate_perplexity: corpus must hold at least 2 bytes");
    NoGradGuard no_grad;
    const i64 t_max = model.cfg.context_len;
    double total_nll = 0.0;
    i64 positions = 0;
    for (std::size_t start = 0; start + 1 < corpus.size(); start += static_cast<std::size_t>(t_max)) {
        const i64 t = std::min<i64>(t_max, static_cast<i64>(corpus.size() - 1 - start));
        std::vector<i64> inputs(static_cast<std::size_t>(t)), targets(static_cast<std::size_t>(t));
        for (i64 i = 0; i < t; ++i) {
            inputs[static_cast<std::size_t>(i)] = corpus[start + static_cast<std::size_t>(i)];
            targets[static_cast<std::size_t>(i)] = corpus[start + static_cast<std::size_t>(i) + 1];
        }
        const ModelOutput out = model_forward(model, inputs, 1, t, &targets);
        total_nll += out.cross_entropy * static_cast<double>(t);
        positions += t;
    }
    EvalResult r;
    r.positions = positions;
    r.mean_nll = total_nll / static_cast<double>(positions);
    r.perplexity = std::exp(r.mean_nll);
    return r;
}

/// Parameters whose gradient is identically zero after the last backward.
/// Top-k routing can starve experts on small batches, so callers log these
/// rather than fail.
inline std::vector<std::string> dead_parameter_names(const Model& model) {
    std::vector<std::string> dead;
    for (const auto& [name, t] : model.named_params()) {
        bool alive = false;
        if (t.has_grad())
            for (const double g : t.grad())
                if (g != 0.0) {
                    alive = true;
                    break;
                }
        if (!alive) dead.push_back(name);
    }
    return dead;
}

namespace detail {

inline double grad_norm(const Model& model) {
    double sq = 0.0;
    for (const auto& [name, t] : model.named_params())
        if (t.has_grad())
            for (const double g : t.grad()) sq += g * g;
    return std::sqrt(sq);
}

} // namespace detail

/// Runs `steps` optimization steps of the next-byte objective plus the scaled
/// balance loss. Deterministic in (seed, step): restoring a TrainState and
/// continuing reproduces the uninterrupted run bit-exactly.
inline void train(TrainState& state, const Corpus& train_bytes, i64 steps, const TrainHyper& hyper,
                  std::vector<MetricsRow>* metrics = nullptr) {
    const ModelConfig& cfg = state.model.cfg;
    const i64 t = cfg.context_len;
    if (static_cast<i64>(train_bytes.size()) < t + 2)
        throw ConfigError("train: corpus of " + std::to_string(train_bytes.size()) +
                          " bytes is smaller than one context window");
    auto params = state.model.named_params();

    for (i64 local = 0; local < steps; ++local) {
        // sample a batch of windows from the training region
        const i64 batch = hyper.batch_sequences;
        std::vector<i64> inputs(static_cast<std::size_t>(batch * t));
        std::vector<i64> targets(static_cast<std::size_t>(batch * t));
        for (i64 b = 0; b < batch; ++b) {
            const u64 offset = state.data_rng.uniform_index(
                static_cast<u64>(static_cast<i64>(train_bytes.size()) - t));
            for (i64 i = 0; i < t; ++i) {
                inputs[static_cast<std::size_t>(b * t + i)] =
                    train_bytes[static_cast<std::size_t>(offset) + static_cast<std::size_t>(i)];
                targets[static_cast<std::size_t>(b * t + i)] =
                    train_bytes[static_cast<std::size_t>(offset) + static_cast<std::size_t>(i) + 1];
            }
        }

        for (auto& [name, tensor] : params) tensor.zero_grad();

        OpCounter counter;
        const ModelOutput out = model_forward(state.model, inputs, batch, t, &targets, &counter);
        const double loss_value = out.loss.item();
        const double lr = lr_at_step(hyper, state.step);
        if (!std::isfinite(loss_value))
            throw InvariantError("train: non-finite loss at step " + std::to_string(state.step) +
                                 " (lr=" + std::to_string(lr) +
                                 ", grad_norm=" + std::to_string(detail::grad_norm(state.model)) +
                                 ")");
        backward(out.loss);

        // Adam with bias correction
        const double t1 = static_cast<double>(state.step + 1);
        const double bc1 = 1.0 - std::pow(hyper.beta1, t1);
        const double bc2 = 1.0 - std::pow(hyper.beta2, t1);
        if (lr != 0.0) {
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor& tensor = params[p].second;
                AdamSlot& slot = state.opt[p];
                const std::vector<double>& g = tensor.grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    slot.m[i] = hyper.beta1 * slot.m[i] + (1.0 - hyper.beta1) * g[i];
                    slot.v[i] = hyper.beta2 * slot.v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
                    const double mhat = slot.m[i] / bc1;
                    const double vhat = slot.v[i] / bc2;
                    tensor.values()[i] -= lr * mhat / (std::sqrt(vhat) + hyper.adam_eps);
                }
            }
        }

        state.running_loss = state.step == 0 ? loss_value
                                             : 0.99 * state.running_loss + 0.01 * loss_value;
        ++state.step;
        if (metrics) {
            MetricsRow row;
            row.step = state.step;
            row.loss = loss_value;
            row.ppl = std::exp(out.cross_entropy);
            row.balance_loss = out.balance;
            row.ops_per_token = static_cast<i64>(counter.flops()) / (batch * t);
            metrics->push_back(row);
        }
    }
}

} // namespace moelab
