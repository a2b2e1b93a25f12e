// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moelab/parity.hpp"
#include "moelab/train.hpp"

namespace moelab {

/// One trained variant row of a comparison table.
struct VariantResult {
    std::string name;
    ModelConfig config;
    i64 params = 0;
    i64 leading_ops_per_token_dim = 0; // FFN/MoE block, B·d coefficient
    i64 steps_run = 0;
    double initial_val_loss = 0.0;
    double final_val_loss = 0.0;
    double initial_ppl = 0.0;
    double final_ppl = 0.0;
    double loss_drop_frac = 0.0;
    std::vector<double> extra_ppl; // per extra evaluation corpus
};

struct SuiteConfig {
    ModelConfig base;        // shared trunk: depth, width, attention, context, seed
    MoEConfig smoe_baseline; // the SMoE layer all variants are matched against
    bool with_shared_expert = false;
    bool include_dense = true;
    TrainHyper hyper;
    i64 eval_every = 0;       // > 0 enables periodic eval for early stopping
    double target_drop = 0.0; // stop once val loss dropped by this fraction
    double param_tolerance = 0.05;
};

struct SuiteResult {
    std::vector<VariantResult> rows;
    std::string parity_note;
    std::vector<std::string> corpus_names;
};

namespace detail {

inline MoEConfig fine_grained_of(const MoEConfig& baseline) {
    MoEConfig fg = baseline;
    if (baseline.d_expert % 2 != 0)
        throw ConfigError("fine-grained variant needs an even baseline d_expert");
    fg.d_expert = baseline.d_expert / 2;
    fg.n_experts = baseline.n_experts * 2;
    fg.top_k = baseline.top_k * 2; // preserves activated FLOPs against the baseline
    return fg;
}

} // namespace detail

/// The five matched variants of the comparison: Dense, SMoE, fine-grained
/// SMoE, MH-MoE h=2 (top-2), MH-MoE h=3 (top-3). MH-MoE dimensions come from
/// the parity solver, so the compute match is by construction.
inline std::vector<std::pair<std::string, ModelConfig>> suite_variants(const SuiteConfig& suite) {
    const MoEConfig& baseline = suite.smoe_baseline;
    baseline.validate();
    if (baseline.d != suite.base.d)
        throw ConfigError("suite: smoe baseline d must equal the model d");

    const i64 dense_ff = baseline.d_expert * baseline.top_k; // activated-compute match
    const auto with_plan = [&](const MoEConfig& moe) {
        ModelConfig cfg = suite.base;
        cfg.dense_d_ff = dense_ff;
        MoEConfig planned = moe;
        planned.activation = suite.base.activation;
        if (suite.with_shared_expert) planned.shared_expert_dim = baseline.d_expert;
        cfg.moe = planned;
        return cfg;
    };

    std::vector<std::pair<std::string, ModelConfig>> variants;
    if (suite.include_dense) {
        ModelConfig dense = suite.base;
        dense.dense_d_ff = dense_ff;
        dense.moe.reset();
        variants.emplace_back("Dense", dense);
    }
    variants.emplace_back("SMoE", with_plan(baseline));
    variants.emplace_back("Fine-grained SMoE", with_plan(detail::fine_grained_of(baseline)));
    variants.emplace_back("MH-MoE (head=2)", with_plan(solve_parity(baseline, 2, 2).planned));
    variants.emplace_back("MH-MoE (head=3)", with_plan(solve_parity(baseline, 3, 3).planned));
    return variants;
}

/// Compute/parameter pre-flight: every MoE variant must match the baseline's
/// leading per-token-dim operations exactly and its parameters within
/// tolerance. Dense matches activated compute by construction; its parameter
/// deficit is reported, not enforced.
inline std::string check_suite_parity(const SuiteConfig& suite,
                                      const std::vector<std::pair<std::string, ModelConfig>>& variants) {
    MoEConfig reference = suite.smoe_baseline;
    if (suite.with_shared_expert) reference.shared_expert_dim = suite.smoe_baseline.d_expert;
    const i64 lead = leading_ops_per_token_dim(reference);
    const i64 ref_params = count_params(reference);

    std::string note = "compute reference: " + std::to_string(lead) +
                       " ops per token-dim; baseline layer params " + std::to_string(ref_params);
    for (const auto& [name, cfg] : variants) {
        if (!cfg.moe) {
            const i64 dense_lead = activation_flop_coefficient(cfg.activation) * cfg.dense_d_ff;
            const i64 moe_only_lead = leading_ops_per_token_dim(suite.smoe_baseline);
            if (dense_lead != moe_only_lead)
                throw ConfigError("suite parity: dense FFN leading ops " +
                                  std::to_string(dense_lead) + " != baseline " +
                                  std::to_string(moe_only_lead));
            note += "; Dense matches activated compute, parameters intentionally lower";
            continue;
        }
        const i64 variant_lead = leading_ops_per_token_dim(*cfg.moe);
        if (variant_lead != lead)
            throw ConfigError("suite parity: " + name + " leading ops " +
                              std::to_string(variant_lead) + " != baseline " +
                              std::to_string(lead) + " (residual " +
                              std::to_string(variant_lead - lead) + ")");
        const i64 params = count_params(*cfg.moe);
        const double ratio = static_cast<double>(params) / static_cast<double>(ref_params);
        if (std::abs(ratio - 1.0) > suite.param_tolerance)
            throw ConfigError("suite parity: " + name + " layer params " + std::to_string(params) +
                              " deviate " + std::to_string((ratio - 1.0) * 100.0) +
                              "% from baseline " + std::to_string(ref_params));
    }
    return note;
}

/// Trains one configuration and reports its validation trajectory. Training
/// stops early once target_drop is reached (when eval_every > 0).
inline VariantResult train_variant(const std::string& name, const ModelConfig& cfg,
                                   const Corpus& train_bytes, const Corpus& val_bytes,
                                   const TrainHyper& hyper, i64 eval_every, double target_drop,
                                   std::vector<MetricsRow>* metrics = nullptr,
                                   TrainState* final_state = nullptr) {
    VariantResult row;
    row.name = name;
    row.config = cfg;

    TrainState state = init_train_state(cfg);
    row.params = state.model.param_count();
    row.leading_ops_per_token_dim =
        cfg.moe ? leading_ops_per_token_dim(*cfg.moe)
                : activation_flop_coefficient(cfg.activation) * cfg.dense_d_ff;

    const EvalResult initial = evaluate_perplexity(state.model, val_bytes);
    row.initial_val_loss = initial.mean_nll;
    row.initial_ppl = initial.perplexity;

    EvalResult final = initial;
    const i64 chunk = eval_every > 0 ? eval_every : hyper.total_steps;
    while (state.step < hyper.total_steps) {
        train(state, train_bytes, std::min(chunk, hyper.total_steps - state.step), hyper, metrics);
        final = evaluate_perplexity(state.model, val_bytes);
        if (target_drop > 0.0 && final.mean_nll <= (1.0 - target_drop) * initial.mean_nll) break;
    }
    row.steps_run = state.step;
    row.final_val_loss = final.mean_nll;
    row.final_ppl = final.perplexity;
    row.loss_drop_frac = 1.0 - final.mean_nll / initial.mean_nll;
    if (final_state) *final_state = std::move(state);
    return row;
}

/// Trains all variants against one corpus (train/validation split) and any
/// number of extra evaluation corpora. The parity pre-flight runs first and a
/// mismatch is a hard error before any training starts.
inline SuiteResult run_variant_suite(const SuiteConfig& suite, const Corpus& corpus,
                                     const std::vector<std::pair<std::string, Corpus>>& extra = {}) {
    const auto variants = suite_variants(suite);
    SuiteResult result;
    result.parity_note = check_suite_parity(suite, variants);
    for (const auto& [name, corp] : extra) result.corpus_names.push_back(name);

    const auto [train_bytes, val_bytes] = split_corpus(corpus);
    for (const auto& [name, cfg] : variants) {
        TrainState state;
        VariantResult row = train_variant(name, cfg, train_bytes, val_bytes, suite.hyper,
                                          suite.eval_every, suite.target_drop, nullptr, &state);
        for (const auto& [extra_name, extra_corpus] : extra)
            row.extra_ppl.push_back(evaluate_perplexity(state.model, extra_corpus).perplexity);
        result.rows.push_back(std::move(row));
    }
    return result;
}

/// Head/merge ablation grid in the fixed row order (no/no, yes/no, no/yes,
/// yes/yes), trained at one seed.
struct AblationRow {
    bool head = false;
    bool merge = false;
    i64 ops_per_token = 0; // analytic MoE-block ops at B=1
    i64 params = 0;
    i64 steps_run = 0;
    double initial_ppl = 0.0;
    double final_ppl = 0.0;
    double final_val_loss = 0.0;
};

inline std::vector<AblationRow> run_ablation_grid(const ModelConfig& base, const Corpus& corpus,
                                                  const TrainHyper& hyper) {
    if (!base.moe) throw ConfigError("ablation grid needs a MoE model configuration");
    const auto [train_bytes, val_bytes] = split_corpus(corpus);
    std::vector<AblationRow> rows;
    for (const auto& [head, merge] : std::vector<std::pair<bool, bool>>{
             {false, false}, {true, false}, {false, true}, {true, true}}) {
        ModelConfig cfg = base;
        cfg.moe->use_head_layer = head;
        cfg.moe->use_merge_layer = merge;
        const VariantResult trained = train_variant(
            (head ? std::string("head") : "") + (merge ? "+merge" : ""), cfg, train_bytes,
            val_bytes, hyper, 0, 0.0);
        AblationRow row;
        row.head = head;
        row.merge = merge;
        row.ops_per_token = count_layer_ops(*cfg.moe, 1).total_ops;
        row.params = trained.params;
        row.steps_run = trained.steps_run;
        row.initial_ppl = trained.initial_ppl;
        row.final_ppl = trained.final_ppl;
        row.final_val_loss = trained.final_val_loss;
        rows.push_back(row);
    }
    return rows;
}

} // namespace moelab
