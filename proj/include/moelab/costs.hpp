// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <type_traits>

#include "moelab/layers.hpp"
#include "moelab/rational.hpp"

namespace moelab {

/// Leading per-(token·dim·inner) factor of one expert pass: 4 for the
/// two-matrix ReLU FFN, 6 for three-matrix SwiGLU.
inline i64 activation_flop_coefficient(Activation a) {
    return a == Activation::relu2mat ? 4 : 6;
}

/// Matrices per expert: 2 for ReLU, 3 for SwiGLU.
inline i64 activation_matrix_count(Activation a) {
    return a == Activation::relu2mat ? 2 : 3;
}

/// Exact operation counts of one MoE layer forward under the counting
/// convention of OpCounter (multiplies + adds of matrix products, plus the
/// SwiGLU gating hadamard). Pure integers here; the templated core below also
/// evaluates the same formulas over rationals and polynomials in d.
struct CostReport {
    i64 head_ops = 0;
    i64 expert_ops = 0;
    i64 merge_ops = 0;
    i64 total_ops = 0;
    i64 param_count = 0;
};

template <class T>
struct CostTerms {
    T head{};
    T experts{};
    T merge{};
    T total() const { return head + experts + merge; }
};

namespace detail {

template <class T>
T div_exact(const T& value, i64 q) {
    if constexpr (std::is_same_v<T, i64>) {
        if (value % q != 0)
            throw InvariantError("exact division failed: " + std::to_string(value) + " / " +
                                 std::to_string(q));
        return value / q;
    } else if constexpr (std::is_same_v<T, Rat>) {
        return value / Rat(q);
    } else {
        return value * Poly(Rat(1, q));
    }
}

} // namespace detail

/// Eq-level cost core. Head/merge are d×d projections costing 2Bd² - Bd each;
/// the activated experts cost k·(c·B·d·de - B·d - B·de·h) with c = 4 (ReLU,
/// two products) or 6 (SwiGLU, three products plus the B·de·h·k hadamard).
template <class T>
CostTerms<T> mhmoe_cost_terms(const T& B, const T& d, const T& h, const T& d_expert, const T& k,
                              Activation activation, bool use_head, bool use_merge) {
    const T c(activation_flop_coefficient(activation));
    const T projection = T(2) * B * d * d - B * d;
    CostTerms<T> terms;
    terms.head = use_head ? projection : T(0);
    terms.merge = use_merge ? projection : T(0);
    terms.experts = (c * B * d * d_expert - B * d - B * d_expert * h) * k;
    return terms;
}

/// Expert-matrix parameters: m · (d/h) · d_expert · E.
template <class T>
T expert_param_count(const T& d, i64 h, const T& d_expert, const T& n_experts,
                     Activation activation) {
    return T(activation_matrix_count(activation)) * detail::div_exact(d, h) * d_expert * n_experts;
}

struct ParamBreakdown {
    i64 experts = 0;
    i64 head_merge = 0;
    i64 gate = 0;
    i64 shared = 0;
    i64 total = 0;
};

inline ParamBreakdown param_breakdown(const MoEConfig& cfg) {
    cfg.validate();
    const i64 m = activation_matrix_count(cfg.activation);
    ParamBreakdown b;
    b.experts = m * cfg.sub_dim() * cfg.d_expert * cfg.n_experts;
    b.head_merge = (cfg.use_head_layer ? cfg.d * cfg.d : 0) + (cfg.use_merge_layer ? cfg.d * cfg.d : 0);
    b.gate = cfg.sub_dim() * cfg.n_experts;
    b.shared = cfg.shared_expert_dim ? m * cfg.d * *cfg.shared_expert_dim : 0;
    b.total = b.experts + b.head_merge + b.gate + b.shared;
    return b;
}

/// Total parameter count of one layer: experts + enabled projections + gate +
/// optional shared expert.
inline i64 count_params(const MoEConfig& cfg) { return param_breakdown(cfg).total; }

/// Analytic cost of an MH-MoE layer forward at batch-token count B.
inline CostReport count_mhmoe_ops(i64 B, i64 d, i64 h, i64 d_expert, i64 k, Activation activation,
                                  bool use_head = true, bool use_merge = true) {
    if (B <= 0 || d <= 0 || h <= 0 || d_expert <= 0 || k <= 0)
        throw ConfigError("count_mhmoe_ops: arguments must be positive");
    if (d % h != 0)
        throw ConfigError("count_mhmoe_ops: h=" + std::to_string(h) + " does not divide d=" +
                          std::to_string(d));
    const CostTerms<i64> t =
        mhmoe_cost_terms<i64>(B, d, h, d_expert, k, activation, use_head, use_merge);
    MoEConfig cfg;
    cfg.d = d;
    cfg.h = h;
    cfg.d_expert = d_expert;
    cfg.n_experts = std::max<i64>(k, 1);
    cfg.top_k = k;
    cfg.activation = activation;
    cfg.use_head_layer = use_head;
    cfg.use_merge_layer = use_merge;
    return {t.head, t.experts, t.merge, t.total(), count_params(cfg)};
}

/// Analytic cost of a plain SMoE layer forward: the h=1 grid with no
/// projections.
inline CostReport count_smoe_ops(i64 B, i64 d, i64 d_expert, i64 k, Activation activation) {
    return count_mhmoe_ops(B, d, 1, d_expert, k, activation, false, false);
}

/// Cost of the analytic layer described by cfg (projections per toggles).
inline CostReport count_layer_ops(const MoEConfig& cfg, i64 B) {
    CostReport r = count_mhmoe_ops(B, cfg.d, cfg.h, cfg.d_expert, cfg.top_k, cfg.activation,
                                   cfg.use_head_layer, cfg.use_merge_layer);
    r.param_count = count_params(cfg);
    return r;
}

/// Always-on full-width FFN (the shared expert, or a dense block FFN):
/// one expert pass at h=1, k=1.
inline i64 count_ffn_ops(i64 B, i64 d, i64 d_ff, Activation activation) {
    return mhmoe_cost_terms<i64>(B, d, 1, d_ff, 1, activation, false, false).experts;
}

/// Coefficient of B·d in the layer cost with concrete dims held fixed: the
/// "leading term" used for compute parity between variants.
inline i64 leading_ops_per_token_dim(const MoEConfig& cfg) {
    i64 lead = activation_flop_coefficient(cfg.activation) * cfg.d_expert * cfg.top_k;
    if (cfg.use_head_layer) lead += 2 * cfg.d;
    if (cfg.use_merge_layer) lead += 2 * cfg.d;
    if (cfg.shared_expert_dim)
        lead += activation_flop_coefficient(cfg.activation) * *cfg.shared_expert_dim;
    return lead;
}

/// Inner-dimension scaling of the original multi-head MoE formulation, kept
/// for the historical cost comparison.
struct LegacyMHMoESpec {
    i64 h = 1;
    Rat beta = Rat(1);
};

/// The published legacy figure mixes two substitutions: its quadratic term
/// follows from d_expert = 4·beta·h·d, its linear term from d_expert =
/// 4·beta·d. Both readings are computed; no guess is made at which was meant.
struct LegacyCostReadings {
    Rat d_expert_scaled_by_heads; // 4·beta·h·d at the given d
    Rat d_expert_unscaled;        // 4·beta·d at the given d
    Rat total_scaled_by_heads;
    Rat total_unscaled;
    Poly total_poly_scaled_by_heads; // polynomials in d at the given B
    Poly total_poly_unscaled;
};

inline LegacyCostReadings count_legacy_mhmoe_ops(i64 B, i64 d, const LegacyMHMoESpec& spec,
                                                 i64 k) {
    if (B <= 0 || d <= 0 || spec.h <= 0 || k <= 0 || !(spec.beta > Rat(0)))
        throw ConfigError("count_legacy_mhmoe_ops: arguments must be positive");
    const Poly dv = Poly::variable();
    const Poly de_scaled = Poly(Rat(4) * spec.beta * Rat(spec.h)) * dv;
    const Poly de_unscaled = Poly(Rat(4) * spec.beta) * dv;

    const auto total_at = [&](const Poly& de) {
        return mhmoe_cost_terms<Poly>(Poly(B), dv, Poly(spec.h), de, Poly(k), Activation::relu2mat,
                                      true, true)
            .total();
    };

    LegacyCostReadings out;
    out.total_poly_scaled_by_heads = total_at(de_scaled);
    out.total_poly_unscaled = total_at(de_unscaled);
    out.d_expert_scaled_by_heads = de_scaled.eval(Rat(d));
    out.d_expert_unscaled = de_unscaled.eval(Rat(d));
    out.total_scaled_by_heads = out.total_poly_scaled_by_heads.eval(Rat(d));
    out.total_unscaled = out.total_poly_unscaled.eval(Rat(d));
    return out;
}

} // namespace moelab
