// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moelab/costs.hpp"
#include "moelab/rational.hpp"

namespace moelab {

enum class Rounding { floor, nearest };

inline const char* to_string(Rounding r) { return r == Rounding::floor ? "floor" : "nearest"; }

/// A solved MH-MoE configuration matched to an SMoE baseline. The exact
/// rational solutions are kept alongside the rounded config so nothing drifts
/// silently.
struct ParityPlan {
    MoEConfig baseline; // SMoE (h=1, no projections)
    MoEConfig planned;  // MH-MoE with head and merge layers
    Rat d_expert_exact;
    Rat n_experts_exact;
    i64 flop_residual = 0;  // planned - baseline total ops at B=1, rounded dims
    i64 param_residual = 0; // count_params difference, rounded dims
};

/// Converts an SMoE baseline into an MH-MoE configuration with matched
/// leading-order FLOPs and matched parameters.
///
/// FLOP step:  c·d_e·k_s = 4d + c·d_mh·k_m   (c = 4 ReLU, 6 SwiGLU)
/// Param step: m·d·d_e·E = 2d² + m·(d/h)·d_mh·E_mh   (m = 2 ReLU, 3 SwiGLU)
///
/// The rational solutions are rounded per policy into the planned config.
inline ParityPlan solve_parity(const MoEConfig& baseline, i64 h, i64 k_m,
                               Rounding rounding = Rounding::nearest) {
    baseline.validate();
    if (h <= 0 || baseline.d % h != 0)
        throw ConfigError("solve_parity: h=" + std::to_string(h) + " does not divide d=" +
                          std::to_string(baseline.d));
    if (k_m < 1) throw ConfigError("solve_parity: k_m must be >= 1");

    const Rat c(activation_flop_coefficient(baseline.activation));
    const Rat m(activation_matrix_count(baseline.activation));
    const Rat d(baseline.d);
    const Rat d_e(baseline.d_expert);
    const Rat k_s(baseline.top_k);
    const Rat E_base(baseline.n_experts);

    const Rat d_mh = (c * d_e * k_s - Rat(4) * d) / (c * Rat(k_m));
    if (!(d_mh > Rat(0)))
        throw ParityError("solve_parity: infeasible, head/merge overhead exceeds the expert "
                          "budget (solved d_expert = " + d_mh.str() + ")");

    const Rat e_mh = (m * d * d_e * E_base - Rat(2) * d * d) / (m * (d / Rat(h)) * d_mh);
    if (!(e_mh > Rat(0)))
        throw ParityError("solve_parity: infeasible, projection parameters exceed the expert "
                          "budget (solved n_experts = " + e_mh.str() + ")");

    const auto round_policy = [rounding](const Rat& v) {
        return rounding == Rounding::floor ? v.floor() : v.round_nearest();
    };

    ParityPlan plan;
    plan.baseline = baseline;
    plan.d_expert_exact = d_mh;
    plan.n_experts_exact = e_mh;

    MoEConfig planned;
    planned.d = baseline.d;
    planned.h = h;
    planned.d_expert = round_policy(d_mh);
    planned.n_experts = round_policy(e_mh);
    planned.top_k = k_m;
    planned.activation = baseline.activation;
    planned.use_head_layer = true;
    planned.use_merge_layer = true;
    planned.shared_expert_dim = baseline.shared_expert_dim;
    if (planned.d_expert <= 0 || planned.n_experts <= 0)
        throw ParityError("solve_parity: rounded dimensions degenerate to zero");
    if (planned.top_k > planned.n_experts) planned.top_k = planned.n_experts;
    planned.validate();
    plan.planned = planned;

    plan.flop_residual = count_layer_ops(planned, 1).total_ops - count_layer_ops(baseline, 1).total_ops;
    plan.param_residual = count_params(planned) - count_params(baseline);
    return plan;
}

/// verify_parity output. Costs are viewed as polynomials in d with the
/// expert dimensions held at their exact solved ratio to d, so leading-term
/// parity is an exact statement about the degree-2 coefficient.
struct ParityVerification {
    struct PerBatch {
        i64 batch_tokens = 0;
        Poly baseline_poly;
        Poly planned_poly;
        Poly residual_poly;
        bool quadratic_zero = false;
        Rat quadratic_coeff;
        Rat linear_coeff;
        Rat constant_coeff;
        bool fit_matches_closed_form = false;
        std::vector<std::pair<Rat, Rat>> grid_residuals; // (d, residual at d)
    };
    std::vector<PerBatch> per_batch;
    bool all_quadratic_zero = true;
    bool exact_parity = true; // residual identically zero at every B
    std::string note;
};

/// Evaluates analytic counts for baseline and planned configs over a (B, d)
/// grid with un-rounded rational dimensions, fits the residual as a polynomial
/// in d, and checks that the degree-2 coefficient vanishes. Any non-zero
/// linear residual is reported, never patched.
inline ParityVerification verify_parity(const ParityPlan& plan, const std::vector<i64>& B_grid,
                                        const std::vector<i64>& d_grid) {
    if (B_grid.empty() || d_grid.size() < 3)
        throw ConfigError("verify_parity: need at least one B and three distinct d values");

    const Rat ratio_base = Rat(plan.baseline.d_expert) / Rat(plan.baseline.d);
    const Rat ratio_planned = plan.d_expert_exact / Rat(plan.baseline.d);
    const Poly dv = Poly::variable();

    ParityVerification out;
    for (const i64 B : B_grid) {
        ParityVerification::PerBatch row;
        row.batch_tokens = B;
        row.baseline_poly =
            mhmoe_cost_terms<Poly>(Poly(B), dv, Poly(plan.baseline.h), Poly(ratio_base) * dv,
                                   Poly(plan.baseline.top_k), plan.baseline.activation,
                                   plan.baseline.use_head_layer, plan.baseline.use_merge_layer)
                .total();
        row.planned_poly =
            mhmoe_cost_terms<Poly>(Poly(B), dv, Poly(plan.planned.h), Poly(ratio_planned) * dv,
                                   Poly(plan.planned.top_k), plan.planned.activation,
                                   plan.planned.use_head_layer, plan.planned.use_merge_layer)
                .total();
        row.residual_poly = row.planned_poly - row.baseline_poly;
        row.quadratic_coeff = row.residual_poly.coeff(2);
        row.linear_coeff = row.residual_poly.coeff(1);
        row.constant_coeff = row.residual_poly.coeff(0);
        row.quadratic_zero = row.quadratic_coeff.is_zero();

        // Independent route: point-evaluate both configs on the d grid and
        // refit the residual; the interpolation must reproduce the closed form.
        std::vector<Rat> xs, ys;
        for (const i64 d : d_grid) {
            const Rat rd(d);
            const Rat baseline_at =
                mhmoe_cost_terms<Rat>(Rat(B), rd, Rat(plan.baseline.h), ratio_base * rd,
                                      Rat(plan.baseline.top_k), plan.baseline.activation,
                                      plan.baseline.use_head_layer, plan.baseline.use_merge_layer)
                    .total();
            const Rat planned_at =
                mhmoe_cost_terms<Rat>(Rat(B), rd, Rat(plan.planned.h), ratio_planned * rd,
                                      Rat(plan.planned.top_k), plan.planned.activation,
                                      plan.planned.use_head_layer, plan.planned.use_merge_layer)
                    .total();
            xs.push_back(rd);
            ys.push_back(planned_at - baseline_at);
            row.grid_residuals.emplace_back(rd, planned_at - baseline_at);
        }
        row.fit_matches_closed_form = fit_polynomial(xs, ys) == row.residual_poly;

        out.all_quadratic_zero = out.all_quadratic_zero && row.quadratic_zero;
        out.exact_parity = out.exact_parity && row.residual_poly.is_zero();
        out.per_batch.push_back(std::move(row));
    }

    if (out.exact_parity) {
        out.note = "exact operation parity: residual is identically zero";
    } else if (out.all_quadratic_zero) {
        out.note = "leading-term parity only: quadratic residual is zero but the linear terms "
                   "differ; residual at B=1 is " + out.per_batch.front().residual_poly.str() +
                   " (planned total " + out.per_batch.front().planned_poly.str() + " vs baseline " +
                   out.per_batch.front().baseline_poly.str() + ")";
    } else {
        out.note = "parity failure: quadratic residual " +
                   out.per_batch.front().quadratic_coeff.str() + " is non-zero at B=1";
    }
    return out;
}

} // namespace moelab
