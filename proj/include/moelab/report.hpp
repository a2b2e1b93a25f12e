// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "moelab/parity.hpp"
#include "moelab/serialize.hpp"
#include "moelab/suite.hpp"

namespace moelab {

inline void to_json(json& j, const CostReport& r) {
    j = json{{"head_ops", r.head_ops},
             {"expert_ops", r.expert_ops},
             {"merge_ops", r.merge_ops},
             {"total_ops", r.total_ops},
             {"param_count", r.param_count}};
}

inline void to_json(json& j, const ParamBreakdown& b) {
    j = json{{"experts", b.experts},
             {"head_merge", b.head_merge},
             {"gate", b.gate},
             {"shared", b.shared},
             {"total", b.total}};
}

inline json rat_json(const Rat& r) {
    return json{{"num", r.num()}, {"den", r.den()}, {"value", r.to_double()}, {"text", r.str()}};
}

inline json poly_json(const Poly& p) {
    json coeffs = json::array();
    for (i64 power = 0; power <= p.degree(); ++power) coeffs.push_back(rat_json(p.coeff(power)));
    return json{{"coefficients_by_power", coeffs}, {"text", p.str()}};
}

inline void to_json(json& j, const ParityPlan& plan) {
    j = json{{"baseline", plan.baseline},
             {"planned", plan.planned},
             {"d_expert_exact", rat_json(plan.d_expert_exact)},
             {"n_experts_exact", rat_json(plan.n_experts_exact)},
             {"flop_residual_at_B1", plan.flop_residual},
             {"param_residual", plan.param_residual},
             {"baseline_params", param_breakdown(plan.baseline)},
             {"planned_params", param_breakdown(plan.planned)}};
}

inline void to_json(json& j, const ParityVerification& v) {
    json rows = json::array();
    for (const auto& row : v.per_batch) {
        json grid = json::array();
        for (const auto& [d, residual] : row.grid_residuals)
            grid.push_back({{"d", rat_json(d)}, {"residual", rat_json(residual)}});
        rows.push_back({{"batch_tokens", row.batch_tokens},
                        {"baseline_ops", poly_json(row.baseline_poly)},
                        {"planned_ops", poly_json(row.planned_poly)},
                        {"residual", poly_json(row.residual_poly)},
                        {"quadratic_coeff", rat_json(row.quadratic_coeff)},
                        {"linear_coeff", rat_json(row.linear_coeff)},
                        {"constant_coeff", rat_json(row.constant_coeff)},
                        {"quadratic_zero", row.quadratic_zero},
                        {"fit_matches_closed_form", row.fit_matches_closed_form},
                        {"grid_residuals", grid}});
    }
    j = json{{"per_batch", rows},
             {"all_quadratic_zero", v.all_quadratic_zero},
             {"exact_parity", v.exact_parity},
             {"note", v.note}};
}

inline void to_json(json& j, const LegacyCostReadings& r) {
    j = json{{"inner_dim_scaled_by_heads",
              {{"d_expert", rat_json(r.d_expert_scaled_by_heads)},
               {"total_ops", rat_json(r.total_scaled_by_heads)},
               {"total_ops_poly", poly_json(r.total_poly_scaled_by_heads)}}},
             {"inner_dim_unscaled",
              {{"d_expert", rat_json(r.d_expert_unscaled)},
               {"total_ops", rat_json(r.total_unscaled)},
               {"total_ops_poly", poly_json(r.total_poly_unscaled)}}}};
}

inline void to_json(json& j, const VariantResult& r) {
    j = json{{"name", r.name},
             {"config", r.config},
             {"params", r.params},
             {"leading_ops_per_token_dim", r.leading_ops_per_token_dim},
             {"steps_run", r.steps_run},
             {"initial_val_loss", r.initial_val_loss},
             {"final_val_loss", r.final_val_loss},
             {"initial_ppl", r.initial_ppl},
             {"final_ppl", r.final_ppl},
             {"loss_drop_frac", r.loss_drop_frac},
             {"extra_ppl", r.extra_ppl}};
}

inline void to_json(json& j, const SuiteResult& r) {
    j = json{{"rows", r.rows}, {"parity_note", r.parity_note}, {"corpus_names", r.corpus_names}};
}

inline void to_json(json& j, const AblationRow& r) {
    j = json{{"head_layer", r.head},
             {"merge_layer", r.merge},
             {"ops_per_token", r.ops_per_token},
             {"params", r.params},
             {"steps_run", r.steps_run},
             {"initial_ppl", r.initial_ppl},
             {"final_ppl", r.final_ppl},
             {"final_val_loss", r.final_val_loss}};
}

/// Aligned pipe table for humans; column widths fit the widest cell.
inline std::string markdown_table(const std::vector<std::string>& header,
                                  const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c)
            width[c] = std::max(width[c], row[c].size());

    std::ostringstream out;
    const auto emit = [&](const std::vector<std::string>& cells) {
        out << "|";
        for (std::size_t c = 0; c < width.size(); ++c) {
            const std::string& cell = c < cells.size() ? cells[c] : "";
            out << " " << cell << std::string(width[c] - cell.size(), ' ') << " |";
        }
        out << "\n";
    };
    emit(header);
    out << "|";
    for (std::size_t c = 0; c < width.size(); ++c) out << std::string(width[c] + 2, '-') << "|";
    out << "\n";
    for (const auto& row : rows) emit(row);
    return out.str();
}

inline std::string format_double(double v, int precision = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

inline std::string plan_markdown(const ParityPlan& plan) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"d", std::to_string(plan.baseline.d), std::to_string(plan.planned.d)});
    rows.push_back({"heads (h)", std::to_string(plan.baseline.h), std::to_string(plan.planned.h)});
    rows.push_back({"d_expert", std::to_string(plan.baseline.d_expert),
                    std::to_string(plan.planned.d_expert) + "  (exact " +
                        plan.d_expert_exact.str() + ")"});
    rows.push_back({"experts (E)", std::to_string(plan.baseline.n_experts),
                    std::to_string(plan.planned.n_experts) + "  (exact " +
                        plan.n_experts_exact.str() + ")"});
    rows.push_back({"top-k", std::to_string(plan.baseline.top_k), std::to_string(plan.planned.top_k)});
    rows.push_back({"layer params", std::to_string(count_params(plan.baseline)),
                    std::to_string(count_params(plan.planned))});
    rows.push_back({"ops at B=1", std::to_string(count_layer_ops(plan.baseline, 1).total_ops),
                    std::to_string(count_layer_ops(plan.planned, 1).total_ops)});
    std::string out = markdown_table({"quantity", "baseline (SMoE)", "planned (MH-MoE)"}, rows);
    out += "\nflop residual at B=1: " + std::to_string(plan.flop_residual) +
           ", param residual: " + std::to_string(plan.param_residual) + "\n";
    return out;
}

inline std::string verification_markdown(const ParityVerification& v) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : v.per_batch)
        rows.push_back({std::to_string(row.batch_tokens), row.planned_poly.str(),
                        row.baseline_poly.str(), row.residual_poly.str(),
                        row.quadratic_zero ? "yes" : "NO"});
    std::string out = markdown_table(
        {"B", "planned ops(d)", "baseline ops(d)", "residual(d)", "quadratic zero"}, rows);
    out += "\n" + v.note + "\n";
    return out;
}

inline std::string suite_markdown(const SuiteResult& result) {
    std::vector<std::string> header{"Model", "params", "lead ops/tok-dim", "steps",
                                    "ppl before", "ppl after", "loss drop"};
    for (const std::string& name : result.corpus_names) header.push_back("ppl " + name);
    std::vector<std::vector<std::string>> rows;
    for (const VariantResult& r : result.rows) {
        std::vector<std::string> row{r.name,
                                     std::to_string(r.params),
                                     std::to_string(r.leading_ops_per_token_dim),
                                     std::to_string(r.steps_run),
                                     format_double(r.initial_ppl, 2),
                                     format_double(r.final_ppl, 2),
                                     format_double(r.loss_drop_frac * 100.0, 1) + "%"};
        for (const double p : r.extra_ppl) row.push_back(format_double(p, 2));
        rows.push_back(std::move(row));
    }
    return markdown_table(header, rows);
}

inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
    std::vector<std::vector<std::string>> cells;
    for (const AblationRow& r : rows)
        cells.push_back({r.head ? "yes" : "no", r.merge ? "yes" : "no",
                         std::to_string(r.ops_per_token), std::to_string(r.params),
                         format_double(r.final_ppl, 2), format_double(r.final_val_loss, 4)});
    return markdown_table(
        {"head layer", "merge layer", "ops/token", "params", "val ppl", "val loss"}, cells);
}

} // namespace moelab
