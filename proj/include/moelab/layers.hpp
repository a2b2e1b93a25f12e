// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "moelab/ops.hpp"
#include "moelab/quant.hpp"
#include "moelab/rng.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

/// Expert feed-forward kind: two-matrix ReLU FFN or three-matrix SwiGLU.
enum class Activation { relu2mat, swiglu3mat };

inline const char* to_string(Activation a) {
    return a == Activation::relu2mat ? "relu2mat" : "swiglu3mat";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu2mat") return Activation::relu2mat;
    if (s == "swiglu3mat") return Activation::swiglu3mat;
    throw ConfigError("unknown activation '" + s + "' (expected relu2mat|swiglu3mat)");
}

/// Dimensional description of one MoE layer. h = 1 with head/merge disabled is
/// a plain SMoE; h >= 2 adds the sub-token split between the two projections.
struct MoEConfig {
    i64 d = 0;        // token dimension
    i64 h = 1;        // sub-token head count
    i64 d_expert = 0; // expert intermediate dimension
    i64 n_experts = 1;
    i64 top_k = 1;
    Activation activation = Activation::swiglu3mat;
    bool use_head_layer = true;
    bool use_merge_layer = true;
    std::optional<i64> shared_expert_dim;

    i64 sub_dim() const { return d / h; }

    void validate() const {
        if (d <= 0 || h <= 0 || d_expert <= 0 || n_experts <= 0)
            throw ConfigError("moe config: dimensions must be positive");
        if (d % h != 0)
            throw ConfigError("moe config: h=" + std::to_string(h) + " does not divide d=" +
                              std::to_string(d));
        if (top_k < 1 || top_k > n_experts)
            throw ConfigError("moe config: top_k=" + std::to_string(top_k) +
                              " outside [1, n_experts=" + std::to_string(n_experts) + "]");
        if (shared_expert_dim && *shared_expert_dim <= 0)
            throw ConfigError("moe config: shared_expert_dim must be positive");
    }

    /// The same expert grid viewed as a plain SMoE (h=1, no projections).
    static MoEConfig smoe(i64 d, i64 d_expert, i64 n_experts, i64 top_k, Activation act) {
        MoEConfig c;
        c.d = d;
        c.h = 1;
        c.d_expert = d_expert;
        c.n_experts = n_experts;
        c.top_k = top_k;
        c.activation = act;
        c.use_head_layer = false;
        c.use_merge_layer = false;
        return c;
    }
};

/// One expert FFN. w1/w3 map sub_dim -> d_expert, w2 maps back; w3 is present
/// exactly for the SwiGLU kind.
struct ExpertParams {
    Tensor w1;
    Tensor w2;
    std::optional<Tensor> w3;
};

struct MHMoEParams {
    Tensor w_head;  // d×d
    Tensor w_merge; // d×d
    Tensor gate;    // sub_dim×E
    std::vector<ExpertParams> experts;
    std::optional<ExpertParams> shared;
};

/// Per-sub-token routing outcome: the top-k expert ids in selection order,
/// their renormalized gate weights, and the full softmax over all experts.
struct RoutingDecision {
    i64 rows = 0;
    i64 k = 0;
    i64 n_experts = 0;
    std::vector<i64> indices; // rows×k, distinct per row
    Tensor weights;           // rows×k, each row sums to 1
    Tensor probs;             // rows×E softmax of the gate scores

    i64 index_at(i64 row, i64 slot) const {
        return indices[static_cast<std::size_t>(row * k + slot)];
    }
};

/// relu2mat: relu(x·W1)·W2; swiglu3mat: (silu(x·W1) ⊙ (x·W3))·W2.
inline Tensor expert_forward(const Tensor& x, const ExpertParams& p, Activation activation,
                             OpCounter* counter = nullptr, QuantMode quant = QuantMode::off) {
    if (activation == Activation::relu2mat)
        return linear(relu(linear(x, p.w1, counter, quant)), p.w2, counter, quant);
    if (!p.w3) throw ConfigError("expert_forward: swiglu3mat requires w3");
    const Tensor gated = hadamard(silu(linear(x, p.w1, counter, quant)),
                                  linear(x, *p.w3, counter, quant), counter);
    return linear(gated, p.w2, counter, quant);
}

/// Softmax over all E gate scores, then the k largest per row, renormalized to
/// unit sum. Ties go to the lower expert index. Router arithmetic is outside
/// the operation-count model, so nothing here touches a counter.
inline RoutingDecision route_topk(const Tensor& x_sub, const Tensor& gate, i64 k,
                                  QuantMode quant = QuantMode::off) {
    detail::require_2d(x_sub, "route_topk");
    const i64 rows = x_sub.rows();
    const i64 n_experts = gate.cols();
    if (k < 1 || k > n_experts)
        throw ConfigError("route_topk: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(n_experts) + "]");

    RoutingDecision decision;
    decision.rows = rows;
    decision.k = k;
    decision.n_experts = n_experts;
    decision.probs = softmax_rows(linear(x_sub, gate, nullptr, quant));

    decision.indices.resize(static_cast<std::size_t>(rows * k));
    std::vector<i64> order(static_cast<std::size_t>(n_experts));
    std::vector<i64> picked_flat(static_cast<std::size_t>(rows * k));
    for (i64 r = 0; r < rows; ++r) {
        const double* p = decision.probs.data() + r * n_experts;
        std::iota(order.begin(), order.end(), i64{0});
        std::sort(order.begin(), order.end(),
                  [p](i64 a, i64 b) { return p[a] != p[b] ? p[a] > p[b] : a < b; });
        for (i64 s = 0; s < k; ++s) {
            decision.indices[static_cast<std::size_t>(r * k + s)] = order[static_cast<std::size_t>(s)];
            picked_flat[static_cast<std::size_t>(r * k + s)] = r * n_experts + order[static_cast<std::size_t>(s)];
        }
    }

    const Tensor picked = gather_flat(decision.probs, std::move(picked_flat)).reshaped({rows, k});
    decision.weights = normalize_rows(picked);
    return decision;
}

/// Weighted sum of the selected experts per row. Only selected experts
/// execute; rows are grouped per expert so each activation passes through its
/// FFN exactly once.
inline Tensor moe_forward(const Tensor& x_sub, const MHMoEParams& params, const MoEConfig& cfg,
                          OpCounter* counter = nullptr, QuantMode quant = QuantMode::off,
                          RoutingDecision* routing_out = nullptr) {
    detail::require_2d(x_sub, "moe_forward");
    if (x_sub.cols() != cfg.sub_dim())
        throw ShapeError("moe_forward: input " + shape_str(x_sub.shape()) + " does not match sub_dim " +
                         std::to_string(cfg.sub_dim()));
    if (static_cast<i64>(params.experts.size()) != cfg.n_experts)
        throw ConfigError("moe_forward: " + std::to_string(params.experts.size()) +
                          " experts for n_experts=" + std::to_string(cfg.n_experts));

    RoutingDecision routing = route_topk(x_sub, params.gate, cfg.top_k, quant);
    const i64 rows = routing.rows;

    Tensor acc;
    std::vector<i64> member_rows;
    std::vector<i64> member_slots;
    for (i64 e = 0; e < cfg.n_experts; ++e) {
        member_rows.clear();
        member_slots.clear();
        for (i64 r = 0; r < rows; ++r)
            for (i64 s = 0; s < cfg.top_k; ++s)
                if (routing.index_at(r, s) == e) {
                    member_rows.push_back(r);
                    member_slots.push_back(r * cfg.top_k + s);
                }
        if (member_rows.empty()) continue;

        const Tensor inputs = gather_rows(x_sub, member_rows);
        const Tensor outputs = expert_forward(inputs, params.experts[static_cast<std::size_t>(e)],
                                              cfg.activation, counter, quant);
        const Tensor gate_w = gather_flat(routing.weights, member_slots);
        const Tensor contribution = scatter_add_rows(scale_rows(outputs, gate_w), member_rows, rows);
        acc = acc.defined() ? add(acc, contribution) : contribution;
    }

    if (routing_out) *routing_out = std::move(routing);
    return acc;
}

/// Full MH-MoE pipeline: head projection -> sub-token split -> routed experts
/// -> merge of sub-tokens -> merge projection, plus an optional always-on
/// shared FFN of the layer input. Disabled head/merge layers skip both the
/// computation and its counted operations.
inline Tensor mhmoe_forward(const Tensor& x, const MHMoEParams& params, const MoEConfig& cfg,
                            OpCounter* counter = nullptr, QuantMode quant = QuantMode::off,
                            RoutingDecision* routing_out = nullptr) {
    cfg.validate();
    detail::require_2d(x, "mhmoe_forward");
    if (x.cols() != cfg.d)
        throw ShapeError("mhmoe_forward: input " + shape_str(x.shape()) + " does not match d=" +
                         std::to_string(cfg.d));

    Tensor t = cfg.use_head_layer ? linear(x, params.w_head, counter, quant) : x;
    t = split_last_dim(t, cfg.h);
    t = moe_forward(t, params, cfg, counter, quant, routing_out);
    t = merge_last_dim(t, cfg.h);
    if (cfg.use_merge_layer) t = linear(t, params.w_merge, counter, quant);

    if (cfg.shared_expert_dim) {
        if (!params.shared) throw ConfigError("mhmoe_forward: shared_expert_dim set but no shared params");
        t = add(t, expert_forward(x, *params.shared, cfg.activation, counter, quant));
    }
    return t;
}

namespace detail {

inline Tensor init_matrix(i64 rows, i64 cols, Rng& rng, double stddev = 0.02) {
    Tensor t = Tensor::zeros({rows, cols}, true);
    for (double& v : t.values()) v = rng.truncated_normal(stddev);
    return t;
}

} // namespace detail

/// All matrices i.i.d. normal(0, 0.02) truncated at ±2σ, in a fixed draw
/// order, so a seed pins every parameter bit. Disabled head/merge layers
/// allocate no parameters.
inline MHMoEParams init_params(const MoEConfig& cfg, Rng& rng) {
    cfg.validate();
    MHMoEParams p;
    if (cfg.use_head_layer) p.w_head = detail::init_matrix(cfg.d, cfg.d, rng);
    if (cfg.use_merge_layer) p.w_merge = detail::init_matrix(cfg.d, cfg.d, rng);
    p.gate = detail::init_matrix(cfg.sub_dim(), cfg.n_experts, rng);
    p.experts.reserve(static_cast<std::size_t>(cfg.n_experts));
    for (i64 e = 0; e < cfg.n_experts; ++e) {
        ExpertParams ep;
        ep.w1 = detail::init_matrix(cfg.sub_dim(), cfg.d_expert, rng);
        ep.w2 = detail::init_matrix(cfg.d_expert, cfg.sub_dim(), rng);
        if (cfg.activation == Activation::swiglu3mat)
            ep.w3 = detail::init_matrix(cfg.sub_dim(), cfg.d_expert, rng);
        p.experts.push_back(std::move(ep));
    }
    if (cfg.shared_expert_dim) {
        ExpertParams sp;
        sp.w1 = detail::init_matrix(cfg.d, *cfg.shared_expert_dim, rng);
        sp.w2 = detail::init_matrix(*cfg.shared_expert_dim, cfg.d, rng);
        if (cfg.activation == Activation::swiglu3mat)
            sp.w3 = detail::init_matrix(cfg.d, *cfg.shared_expert_dim, rng);
        p.shared = std::move(sp);
    }
    return p;
}

/// Switch-style balance loss: E · Σ_e fraction_routed(e) · mean_gate_prob(e).
/// Equals 1 under perfectly uniform routing.
inline double load_balance_loss(const RoutingDecision& decision, i64 n_experts) {
    const i64 rows = decision.rows;
    if (rows == 0) return 0.0;
    std::vector<double> fraction(static_cast<std::size_t>(n_experts), 0.0);
    for (const i64 e : decision.indices) fraction[static_cast<std::size_t>(e)] += 1.0;
    for (double& f : fraction) f /= static_cast<double>(rows * decision.k);

    double loss = 0.0;
    for (i64 e = 0; e < n_experts; ++e) {
        double mean_prob = 0.0;
        for (i64 r = 0; r < rows; ++r)
            mean_prob += decision.probs.at(r, e);
        mean_prob /= static_cast<double>(rows);
        loss += fraction[static_cast<std::size_t>(e)] * mean_prob;
    }
    return static_cast<double>(n_experts) * loss;
}

/// Differentiable twin of load_balance_loss: the dispatch fractions are
/// constants, gradients flow through the mean gate probabilities.
inline Tensor balance_loss_tensor(const RoutingDecision& decision, i64 n_experts) {
    const i64 rows = decision.rows;
    std::vector<double> fraction(static_cast<std::size_t>(n_experts), 0.0);
    for (const i64 e : decision.indices) fraction[static_cast<std::size_t>(e)] += 1.0;
    for (double& f : fraction) f /= static_cast<double>(rows * decision.k);

    const double value = load_balance_loss(decision, n_experts);
    return detail::make_op_result(
        {1}, {value}, {decision.probs},
        [rows, n_experts, fraction = std::move(fraction)](detail::TensorNode& o) {
            detail::TensorNode& p = *o.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const double up = o.grad[0] * static_cast<double>(n_experts) / static_cast<double>(rows);
            for (i64 r = 0; r < rows; ++r)
                for (i64 e = 0; e < n_experts; ++e)
                    p.grad[static_cast<std::size_t>(r * n_experts + e)] +=
                        up * fraction[static_cast<std::size_t>(e)];
        });
}

} // namespace moelab
