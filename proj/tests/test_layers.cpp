// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "moelab/layers.hpp"
#include "moelab/ops.hpp"
#include "moelab/rng.hpp"

using namespace moelab;

namespace {

Tensor random_tensor(std::vector<i64> shape, Rng& rng, bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = rng.normal();
    return t;
}

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 i64 m, i64 n, i64 p) {
    std::vector<double> out(static_cast<std::size_t>(m * p), 0.0);
    for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < p; ++j) {
            double s = 0.0;
            for (i64 k = 0; k < n; ++k)
                s += a[static_cast<std::size_t>(i * n + k)] * b[static_cast<std::size_t>(k * p + j)];
            out[static_cast<std::size_t>(i * p + j)] = s;
        }
    return out;
}

// Independent expert FFN: straight loops, no tensor machinery.
std::vector<double> naive_ffn(const std::vector<double>& x, i64 rows, i64 ds,
                              const ExpertParams& p, Activation act) {
    const i64 de = p.w1.cols();
    std::vector<double> h1 = naive_matmul(x, p.w1.values(), rows, ds, de);
    if (act == Activation::relu2mat) {
        for (double& v : h1) v = std::max(v, 0.0);
        return naive_matmul(h1, p.w2.values(), rows, de, ds);
    }
    const std::vector<double> h3 = naive_matmul(x, p.w3->values(), rows, ds, de);
    for (std::size_t i = 0; i < h1.size(); ++i) {
        const double v = h1[i];
        h1[i] = v / (1.0 + std::exp(-v)) * h3[i];
    }
    return naive_matmul(h1, p.w2.values(), rows, de, ds);
}

struct NaiveRouting {
    std::vector<std::vector<i64>> topk;      // per row
    std::vector<std::vector<double>> weight; // per row, renormalized
    std::vector<std::vector<double>> probs;  // per row, full softmax
};

NaiveRouting naive_route(const std::vector<double>& x, i64 rows, i64 ds, const Tensor& gate,
                         i64 k) {
    const i64 E = gate.cols();
    NaiveRouting r;
    for (i64 row = 0; row < rows; ++row) {
        const std::vector<double> scores =
            naive_matmul({x.begin() + row * ds, x.begin() + (row + 1) * ds}, gate.values(), 1, ds, E);
        double mx = *std::max_element(scores.begin(), scores.end());
        std::vector<double> probs(static_cast<std::size_t>(E));
        double denom = 0.0;
        for (i64 e = 0; e < E; ++e) {
            probs[static_cast<std::size_t>(e)] = std::exp(scores[static_cast<std::size_t>(e)] - mx);
            denom += probs[static_cast<std::size_t>(e)];
        }
        for (double& v : probs) v /= denom;
        std::vector<i64> order(static_cast<std::size_t>(E));
        std::iota(order.begin(), order.end(), i64{0});
        std::sort(order.begin(), order.end(), [&](i64 a, i64 b) {
            return probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)]
                       ? probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]
                       : a < b;
        });
        order.resize(static_cast<std::size_t>(k));
        double sum = 0.0;
        for (const i64 e : order) sum += probs[static_cast<std::size_t>(e)];
        std::vector<double> w;
        for (const i64 e : order) w.push_back(probs[static_cast<std::size_t>(e)] / sum);
        r.topk.push_back(order);
        r.weight.push_back(std::move(w));
        r.probs.push_back(std::move(probs));
    }
    return r;
}

// Dense oracle: evaluate every expert on every row, zero-mask the unselected.
std::vector<double> dense_moe_oracle(const std::vector<double>& x, i64 rows,
                                     const MHMoEParams& params, const MoEConfig& cfg) {
    const i64 ds = cfg.sub_dim();
    const NaiveRouting routing = naive_route(x, rows, ds, params.gate, cfg.top_k);
    std::vector<double> out(static_cast<std::size_t>(rows * ds), 0.0);
    for (i64 e = 0; e < cfg.n_experts; ++e) {
        const std::vector<double> ye =
            naive_ffn(x, rows, ds, params.experts[static_cast<std::size_t>(e)], cfg.activation);
        for (i64 row = 0; row < rows; ++row) {
            double w = 0.0;
            for (std::size_t s = 0; s < routing.topk[static_cast<std::size_t>(row)].size(); ++s)
                if (routing.topk[static_cast<std::size_t>(row)][s] == e)
                    w = routing.weight[static_cast<std::size_t>(row)][s];
            for (i64 c = 0; c < ds; ++c)
                out[static_cast<std::size_t>(row * ds + c)] +=
                    w * ye[static_cast<std::size_t>(row * ds + c)];
        }
    }
    return out;
}

MoEConfig small_cfg(Activation act) {
    MoEConfig cfg;
    cfg.d = 8;
    cfg.h = 2;
    cfg.d_expert = 6;
    cfg.n_experts = 4;
    cfg.top_k = 2;
    cfg.activation = act;
    return cfg;
}

} // namespace

TEST_CASE("expert_forward maps zero to zero") {
    Rng rng(1);
    for (const Activation act : {Activation::relu2mat, Activation::swiglu3mat}) {
        MoEConfig cfg = small_cfg(act);
        const MHMoEParams p = init_params(cfg, rng);
        const Tensor y = expert_forward(Tensor::zeros({3, cfg.sub_dim()}), p.experts[0], act);
        for (const double v : y.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("expert_forward with identity blocks reproduces non-negative input") {
    const i64 ds = 3, de = 6;
    ExpertParams p;
    p.w1 = Tensor::zeros({ds, de});
    p.w2 = Tensor::zeros({de, ds});
    for (i64 i = 0; i < ds; ++i) {
        p.w1.at(i, i) = 1.0;
        p.w2.at(i, i) = 1.0;
    }
    const Tensor x = Tensor::from_data({2, 3}, {0.5, 1.5, 0.0, 2.0, 0.25, 3.0});
    const Tensor y = expert_forward(x, p, Activation::relu2mat);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("expert_forward matches a straight matmul oracle") {
    for (u64 seed = 0; seed < 10; ++seed) {
        for (const Activation act : {Activation::relu2mat, Activation::swiglu3mat}) {
            Rng rng(derive_seed(5, "expert-oracle", seed));
            ExpertParams p;
            p.w1 = random_tensor({4, 8}, rng);
            p.w2 = random_tensor({8, 4}, rng);
            if (act == Activation::swiglu3mat) p.w3 = random_tensor({4, 8}, rng);
            const Tensor x = random_tensor({2, 4}, rng);
            const Tensor y = expert_forward(x, p, act);
            const std::vector<double> expect = naive_ffn(x.values(), 2, 4, p, act);
            for (std::size_t i = 0; i < expect.size(); ++i)
                CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("route_topk with k == E is the plain softmax") {
    const Tensor x = Tensor::from_data({1, 1}, {1.0});
    const Tensor gate = Tensor::from_data({1, 2}, {0.3, -0.8});
    const RoutingDecision d = route_topk(x, gate, 2);
    const Tensor probs = softmax_rows(Tensor::from_data({1, 2}, {0.3, -0.8}));
    for (i64 s = 0; s < 2; ++s) {
        const i64 e = d.index_at(0, s);
        CHECK(d.weights.at(0, s) ==
              doctest::Approx(probs.values()[static_cast<std::size_t>(e)]).epsilon(1e-14));
    }
}

TEST_CASE("route_topk picks the arg max for k=1") {
    const Tensor x = Tensor::from_data({1, 1}, {1.0});
    const Tensor gate = Tensor::from_data({1, 3}, {0.1, 0.9, 0.5});
    const RoutingDecision d = route_topk(x, gate, 1);
    CHECK(d.index_at(0, 0) == 1);
    CHECK(d.weights.at(0, 0) == 1.0);
}

TEST_CASE("route_topk matches an exhaustive sort oracle") {
    for (u64 seed = 0; seed < 15; ++seed) {
        Rng rng(derive_seed(9, "route-oracle", seed));
        const i64 rows = 6, ds = 4, E = 5, k = 2;
        const Tensor x = random_tensor({rows, ds}, rng);
        const Tensor gate = random_tensor({ds, E}, rng);
        const RoutingDecision d = route_topk(x, gate, k);
        const NaiveRouting expect = naive_route(x.values(), rows, ds, gate, k);
        for (i64 r = 0; r < rows; ++r) {
            double wsum = 0.0;
            for (i64 s = 0; s < k; ++s) {
                CHECK(d.index_at(r, s) == expect.topk[static_cast<std::size_t>(r)][static_cast<std::size_t>(s)]);
                CHECK(d.weights.at(r, s) ==
                      doctest::Approx(expect.weight[static_cast<std::size_t>(r)][static_cast<std::size_t>(s)])
                          .epsilon(1e-12));
                CHECK(d.weights.at(r, s) > 0.0);
                wsum += d.weights.at(r, s);
            }
            CHECK(std::abs(wsum - 1.0) < 1e-12);
            CHECK(d.index_at(r, 0) != d.index_at(r, 1));
        }
    }
}

TEST_CASE("route_topk breaks ties toward the lower expert index") {
    const Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0});
    // duplicated columns give exactly equal scores
    const Tensor gate = Tensor::from_data({2, 4}, {0.5, 0.5, 0.1, 0.1, -0.25, -0.25, 0.7, 0.7});
    const RoutingDecision d = route_topk(x, gate, 2);
    const std::vector<i64> got{d.index_at(0, 0), d.index_at(0, 1)};
    // columns {2,3} score highest (tied), so 2 wins the tie, then 3
    CHECK(got == std::vector<i64>{2, 3});
}

TEST_CASE("moe_forward with a single expert equals expert_forward") {
    Rng rng(21);
    MoEConfig cfg = small_cfg(Activation::swiglu3mat);
    cfg.n_experts = 1;
    cfg.top_k = 1;
    const MHMoEParams p = init_params(cfg, rng);
    const Tensor x = random_tensor({5, cfg.sub_dim()}, rng);
    const Tensor a = moe_forward(x, p, cfg);
    const Tensor b = expert_forward(x, p.experts[0], cfg.activation);
    for (std::size_t i = 0; i < a.numel(); ++i)
        CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-14));
}

TEST_CASE("moe_forward is routing-independent when all experts share parameters") {
    Rng rng(22);
    MoEConfig cfg = small_cfg(Activation::relu2mat);
    MHMoEParams p = init_params(cfg, rng);
    for (i64 e = 1; e < cfg.n_experts; ++e) {
        p.experts[static_cast<std::size_t>(e)].w1 = p.experts[0].w1.clone_detached(true);
        p.experts[static_cast<std::size_t>(e)].w2 = p.experts[0].w2.clone_detached(true);
    }
    const Tensor x = random_tensor({6, cfg.sub_dim()}, rng);
    const Tensor routed = moe_forward(x, p, cfg);
    const Tensor single = expert_forward(x, p.experts[0], cfg.activation);
    for (std::size_t i = 0; i < routed.numel(); ++i)
        CHECK(routed.values()[i] == doctest::Approx(single.values()[i]).epsilon(1e-12));
}

TEST_CASE("moe_forward matches the dense all-experts oracle") {
    for (u64 seed = 0; seed < 10; ++seed) {
        for (const Activation act : {Activation::relu2mat, Activation::swiglu3mat}) {
            Rng rng(derive_seed(33, "moe-dense-oracle", seed));
            const MoEConfig cfg = small_cfg(act);
            const MHMoEParams p = init_params(cfg, rng);
            const Tensor x = random_tensor({7, cfg.sub_dim()}, rng);
            const Tensor y = moe_forward(x, p, cfg);
            const std::vector<double> expect = dense_moe_oracle(x.values(), 7, p, cfg);
            for (std::size_t i = 0; i < expect.size(); ++i)
                CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("moe_forward only runs the selected experts") {
    Rng rng(35);
    MoEConfig cfg = small_cfg(Activation::relu2mat);
    cfg.top_k = 1;
    const MHMoEParams p = init_params(cfg, rng);
    const Tensor x = random_tensor({4, cfg.sub_dim()}, rng);
    OpCounter counter;
    moe_forward(x, p, cfg, &counter);
    // 4 rows, one activation each: k * rows * (4*ds*de - ds - de) total ops
    const i64 ds = cfg.sub_dim(), de = cfg.d_expert;
    CHECK(counter.flops() == static_cast<u64>(4 * (4 * ds * de - ds - de)));
}

TEST_CASE("mhmoe_forward with h=1 and identity projections reduces to SMoE bit-exactly") {
    for (u64 seed = 0; seed < 50; ++seed) {
        Rng rng(derive_seed(44, "reduction", seed));
        MoEConfig cfg;
        cfg.d = 6;
        cfg.h = 1;
        cfg.d_expert = 5;
        cfg.n_experts = 3;
        cfg.top_k = 2;
        cfg.activation = seed % 2 ? Activation::relu2mat : Activation::swiglu3mat;
        MHMoEParams p = init_params(cfg, rng);
        p.w_head = Tensor::zeros({cfg.d, cfg.d});
        p.w_merge = Tensor::zeros({cfg.d, cfg.d});
        for (i64 i = 0; i < cfg.d; ++i) {
            p.w_head.at(i, i) = 1.0;
            p.w_merge.at(i, i) = 1.0;
        }
        const Tensor x = random_tensor({4, cfg.d}, rng);
        const Tensor full = mhmoe_forward(x, p, cfg);
        const Tensor plain = moe_forward(x, p, cfg);
        CHECK(full.values() == plain.values());
    }
}

TEST_CASE("disabled head and merge layers leave only split/moe/merge") {
    Rng rng(45);
    MoEConfig cfg = small_cfg(Activation::swiglu3mat);
    cfg.use_head_layer = false;
    cfg.use_merge_layer = false;
    const MHMoEParams p = init_params(cfg, rng);
    const Tensor x = random_tensor({3, cfg.d}, rng);
    const Tensor got = mhmoe_forward(x, p, cfg);
    const Tensor expect = merge_last_dim(moe_forward(split_last_dim(x, cfg.h), p, cfg), cfg.h);
    CHECK(got.values() == expect.values());
}

TEST_CASE("mhmoe_forward matches the five-stage oracle") {
    for (u64 seed = 0; seed < 8; ++seed) {
        for (const Activation act : {Activation::relu2mat, Activation::swiglu3mat}) {
            Rng rng(derive_seed(55, "staged-oracle", seed));
            const MoEConfig cfg = small_cfg(act);
            const MHMoEParams p = init_params(cfg, rng);
            const i64 B = 2, d = cfg.d, h = cfg.h, ds = cfg.sub_dim();
            const Tensor x = random_tensor({B, d}, rng);

            // stage 1: head projection
            std::vector<double> t = naive_matmul(x.values(), p.w_head.values(), B, d, d);
            // stage 2: sub-token split
            std::vector<double> split(static_cast<std::size_t>(B * d));
            for (i64 i = 0; i < B; ++i)
                for (i64 j = 0; j < h; ++j)
                    for (i64 c = 0; c < ds; ++c)
                        split[static_cast<std::size_t>((i * h + j) * ds + c)] =
                            t[static_cast<std::size_t>(i * d + j * ds + c)];
            // stage 3: routed experts
            const std::vector<double> routed = dense_moe_oracle(split, B * h, p, cfg);
            // stage 4: merge sub-tokens
            std::vector<double> merged(static_cast<std::size_t>(B * d));
            for (i64 i = 0; i < B; ++i)
                for (i64 j = 0; j < h; ++j)
                    for (i64 c = 0; c < ds; ++c)
                        merged[static_cast<std::size_t>(i * d + j * ds + c)] =
                            routed[static_cast<std::size_t>((i * h + j) * ds + c)];
            // stage 5: merge projection
            const std::vector<double> expect = naive_matmul(merged, p.w_merge.values(), B, d, d);

            const Tensor y = mhmoe_forward(x, p, cfg);
            for (std::size_t i = 0; i < expect.size(); ++i)
                CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("shared expert adds a full-width FFN of the layer input") {
    Rng rng(66);
    MoEConfig cfg = small_cfg(Activation::swiglu3mat);
    cfg.shared_expert_dim = 5;
    const MHMoEParams p = init_params(cfg, rng);
    const Tensor x = random_tensor({3, cfg.d}, rng);

    MoEConfig routed_only = cfg;
    routed_only.shared_expert_dim.reset();
    const Tensor base = mhmoe_forward(x, p, routed_only);
    const Tensor shared = expert_forward(x, *p.shared, cfg.activation);
    const Tensor y = mhmoe_forward(x, p, cfg);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(y.values()[i] == doctest::Approx(base.values()[i] + shared.values()[i]).epsilon(1e-12));
}

TEST_CASE("token rows permute equivariantly") {
    Rng rng(77);
    const MoEConfig cfg = small_cfg(Activation::swiglu3mat);
    const MHMoEParams p = init_params(cfg, rng);
    const Tensor x = random_tensor({5, cfg.d}, rng);
    const std::vector<i64> perm{3, 0, 4, 1, 2};

    Tensor xp = Tensor::zeros({5, cfg.d});
    for (i64 r = 0; r < 5; ++r)
        for (i64 c = 0; c < cfg.d; ++c) xp.at(r, c) = x.at(perm[static_cast<std::size_t>(r)], c);

    const Tensor y = mhmoe_forward(x, p, cfg);
    const Tensor yp = mhmoe_forward(xp, p, cfg);
    for (i64 r = 0; r < 5; ++r)
        for (i64 c = 0; c < cfg.d; ++c)
            CHECK(yp.at(r, c) == y.at(perm[static_cast<std::size_t>(r)], c));
}

TEST_CASE("sibling sub-tokens can route to different experts") {
    Rng rng(88);
    const MoEConfig cfg = small_cfg(Activation::relu2mat);
    const MHMoEParams p = init_params(cfg, rng);
    bool found = false;
    for (int trial = 0; trial < 200 && !found; ++trial) {
        const Tensor x = random_tensor({1, cfg.d}, rng);
        RoutingDecision routing;
        mhmoe_forward(x, p, cfg, nullptr, QuantMode::off, &routing);
        // rows 0 and 1 are the two sub-tokens of the single token
        if (routing.index_at(0, 0) != routing.index_at(1, 0)) found = true;
    }
    CHECK(found);
}

TEST_CASE("disabling the head layer removes exactly its counted operations") {
    Rng rng(99);
    MoEConfig cfg = small_cfg(Activation::swiglu3mat);
    const MHMoEParams p = init_params(cfg, rng);
    const i64 B = 5;
    const Tensor x = random_tensor({B, cfg.d}, rng);

    OpCounter with_head, without_head;
    mhmoe_forward(x, p, cfg, &with_head);
    MoEConfig ablated = cfg;
    ablated.use_head_layer = false;
    mhmoe_forward(x, p, ablated, &without_head);
    const i64 expected_drop = 2 * B * cfg.d * cfg.d - B * cfg.d;
    CHECK(with_head.flops() - without_head.flops() == static_cast<u64>(expected_drop));
}

TEST_CASE("layer gradients pass finite-difference checks") {
    for (const Activation act : {Activation::relu2mat, Activation::swiglu3mat}) {
        for (const bool with_shared : {false, true}) {
            Rng rng(derive_seed(111, "layer-grad", static_cast<u64>(with_shared) * 2 +
                                                       static_cast<u64>(act == Activation::swiglu3mat)));
            MoEConfig cfg;
            cfg.d = 6;
            cfg.h = 2;
            cfg.d_expert = 4;
            cfg.n_experts = 3;
            cfg.top_k = 2;
            cfg.activation = act;
            if (with_shared) cfg.shared_expert_dim = 4;
            MHMoEParams p = init_params(cfg, rng);
            const Tensor x = random_tensor({3, cfg.d}, rng);

            const auto loss_with = [&](Tensor& slot, const Tensor& probe) {
                const Tensor saved = slot;
                slot = probe;
                const Tensor y = mhmoe_forward(x, p, cfg);
                const Tensor loss = mean_all(hadamard(y, y));
                slot = saved;
                return loss;
            };

            for (Tensor* param : {&p.w_head, &p.w_merge, &p.gate, &p.experts[0].w1,
                                  &p.experts[1].w2}) {
                const double err = finite_difference_check(
                    [&](const Tensor& probe) { return loss_with(*param, probe); }, *param);
                CHECK(err < 1e-4);
            }
        }
    }
}

TEST_CASE("init_params is seed-deterministic with the right arity") {
    MoEConfig cfg = small_cfg(Activation::swiglu3mat);
    cfg.n_experts = 8;
    Rng a(123), b(123);
    const MHMoEParams pa = init_params(cfg, a);
    const MHMoEParams pb = init_params(cfg, b);
    CHECK(pa.experts.size() == 8);
    CHECK(pa.w_head.values() == pb.w_head.values());
    CHECK(pa.gate.values() == pb.gate.values());
    for (std::size_t e = 0; e < 8; ++e)
        CHECK(pa.experts[e].w1.values() == pb.experts[e].w1.values());
}

TEST_CASE("init_params sample mean is within 3 sigma / sqrt(n) of zero") {
    MoEConfig cfg;
    cfg.d = 32;
    cfg.h = 2;
    cfg.d_expert = 64;
    cfg.n_experts = 2;
    cfg.top_k = 1;
    cfg.activation = Activation::relu2mat;
    Rng rng(314);
    const MHMoEParams p = init_params(cfg, rng);
    for (const Tensor* t : {&p.w_head, &p.experts[0].w1, &p.experts[1].w2}) {
        double mean = 0.0;
        for (const double v : t->values()) mean += v;
        mean /= static_cast<double>(t->numel());
        CHECK(std::abs(mean) < 3.0 * 0.02 / std::sqrt(static_cast<double>(t->numel())));
    }
}

TEST_CASE("balance loss is 1 under uniform routing and E when collapsed") {
    const i64 E = 4;
    RoutingDecision uniform;
    uniform.rows = 8;
    uniform.k = 1;
    uniform.n_experts = E;
    uniform.probs = Tensor::full({8, E}, 1.0 / static_cast<double>(E));
    for (i64 r = 0; r < 8; ++r) uniform.indices.push_back(r % E);
    uniform.weights = Tensor::full({8, 1}, 1.0);
    CHECK(load_balance_loss(uniform, E) == doctest::Approx(1.0).epsilon(1e-12));

    RoutingDecision collapsed;
    collapsed.rows = 8;
    collapsed.k = 1;
    collapsed.n_experts = E;
    collapsed.probs = Tensor::zeros({8, E});
    for (i64 r = 0; r < 8; ++r) {
        collapsed.probs.at(r, 2) = 1.0;
        collapsed.indices.push_back(2);
    }
    collapsed.weights = Tensor::full({8, 1}, 1.0);
    CHECK(load_balance_loss(collapsed, E) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("balance loss matches the direct formula on random routings") {
    for (u64 seed = 0; seed < 10; ++seed) {
        Rng rng(derive_seed(271, "balance-oracle", seed));
        const i64 rows = 9, ds = 4, E = 5, k = 2;
        const Tensor x = random_tensor({rows, ds}, rng);
        const Tensor gate = random_tensor({ds, E}, rng);
        const RoutingDecision d = route_topk(x, gate, k);

        double expect = 0.0;
        for (i64 e = 0; e < E; ++e) {
            double fraction = 0.0;
            for (const i64 sel : d.indices) fraction += sel == e ? 1.0 : 0.0;
            fraction /= static_cast<double>(rows * k);
            double mean_prob = 0.0;
            for (i64 r = 0; r < rows; ++r) mean_prob += d.probs.at(r, e);
            mean_prob /= static_cast<double>(rows);
            expect += fraction * mean_prob;
        }
        expect *= static_cast<double>(E);
        CHECK(load_balance_loss(d, E) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(balance_loss_tensor(d, E).item() == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("balance loss gradient flows into the gate") {
    Rng rng(272);
    const i64 rows = 6, ds = 4, E = 3, k = 1;
    Tensor gate = random_tensor({ds, E}, rng, true);
    const Tensor x = random_tensor({rows, ds}, rng);
    const RoutingDecision d = route_topk(x, gate, k);
    backward(balance_loss_tensor(d, E));
    double norm = 0.0;
    for (const double g : gate.grad()) norm += std::abs(g);
    CHECK(norm > 0.0);
}

TEST_CASE("config validation catches bad dimensions") {
    MoEConfig cfg = small_cfg(Activation::relu2mat);
    cfg.h = 3; // does not divide d = 8
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_cfg(Activation::relu2mat);
    cfg.top_k = 9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
