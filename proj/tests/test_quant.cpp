// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "moelab/quant.hpp"
#include "moelab/rng.hpp"

using namespace moelab;

namespace {

Tensor random_tensor(std::vector<i64> shape, Rng& rng, bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = rng.normal();
    return t;
}

// independent per-row absmax 8-bit quantize/dequantize
std::vector<double> actquant_oracle(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (i64 i = 0; i < x.rows(); ++i) {
        double mx = 0.0;
        for (i64 j = 0; j < x.cols(); ++j) mx = std::max(mx, std::abs(x.at(i, j)));
        for (i64 j = 0; j < x.cols(); ++j) {
            const double v = x.at(i, j);
            out[static_cast<std::size_t>(i * x.cols() + j)] =
                mx == 0.0 ? v : std::round(v * 127.0 / mx) * mx / 127.0;
        }
    }
    return out;
}

} // namespace

TEST_CASE("uniform magnitudes quantize to unit ternary values") {
    const Tensor w = Tensor::from_data({2, 2}, {0.5, -0.5, 0.5, -0.5});
    const QuantizedLinear q = quantize_weights(w);
    CHECK(q.gamma == 0.5);
    CHECK(q.w_quant.values() == std::vector<double>{1, -1, 1, -1});
}

TEST_CASE("the zero matrix quantizes to zero") {
    const QuantizedLinear q = quantize_weights(Tensor::zeros({3, 4}));
    CHECK(q.gamma == 0.0);
    for (const double v : q.w_quant.values()) CHECK(v == 0.0);
}

TEST_CASE("quantized weights match the elementwise recipe and bound the round-trip") {
    for (u64 seed = 0; seed < 15; ++seed) {
        Rng rng(derive_seed(3, "quant-oracle", seed));
        const Tensor w = random_tensor({5, 7}, rng);
        const QuantizedLinear q = quantize_weights(w);

        double gamma = 0.0;
        for (const double v : w.values()) gamma += std::abs(v);
        gamma /= static_cast<double>(w.numel());
        CHECK(q.gamma == doctest::Approx(gamma).epsilon(1e-15));

        double max_abs = 0.0, max_err = 0.0;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double expect =
                std::round(std::min(1.0, std::max(-1.0, w.values()[i] / (gamma + 1e-8))));
            CHECK(q.w_quant.values()[i] == expect);
            CHECK((expect == -1.0 || expect == 0.0 || expect == 1.0));
            max_abs = std::max(max_abs, std::abs(w.values()[i]));
            max_err = std::max(max_err, std::abs(w.values()[i] - gamma * q.w_quant.values()[i]));
        }
        CHECK(max_err <= max_abs);
    }
}

TEST_CASE("effective weights take at most the three values -gamma, 0, +gamma") {
    Rng rng(17);
    const QuantizedLinear q = quantize_weights(random_tensor({6, 6}, rng));
    for (const double v : q.w_quant.values()) {
        const double eff = q.gamma * v;
        CHECK((eff == -q.gamma || eff == 0.0 || eff == q.gamma));
    }
}

TEST_CASE("binary mode uses sign weights") {
    Rng rng(18);
    const Tensor w = random_tensor({4, 4}, rng);
    const QuantizedLinear q = quantize_weights(w, QuantMode::binary);
    for (std::size_t i = 0; i < w.numel(); ++i)
        CHECK(q.w_quant.values()[i] == (w.values()[i] >= 0.0 ? 1.0 : -1.0));
}

TEST_CASE("identity-pattern quantized forward returns the activation-quantized input") {
    QuantizedLinear q;
    q.w_latent = Tensor::zeros({3, 3});
    q.w_quant = Tensor::zeros({3, 3});
    for (i64 i = 0; i < 3; ++i) {
        q.w_latent.at(i, i) = 1.0;
        q.w_quant.at(i, i) = 1.0;
    }
    q.gamma = 1.0;
    Rng rng(5);
    const Tensor x = random_tensor({4, 3}, rng);
    const Tensor y = quantized_forward(x, q);
    const std::vector<double> expect = actquant_oracle(x);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("zero input maps to zero") {
    Rng rng(6);
    const Tensor w = random_tensor({3, 5}, rng);
    const Tensor y = quantized_matmul(Tensor::zeros({2, 3}), w);
    for (const double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("quantized forward equals the composition of its pieces") {
    for (u64 seed = 0; seed < 10; ++seed) {
        Rng rng(derive_seed(8, "quant-compose", seed));
        const Tensor x = random_tensor({3, 4}, rng);
        const Tensor w = random_tensor({4, 6}, rng);
        const QuantizedLinear q = quantize_weights(w);

        Tensor w_eff = Tensor::zeros({4, 6});
        for (std::size_t i = 0; i < w_eff.numel(); ++i)
            w_eff.values()[i] = q.gamma * q.w_quant.values()[i];
        const Tensor expect = matmul(Tensor::from_data({3, 4}, actquant_oracle(x)), w_eff);

        const Tensor y = quantized_matmul(x, w);
        for (std::size_t i = 0; i < y.numel(); ++i)
            CHECK(y.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
    }
}

TEST_CASE("quantized matmul is counted like an ordinary matmul") {
    Rng rng(9);
    const Tensor x = random_tensor({2, 4}, rng);
    const Tensor w = random_tensor({4, 3}, rng);
    OpCounter plain, quantized;
    matmul(x, w, &plain);
    quantized_matmul(x, w, &quantized);
    CHECK(plain.multiplies == quantized.multiplies);
    CHECK(plain.adds == quantized.adds);
}

TEST_CASE("straight-through gradients equal the unquantized gradients inside the clip range") {
    for (u64 seed = 0; seed < 10; ++seed) {
        Rng rng(derive_seed(12, "ste-inside", seed));
        // all magnitudes equal: |W / gamma| = 1 for every entry, inside the clip
        Tensor w_quant_path = Tensor::zeros({4, 3}, true);
        for (std::size_t i = 0; i < w_quant_path.numel(); ++i)
            w_quant_path.values()[i] = (rng.next_u64() & 1) ? 0.25 : -0.25;
        Tensor w_plain_path = w_quant_path.clone_detached(true);
        Tensor x_quant_path = random_tensor({2, 4}, rng, true);
        Tensor x_plain_path = x_quant_path.clone_detached(true);

        backward(sum_all(quantized_matmul(x_quant_path, w_quant_path)));
        backward(sum_all(matmul(x_plain_path, w_plain_path)));

        for (std::size_t i = 0; i < w_quant_path.numel(); ++i)
            CHECK(w_quant_path.grad()[i] ==
                  doctest::Approx(w_plain_path.grad()[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < x_quant_path.numel(); ++i)
            CHECK(x_quant_path.grad()[i] == x_plain_path.grad()[i]);
    }
}

TEST_CASE("latent entries outside the clip range receive zero gradient") {
    Tensor w = Tensor::from_data({2, 2}, {0.1, -0.1, 5.0, 0.1}, true);
    // gamma = 1.325, so |5.0 / gamma| > 1 while the rest are inside
    const Tensor x = Tensor::from_data({1, 2}, {1.0, 1.0});
    backward(sum_all(quantized_matmul(x, w)));
    CHECK(w.grad()[2] == 0.0);
    CHECK(w.grad()[0] != 0.0);
}

TEST_CASE("QuantMode::off reproduces the plain pipeline bit-exactly") {
    Rng rng(14);
    const Tensor x = random_tensor({3, 5}, rng);
    const Tensor w = random_tensor({5, 4}, rng);
    const Tensor plain = matmul(x, w);
    const Tensor dispatched = linear(x, w, nullptr, QuantMode::off);
    CHECK(plain.values() == dispatched.values());
}

TEST_CASE("a quantized linear model trains") {
    Rng rng(2027);
    Tensor w = random_tensor({4, 1}, rng, true);
    const Tensor target_w = random_tensor({4, 1}, rng);
    const Tensor x = random_tensor({32, 4}, rng);
    const Tensor y_true = matmul(x, target_w);

    double first_loss = 0.0, last_loss = 0.0;
    for (int step = 0; step < 200; ++step) {
        w.zero_grad();
        const Tensor err = sub(quantized_matmul(x, w), y_true);
        const Tensor loss = mean_all(hadamard(err, err));
        backward(loss);
        if (step == 0) first_loss = loss.item();
        last_loss = loss.item();
        for (std::size_t i = 0; i < w.numel(); ++i) w.values()[i] -= 0.05 * w.grad()[i];
    }
    CHECK(last_loss < first_loss * 0.5);
}
