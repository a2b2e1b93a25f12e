// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <vector>

#include "moelab/ops.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

/// Weight quantization applied to every linear projection of a model.
///  - off:     full-precision pipeline, bit-exact ordinary matmul
///  - ternary: absmean scaling, weights rounded to {-1, 0, +1}
///  - binary:  sign weights {-1, +1} with absmean scaling (comparison mode)
enum class QuantMode { off, ternary, binary };

inline const char* to_string(QuantMode m) {
    switch (m) {
        case QuantMode::off: return "off";
        case QuantMode::ternary: return "ternary";
        case QuantMode::binary: return "binary";
    }
    return "?";
}

constexpr double kQuantEps = 1e-8;

/// Snapshot of one quantized projection. The latent matrix is what training
/// updates; the effective forward weight is gamma * w_quant.
struct QuantizedLinear {
    Tensor w_latent;
    double gamma = 0.0;
    Tensor w_quant; // same shape, entries in {-1, 0, +1}
};

/// gamma = mean |W|; W_quant = round(clip(W / (gamma + eps), -1, 1)).
inline QuantizedLinear quantize_weights(const Tensor& w, QuantMode mode = QuantMode::ternary) {
    if (w.numel() == 0) throw ShapeError("quantize_weights: empty tensor");
    double gamma = 0.0;
    for (const double v : w.values()) gamma += std::abs(v);
    gamma /= static_cast<double>(w.numel());

    std::vector<double> q(w.numel());
    if (mode == QuantMode::binary) {
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = w.values()[i] >= 0.0 ? 1.0 : -1.0;
    } else {
        const double inv = 1.0 / (gamma + kQuantEps);
        for (std::size_t i = 0; i < q.size(); ++i) {
            double s = w.values()[i] * inv;
            s = std::min(1.0, std::max(-1.0, s));
            q[i] = std::round(s);
        }
    }
    return {w.clone_detached(false), gamma, Tensor::from_data(w.shape(), std::move(q))};
}

namespace detail {

/// 8-bit per-row absmax quantize/dequantize of activation values. All-zero
/// rows pass through unchanged.
inline std::vector<double> quantize_activation_values(const Tensor& x) {
    require_2d(x, "quantize_activations");
    const i64 n = x.rows(), c = x.cols();
    std::vector<double> out(x.numel());
    for (i64 i = 0; i < n; ++i) {
        const double* row = x.data() + i * c;
        double mx = 0.0;
        for (i64 j = 0; j < c; ++j) mx = std::max(mx, std::abs(row[j]));
        double* o = out.data() + i * c;
        if (mx == 0.0) {
            for (i64 j = 0; j < c; ++j) o[j] = row[j];
        } else {
            const double s = 127.0 / mx;
            for (i64 j = 0; j < c; ++j) o[j] = std::round(row[j] * s) / s;
        }
    }
    return out;
}

/// Shared forward/backward of the quantized projection. Forward runs
/// actquant(x) · (gamma · W_quant); the straight-through backward treats both
/// quantizers as identity, so gradients flow as for x · W_latent, with the
/// latent-weight gradient zeroed where |W / (gamma + eps)| > 1 (ternary only).
inline Tensor quantized_apply(const Tensor& x, const Tensor& w_latent,
                              const QuantizedLinear& q, OpCounter* counter, QuantMode mode) {
    require_2d(x, "quantized_forward");
    require_2d(w_latent, "quantized_forward");
    const i64 m = x.rows(), n = x.cols(), p = w_latent.cols();
    if (w_latent.rows() != n)
        throw ShapeError("quantized_forward: inner dimensions disagree, " + shape_str(x.shape()) +
                         " x " + shape_str(w_latent.shape()));
    if (counter) counter->count_matmul(m, p, n);

    const std::vector<double> xq = quantize_activation_values(x);
    std::vector<double> w_eff(q.w_quant.numel());
    for (std::size_t i = 0; i < w_eff.size(); ++i) w_eff[i] = q.gamma * q.w_quant.values()[i];

    std::vector<double> out(static_cast<std::size_t>(m * p), 0.0);
    kernels::mm_nn(xq.data(), w_eff.data(), out.data(), m, n, p);

    const double clip_inv = 1.0 / (q.gamma + kQuantEps);
    return make_op_result(
        {m, p}, std::move(out), {x, w_latent},
        [m, n, p, clip_inv, mode](detail::TensorNode& o) {
            detail::TensorNode& px = *o.parents[0];
            detail::TensorNode& pw = *o.parents[1];
            if (px.requires_grad) {
                px.ensure_grad();
                kernels::mm_nt(o.grad.data(), pw.value.data(), px.grad.data(), m, p, n);
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                if (mode == QuantMode::ternary) {
                    std::vector<double> gw(pw.value.size(), 0.0);
                    kernels::mm_tn(px.value.data(), o.grad.data(), gw.data(), m, n, p);
                    for (std::size_t i = 0; i < gw.size(); ++i)
                        if (std::abs(pw.value[i] * clip_inv) <= 1.0) pw.grad[i] += gw[i];
                } else {
                    kernels::mm_tn(px.value.data(), o.grad.data(), pw.grad.data(), m, n, p);
                }
            }
        });
}

} // namespace detail

/// Applies a frozen quantized projection: actquant(x) · (gamma · W_quant),
/// counted like an ordinary matmul.
inline Tensor quantized_forward(const Tensor& x, const QuantizedLinear& q,
                                OpCounter* counter = nullptr, QuantMode mode = QuantMode::ternary) {
    return detail::quantized_apply(x, q.w_latent, q, counter, mode);
}

/// Training-path projection: re-quantizes the latent weight each call and
/// records the straight-through backward against it.
inline Tensor quantized_matmul(const Tensor& x, const Tensor& w_latent,
                               OpCounter* counter = nullptr, QuantMode mode = QuantMode::ternary) {
    const QuantizedLinear q = quantize_weights(w_latent, mode);
    return detail::quantized_apply(x, w_latent, q, counter, mode);
}

/// One projection entry point for every linear in the stack. QuantMode::off
/// reproduces the plain matmul bit-exactly.
inline Tensor linear(const Tensor& x, const Tensor& w, OpCounter* counter = nullptr,
                     QuantMode mode = QuantMode::off) {
    if (mode == QuantMode::off) return matmul(x, w, counter);
    return quantized_matmul(x, w, counter, mode);
}

} // namespace moelab
