// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "moelab/tensor.hpp"

namespace moelab {

namespace kernels {

// out[m×p] += a[m×n] · b[n×p], ikj order so the b rows stream.
inline void mm_nn(const double* a, const double* b, double* out, i64 m, i64 n, i64 p) {
    for (i64 i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* oi = out + i * p;
        for (i64 k = 0; k < n; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b + k * p;
            for (i64 j = 0; j < p; ++j) oi[j] += aik * bk[j];
        }
    }
}

// out[m×p] += a[m×n] · b[p×n]^T
inline void mm_nt(const double* a, const double* b, double* out, i64 m, i64 n, i64 p) {
    for (i64 i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* oi = out + i * p;
        for (i64 j = 0; j < p; ++j) {
            const double* bj = b + j * n;
            double s = 0.0;
            for (i64 k = 0; k < n; ++k) s += ai[k] * bj[k];
            oi[j] += s;
        }
    }
}

// out[n×p] += a[m×n]^T · b[m×p]
inline void mm_tn(const double* a, const double* b, double* out, i64 m, i64 n, i64 p) {
    for (i64 i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        const double* bi = b + i * p;
        for (i64 k = 0; k < n; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            double* ok = out + k * p;
            for (i64 j = 0; j < p; ++j) ok[j] += aik * bi[j];
        }
    }
}

} // namespace kernels

namespace detail {

inline void require_2d(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

} // namespace detail

/// y = a · b with a [m×n], b [n×p]. Accrues m·p·n multiplies and m·p·(n-1)
/// adds on the counter when one is supplied.
inline Tensor matmul(const Tensor& a, const Tensor& b, OpCounter* counter = nullptr) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const i64 m = a.rows(), n = a.cols(), p = b.cols();
    if (b.rows() != n)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    if (counter) counter->count_matmul(m, p, n);

    std::vector<double> out(static_cast<std::size_t>(m * p), 0.0);
    kernels::mm_nn(a.data(), b.data(), out.data(), m, n, p);

    return detail::make_op_result(
        {m, p}, std::move(out), {a, b}, [m, n, p](detail::TensorNode& o) {
            detail::TensorNode& pa = *o.parents[0];
            detail::TensorNode& pb = *o.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                kernels::mm_nt(o.grad.data(), pb.value.data(), pa.grad.data(), m, p, n);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                kernels::mm_tn(pa.value.data(), o.grad.data(), pb.grad.data(), m, n, p);
            }
        });
}

/// y = a · b^T with a [m×n], b [p×n]. Counted like the equivalent product.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b, OpCounter* counter = nullptr) {
    detail::require_2d(a, "matmul_nt");
    detail::require_2d(b, "matmul_nt");
    const i64 m = a.rows(), n = a.cols(), p = b.rows();
    if (b.cols() != n)
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    if (counter) counter->count_matmul(m, p, n);

    std::vector<double> out(static_cast<std::size_t>(m * p), 0.0);
    kernels::mm_nt(a.data(), b.data(), out.data(), m, n, p);

    return detail::make_op_result(
        {m, p}, std::move(out), {a, b}, [m, n, p](detail::TensorNode& o) {
            detail::TensorNode& pa = *o.parents[0];
            detail::TensorNode& pb = *o.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                // da[m×n] += up[m×p] · b[p×n]
                kernels::mm_nn(o.grad.data(), pb.value.data(), pa.grad.data(), m, p, n);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                // db[p×n] += up[m×p]^T · a[m×n]
                kernels::mm_tn(o.grad.data(), pa.value.data(), pb.grad.data(), m, p, n);
            }
        });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::make_op_result(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& o) {
        for (int side = 0; side < 2; ++side) {
            detail::TensorNode& p = *o.parents[side];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return detail::make_op_result(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& o) {
        detail::TensorNode& pa = *o.parents[0];
        detail::TensorNode& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
        }
    });
}

/// Elementwise product. Accrues one multiply per element; the gating hadamard
/// is the only non-matmul term in the analytic cost formulas.
inline Tensor hadamard(const Tensor& a, const Tensor& b, OpCounter* counter = nullptr) {
    detail::require_same_shape(a, b, "hadamard");
    if (counter) counter->count_hadamard(static_cast<i64>(a.numel()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::make_op_result(a.shape(), std::move(out), {a, b}, [](detail::TensorNode& o) {
        detail::TensorNode& pa = *o.parents[0];
        detail::TensorNode& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.value[i];
        }
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    return detail::make_op_result(x.shape(), std::move(out), {x}, [](detail::TensorNode& o) {
        detail::TensorNode& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (p.value[i] > 0.0) p.grad[i] += o.grad[i];
    });
}

inline Tensor silu(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = v / (1.0 + std::exp(-v));
    }
    return detail::make_op_result(x.shape(), std::move(out), {x}, [](detail::TensorNode& o) {
        detail::TensorNode& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double v = p.value[i];
            const double s = 1.0 / (1.0 + std::exp(-v));
            p.grad[i] += o.grad[i] * s * (1.0 + v * (1.0 - s));
        }
    });
}

/// y = c · x for a plain constant (gate combines, loss scaling). Uncounted.
inline Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x.values()[i];
    return detail::make_op_result(x.shape(), std::move(out), {x}, [c](detail::TensorNode& o) {
        detail::TensorNode& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += c * o.grad[i];
    });
}

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (const double v : x.values()) s += v;
    return detail::make_op_result({1}, {s}, {x}, [](detail::TensorNode& o) {
        detail::TensorNode& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o.grad[0];
    });
}

inline Tensor mean_all(const Tensor& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

/// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-12.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_2d(a, "softmax_rows");
    const i64 m = a.rows(), n = a.cols();
    std::vector<double> out(a.numel());
    for (i64 i = 0; i < m; ++i) {
        const double* row = a.data() + i * n;
        double* orow = out.data() + i * n;
        double mx = row[0];
        for (i64 j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (i64 j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (i64 j = 0; j < n; ++j) orow[j] /= denom;
    }
    return detail::make_op_result(a.shape(), std::move(out), {a}, [m, n](detail::TensorNode& o) {
        detail::TensorNode& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (i64 i = 0; i < m; ++i) {
            const double* y = o.value.data() + i * n;
            const double* up = o.grad.data() + i * n;
            double dot = 0.0;
            for (i64 j = 0; j < n; ++j) dot += up[j] * y[j];
            double* g = p.grad.data() + i * n;
            for (i64 j = 0; j < n; ++j) g[j] += y[j] * (up[j] - dot);
        }
    });
}

/// [B×d] -> [(B·h)×(d/h)]: sub-token j of token i lands in row i·h+j and holds
/// columns [j·d/h, (j+1)·d/h) of the source row. Pure data movement.
inline Tensor split_last_dim(const Tensor& a, i64 h) {
    detail::require_2d(a, "split_last_dim");
    const i64 b = a.rows(), d = a.cols();
    if (h <= 0 || d % h != 0)
        throw ShapeError("split_last_dim: h=" + std::to_string(h) + " does not divide d=" +
                         std::to_string(d));
    const i64 ds = d / h;
    std::vector<double> out(a.numel());
    for (i64 i = 0; i < b; ++i)
        for (i64 j = 0; j < h; ++j)
            for (i64 c = 0; c < ds; ++c)
                out[static_cast<std::size_t>((i * h + j) * ds + c)] =
                    a.values()[static_cast<std::size_t>(i * d + j * ds + c)];
    return detail::make_op_result({b * h, ds}, std::move(out), {a}, [](detail::TensorNode& o) {
        detail::TensorNode& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        // identical memory layout on both sides of the reshuffle
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    });
}

/// Exact inverse of split_last_dim.
inline Tensor merge_last_dim(const Tensor& a, i64 h) {
    detail::require_2d(a, "merge_last_dim");
    const i64 rows = a.rows(), ds = a.cols();
    if (h <= 0 || rows % h != 0)
        throw ShapeError("merge_last_dim: h=" + std::to_string(h) + " does not divide rows=" +
                         std::to_string(rows));
    const i64 b = rows / h, d = ds * h;
    std::vector<double> out(a.numel());
    for (i64 i = 0; i < b; ++i)
        for (i64 j = 0; j < h; ++j)
            for (i64 c = 0; c < ds; ++c)
                out[static_cast<std::size_t>(i * d + j * ds + c)] =
                    a.values()[static_cast<std::size_t>((i * h + j) * ds + c)];
    return detail::make_op_result({b, d}, std::move(out), {a}, [](detail::TensorNode& o) {
        detail::TensorNode& p = *o.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    });
}

/// y[r] = x[idx[r]] for 2-D x; used for expert dispatch, embeddings and
/// attention head slicing.
inline Tensor gather_rows(const Tensor& x, std::vector<i64> idx) {
    detail::require_2d(x, "gather_rows");
    const i64 n = x.rows(), c = x.cols();
    for (const i64 r : idx)
        if (r < 0 || r >= n) throw ShapeError("gather_rows: row index " + std::to_string(r) +
                                              " out of range for " + shape_str(x.shape()));
    const i64 m = static_cast<i64>(idx.size());
    if (m == 0) throw ShapeError("gather_rows: empty index list");
    std::vector<double> out(static_cast<std::size_t>(m * c));
    for (i64 r = 0; r < m; ++r)
        std::copy_n(x.data() + idx[static_cast<std::size_t>(r)] * c, c, out.data() + r * c);
    return detail::make_op_result(
        {m, c}, std::move(out), {x}, [idx = std::move(idx), c](detail::TensorNode& o) {
            detail::TensorNode& p = *o.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const double* up = o.grad.data() + static_cast<i64>(r) * c;
                double* g = p.grad.data() + idx[r] * c;
                for (i64 j = 0; j < c; ++j) g[j] += up[j];
            }
        });
}

/// Scatter-accumulate rows of src into a fresh [out_rows × c] tensor:
/// out[idx[r]] += src[r]. The combine step of expert dispatch.
inline Tensor scatter_add_rows(const Tensor& src, std::vector<i64> idx, i64 out_rows) {
    detail::require_2d(src, "scatter_add_rows");
    const i64 m = src.rows(), c = src.cols();
    if (static_cast<i64>(idx.size()) != m)
        throw ShapeError("scatter_add_rows: index count " + std::to_string(idx.size()) +
                         " != rows " + std::to_string(m));
    for (const i64 r : idx)
        if (r < 0 || r >= out_rows)
            throw ShapeError("scatter_add_rows: row index " + std::to_string(r) + " out of range");
    std::vector<double> out(static_cast<std::size_t>(out_rows * c), 0.0);
    for (i64 r = 0; r < m; ++r) {
        const double* s = src.data() + r * c;
        double* o = out.data() + idx[static_cast<std::size_t>(r)] * c;
        for (i64 j = 0; j < c; ++j) o[j] += s[j];
    }
    return detail::make_op_result(
        {out_rows, c}, std::move(out), {src}, [idx = std::move(idx), c](detail::TensorNode& o) {
            detail::TensorNode& p = *o.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const double* up = o.grad.data() + idx[r] * c;
                double* g = p.grad.data() + static_cast<i64>(r) * c;
                for (i64 j = 0; j < c; ++j) g[j] += up[j];
            }
        });
}

/// Picks flat elements of x into an [n×1] column (per-activation gate weights).
inline Tensor gather_flat(const Tensor& x, std::vector<i64> flat_idx) {
    const i64 n = static_cast<i64>(flat_idx.size());
    if (n == 0) throw ShapeError("gather_flat: empty index list");
    for (const i64 f : flat_idx)
        if (f < 0 || f >= static_cast<i64>(x.numel()))
            throw ShapeError("gather_flat: index out of range");
    std::vector<double> out(static_cast<std::size_t>(n));
    for (i64 i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = x.values()[static_cast<std::size_t>(flat_idx[static_cast<std::size_t>(i)])];
    return detail::make_op_result(
        {n, 1}, std::move(out), {x}, [flat_idx = std::move(flat_idx)](detail::TensorNode& o) {
            detail::TensorNode& p = *o.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < flat_idx.size(); ++i)
                p.grad[static_cast<std::size_t>(flat_idx[i])] += o.grad[i];
        });
}

/// y[i,j] = x[i,j] · w[i,0] with w an [n×1] column. Gate combine; uncounted.
inline Tensor scale_rows(const Tensor& x, const Tensor& w) {
    detail::require_2d(x, "scale_rows");
    detail::require_2d(w, "scale_rows");
    const i64 n = x.rows(), c = x.cols();
    if (w.rows() != n || w.cols() != 1)
        throw ShapeError("scale_rows: weight column " + shape_str(w.shape()) + " does not match " +
                         shape_str(x.shape()));
    std::vector<double> out(x.numel());
    for (i64 i = 0; i < n; ++i) {
        const double wi = w.values()[static_cast<std::size_t>(i)];
        for (i64 j = 0; j < c; ++j) out[static_cast<std::size_t>(i * c + j)] = x.at(i, j) * wi;
    }
    return detail::make_op_result({n, c}, std::move(out), {x, w}, [n, c](detail::TensorNode& o) {
        detail::TensorNode& px = *o.parents[0];
        detail::TensorNode& pw = *o.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (i64 i = 0; i < n; ++i) {
                const double wi = pw.value[static_cast<std::size_t>(i)];
                for (i64 j = 0; j < c; ++j)
                    px.grad[static_cast<std::size_t>(i * c + j)] +=
                        o.grad[static_cast<std::size_t>(i * c + j)] * wi;
            }
        }
        if (pw.requires_grad) {
            pw.ensure_grad();
            for (i64 i = 0; i < n; ++i) {
                double s = 0.0;
                for (i64 j = 0; j < c; ++j)
                    s += o.grad[static_cast<std::size_t>(i * c + j)] *
                         px.value[static_cast<std::size_t>(i * c + j)];
                pw.grad[static_cast<std::size_t>(i)] += s;
            }
        }
    });
}

/// Rescales each row to unit sum (top-k gate renormalization).
inline Tensor normalize_rows(const Tensor& w) {
    detail::require_2d(w, "normalize_rows");
    const i64 n = w.rows(), k = w.cols();
    std::vector<double> out(w.numel());
    std::vector<double> sums(static_cast<std::size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        double s = 0.0;
        for (i64 j = 0; j < k; ++j) s += w.at(i, j);
        if (s == 0.0) throw InvariantError("normalize_rows: zero row sum");
        sums[static_cast<std::size_t>(i)] = s;
        for (i64 j = 0; j < k; ++j) out[static_cast<std::size_t>(i * k + j)] = w.at(i, j) / s;
    }
    return detail::make_op_result(
        {n, k}, std::move(out), {w}, [n, k, sums = std::move(sums)](detail::TensorNode& o) {
            detail::TensorNode& p = *o.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (i64 i = 0; i < n; ++i) {
                const double* y = o.value.data() + i * k;
                const double* up = o.grad.data() + i * k;
                double dot = 0.0;
                for (i64 j = 0; j < k; ++j) dot += up[j] * y[j];
                const double inv = 1.0 / sums[static_cast<std::size_t>(i)];
                double* g = p.grad.data() + i * k;
                for (i64 j = 0; j < k; ++j) g[j] += (up[j] - dot) * inv;
            }
        });
}

/// Root-mean-square normalization per row, no learned gain.
inline Tensor rmsnorm_rows(const Tensor& x, double eps = 1e-6) {
    detail::require_2d(x, "rmsnorm_rows");
    const i64 n = x.rows(), c = x.cols();
    std::vector<double> out(x.numel());
    std::vector<double> inv_rms(static_cast<std::size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        double ms = 0.0;
        for (i64 j = 0; j < c; ++j) ms += x.at(i, j) * x.at(i, j);
        ms = ms / static_cast<double>(c) + eps;
        const double inv = 1.0 / std::sqrt(ms);
        inv_rms[static_cast<std::size_t>(i)] = inv;
        for (i64 j = 0; j < c; ++j) out[static_cast<std::size_t>(i * c + j)] = x.at(i, j) * inv;
    }
    return detail::make_op_result(
        {n, c}, std::move(out), {x}, [n, c, inv_rms = std::move(inv_rms)](detail::TensorNode& o) {
            detail::TensorNode& p = *o.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (i64 i = 0; i < n; ++i) {
                const double inv = inv_rms[static_cast<std::size_t>(i)];
                const double* xv = p.value.data() + i * c;
                const double* up = o.grad.data() + i * c;
                double dot = 0.0;
                for (i64 j = 0; j < c; ++j) dot += up[j] * xv[j];
                const double coef = dot * inv * inv * inv / static_cast<double>(c);
                double* g = p.grad.data() + i * c;
                for (i64 j = 0; j < c; ++j) g[j] += up[j] * inv - coef * xv[j];
            }
        });
}

/// Mean negative log-likelihood of target classes in nats, computed through a
/// row-wise log-softmax with max subtraction.
inline Tensor cross_entropy_mean(const Tensor& logits, const std::vector<i64>& targets) {
    detail::require_2d(logits, "cross_entropy_mean");
    const i64 n = logits.rows(), v = logits.cols();
    if (static_cast<i64>(targets.size()) != n)
        throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
    for (const i64 t : targets)
        if (t < 0 || t >= v) throw ShapeError("cross_entropy_mean: target class out of range");

    double total = 0.0;
    std::vector<double> lse(static_cast<std::size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        const double* row = logits.data() + i * v;
        double mx = row[0];
        for (i64 j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (i64 j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        const double l = mx + std::log(denom);
        lse[static_cast<std::size_t>(i)] = l;
        total += l - row[targets[static_cast<std::size_t>(i)]];
    }
    const double mean = total / static_cast<double>(n);
    return detail::make_op_result(
        {1}, {mean}, {logits},
        [n, v, targets, lse = std::move(lse)](detail::TensorNode& o) {
            detail::TensorNode& p = *o.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const double up = o.grad[0] / static_cast<double>(n);
            for (i64 i = 0; i < n; ++i) {
                const double* row = p.value.data() + i * v;
                double* g = p.grad.data() + i * v;
                const double l = lse[static_cast<std::size_t>(i)];
                for (i64 j = 0; j < v; ++j) g[j] += up * std::exp(row[j] - l);
                g[targets[static_cast<std::size_t>(i)]] -= up;
            }
        });
}

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8)
/// for a scalar-valued function of x.
inline double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                                      const Tensor& x, double step = 1e-5) {
    Tensor probe = x.clone_detached(true);
    Tensor loss = f(probe);
    if (loss.numel() != 1) throw InvariantError("finite_difference_check: f must return a scalar");
    backward(loss);
    const std::vector<double> analytic = probe.grad();

    double worst = 0.0;
    Tensor work = x.clone_detached(false);
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < work.numel(); ++i) {
        const double orig = work.values()[i];
        work.values()[i] = orig + step;
        const double up = f(work).item();
        work.values()[i] = orig - step;
        const double down = f(work).item();
        work.values()[i] = orig;
        const double fd = (up - down) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace moelab
