// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "echodiff/tensor.hpp"

namespace echodiff {

namespace detail {

template <typename T>
GraphPtr<T> merge_graph(const char* op, std::initializer_list<const Tensor<T>*> inputs) {
    GraphPtr<T> g;
    for (const auto* t : inputs) {
        if (!t->defined() || !t->graph()) continue;
        if (!g) {
            g = t->graph();
        } else if (g != t->graph()) {
            throw UsageError(std::string(op) + ": inputs belong to different op graphs");
        }
    }
    return g;
}

template <typename T>
bool any_needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
    for (const auto* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
void ensure_finite(const char* op, const GraphPtr<T>& g, const TensorImpl<T>& out) {
    if (!g || !g->check_finite) return;
    for (T v : out.data) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw UsageError(std::string(op) + ": shape mismatch between " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
}

template <typename T>
void check_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
    if (t.shape().size() != rank) {
        throw UsageError(std::string(op) + ": expected rank-" + std::to_string(rank) + " tensor, got " +
                         shape_str(t.shape()));
    }
}

/// y_i = f(x_i); adjoint dx_i += dy_i * dfdx(x_i, y_i).
template <typename T, typename Fwd, typename Dfdx>
Tensor<T> unary_elementwise(const char* op, const Tensor<T>& x, Fwd f, Dfdx dfdx) {
    auto g = merge_graph<T>(op, {&x});
    const bool rec = g && x.requires_grad();
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = f(v);
    Tensor<T> y = Tensor<T>::make_result(x.shape(), std::move(out), g, rec);
    if (rec) {
        g->record(op, [xi = x.impl(), yi = y.impl(), dfdx] {
            if (yi->grad.empty()) return;
            auto& gx = xi->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i] * dfdx(xi->data[i], yi->data[i]);
        });
        ensure_finite(op, g, *y.impl());
    }
    return y;
}

/// z_i = f(a_i, b_i); adjoints da_i += dz_i * dfda(a_i, b_i), likewise for b.
template <typename T, typename Fwd, typename Dfda, typename Dfdb>
Tensor<T> binary_elementwise(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd f, Dfda dfda, Dfdb dfdb) {
    check_same_shape(op, a, b);
    auto g = merge_graph<T>(op, {&a, &b});
    const bool rec = g && any_needs_grad<T>({&a, &b});
    std::vector<T> out(a.numel());
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
    Tensor<T> z = Tensor<T>::make_result(a.shape(), std::move(out), g, rec);
    if (rec) {
        const bool na = a.requires_grad(), nb = b.requires_grad();
        g->record(op, [ai = a.impl(), bi = b.impl(), zi = z.impl(), na, nb, dfda, dfdb] {
            if (zi->grad.empty()) return;
            if (na) {
                auto& ga = ai->grad_buffer();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += zi->grad[i] * dfda(ai->data[i], bi->data[i]);
            }
            if (nb) {
                auto& gb = bi->grad_buffer();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += zi->grad[i] * dfdb(ai->data[i], bi->data[i]);
            }
        });
        ensure_finite(op, g, *z.impl());
    }
    return z;
}

/// C[m x n] += A[m x k] * B[k x n], all row-major.
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        T* ci = C + i * n;
        const T* ai = A + i * k;
        for (std::int64_t r = 0; r < k; ++r) {
            const T a = ai[r];
            const T* br = B + r * n;
            for (std::int64_t j = 0; j < n; ++j) ci[j] += a * br[j];
        }
    }
}

/// C[m x k] += A[m x n] * B[k x n]^T  (dot products of rows).
template <typename T>
void gemm_abt_acc(const T* A, const T* B, T* C, std::int64_t m, std::int64_t n, std::int64_t k) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const T* ai = A + i * n;
        T* ci = C + i * k;
        for (std::int64_t r = 0; r < k; ++r) {
            const T* br = B + r * n;
            T acc = 0;
            for (std::int64_t j = 0; j < n; ++j) acc += ai[j] * br[j];
            ci[r] += acc;
        }
    }
}

/// C[k x n] += A[m x k]^T * B[m x n].
template <typename T>
void gemm_atb_acc(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const T* ai = A + i * k;
        const T* bi = B + i * n;
        for (std::int64_t r = 0; r < k; ++r) {
            const T a = ai[r];
            T* cr = C + r * n;
            for (std::int64_t j = 0; j < n; ++j) cr[j] += a * bi[j];
        }
    }
}

struct ConvDims {
    std::int64_t n, ci, h, w;    // input
    std::int64_t co, kh, kw;     // kernel
    std::int64_t stride, pad;
    std::int64_t ho, wo;         // output
    std::int64_t patch() const { return ci * kh * kw; }
    std::int64_t omap() const { return ho * wo; }
};

template <typename T>
ConvDims conv_dims(const char* op, const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride, std::int64_t pad) {
    check_rank(op, x, 4);
    check_rank(op, w, 4);
    if (stride < 1) throw UsageError(std::string(op) + ": stride must be >= 1");
    if (pad < 0) throw UsageError(std::string(op) + ": pad must be >= 0");
    ConvDims d{};
    d.n = x.shape()[0];
    d.ci = x.shape()[1];
    d.h = x.shape()[2];
    d.w = x.shape()[3];
    d.co = w.shape()[0];
    d.kh = w.shape()[2];
    d.kw = w.shape()[3];
    d.stride = stride;
    d.pad = pad;
    if (w.shape()[1] != d.ci) {
        throw UsageError(std::string(op) + ": shape mismatch between input " + shape_str(x.shape()) +
                         " and kernel " + shape_str(w.shape()));
    }
    if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad) {
        throw UsageError(std::string(op) + ": kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    }
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

/// Unfolds one sample [Ci,H,W] into a [Ci*kh*kw, Ho*Wo] patch matrix.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < d.ci; ++c) {
        const T* xc = x + c * d.h * d.w;
        for (std::int64_t ki = 0; ki < d.kh; ++ki) {
            for (std::int64_t kj = 0; kj < d.kw; ++kj, ++row) {
                T* out = cols + row * d.omap();
                for (std::int64_t oh = 0; oh < d.ho; ++oh) {
                    const std::int64_t ih = oh * d.stride - d.pad + ki;
                    T* orow = out + oh * d.wo;
                    if (ih < 0 || ih >= d.h) {
                        std::fill(orow, orow + d.wo, T(0));
                        continue;
                    }
                    const T* xrow = xc + ih * d.w;
                    for (std::int64_t ow = 0; ow < d.wo; ++ow) {
                        const std::int64_t iw = ow * d.stride - d.pad + kj;
                        orow[ow] = (iw >= 0 && iw < d.w) ? xrow[iw] : T(0);
                    }
                }
            }
        }
    }
}

/// Scatter-adds a [Ci*kh*kw, Ho*Wo] patch-gradient matrix back onto [Ci,H,W].
template <typename T>
void col2im_acc(const T* cols, const ConvDims& d, T* gx) {
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < d.ci; ++c) {
        T* xc = gx + c * d.h * d.w;
        for (std::int64_t ki = 0; ki < d.kh; ++ki) {
            for (std::int64_t kj = 0; kj < d.kw; ++kj, ++row) {
                const T* in = cols + row * d.omap();
                for (std::int64_t oh = 0; oh < d.ho; ++oh) {
                    const std::int64_t ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.h) continue;
                    const T* irow = in + oh * d.wo;
                    T* xrow = xc + ih * d.w;
                    for (std::int64_t ow = 0; ow < d.wo; ++ow) {
                        const std::int64_t iw = ow * d.stride - d.pad + kj;
                        if (iw >= 0 && iw < d.w) xrow[iw] += irow[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_elementwise<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_elementwise<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_elementwise<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary_elementwise<T>(
        "scale", x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary_elementwise<T>(
        "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary_elementwise<T>(
        "abs", x, [](T v) { return v < T(0) ? -v : v; },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
    return detail::unary_elementwise<T>(
        "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::unary_elementwise<T>(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_elementwise<T>(
        "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary_elementwise<T>(
        "softplus", x,
        [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-(v < T(0) ? -v : v))); },
        [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_rank("matmul", a, 2);
    detail::check_rank("matmul", b, 2);
    const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw UsageError("matmul: shape mismatch between " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    auto g = detail::merge_graph<T>("matmul", {&a, &b});
    const bool rec = g && detail::any_needs_grad<T>({&a, &b});
    std::vector<T> out(static_cast<std::size_t>(m * n), T(0));
    detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    Tensor<T> z = Tensor<T>::make_result({m, n}, std::move(out), g, rec);
    if (rec) {
        const bool na = a.requires_grad(), nb = b.requires_grad();
        g->record("matmul", [ai = a.impl(), bi = b.impl(), zi = z.impl(), m, k, n, na, nb] {
            if (zi->grad.empty()) return;
            if (na) {  // dA = dZ * B^T
                detail::gemm_abt_acc(zi->grad.data(), bi->data.data(), ai->grad_buffer().data(), m, n, k);
            }
            if (nb) {  // dB = A^T * dZ
                detail::gemm_atb_acc(ai->data.data(), zi->grad.data(), bi->grad_buffer().data(), m, k, n);
            }
        });
        detail::ensure_finite("matmul", g, *z.impl());
    }
    return z;
}

// ---------------------------------------------------------------------------
// 2-D convolution (zero padding)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::int64_t stride,
                 std::int64_t pad) {
    const auto d = detail::conv_dims("conv2d", x, w, stride, pad);
    if (bias.defined()) {
        if (bias.shape().size() != 1 || bias.shape()[0] != d.co) {
            throw UsageError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match kernel " +
                             shape_str(w.shape()));
        }
    }
    auto g = detail::merge_graph<T>("conv2d", {&x, &w, &bias});
    const bool rec = g && detail::any_needs_grad<T>({&x, &w, &bias});

    const std::int64_t K = d.patch(), M = d.omap();
    std::vector<T> out(static_cast<std::size_t>(d.n * d.co * M), T(0));
    const T* xp = x.data().data();
    const T* wp = w.data().data();
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < d.n; ++n) {
        std::vector<T> cols(static_cast<std::size_t>(K * M));
        detail::im2col(xp + n * d.ci * d.h * d.w, d, cols.data());
        T* on = out.data() + n * d.co * M;
        for (std::int64_t c = 0; c < d.co; ++c) {
            T* oc = on + c * M;
            const T* wc = wp + c * K;
            for (std::int64_t r = 0; r < K; ++r) {
                const T a = wc[r];
                const T* br = cols.data() + r * M;
                for (std::int64_t j = 0; j < M; ++j) oc[j] += a * br[j];
            }
            if (bias.defined()) {
                const T bv = bias.data()[c];
                for (std::int64_t j = 0; j < M; ++j) oc[j] += bv;
            }
        }
    }

    Tensor<T> z = Tensor<T>::make_result({d.n, d.co, d.ho, d.wo}, std::move(out), g, rec);
    if (rec) {
        const bool nx = x.requires_grad(), nw = w.requires_grad();
        const bool nb = bias.defined() && bias.requires_grad();
        auto biasimpl = bias.defined() ? bias.impl() : nullptr;
        g->record("conv2d", [xi = x.impl(), wi = w.impl(), bi = biasimpl, zi = z.impl(), d, nx, nw, nb] {
            if (zi->grad.empty()) return;
            const std::int64_t K = d.patch(), M = d.omap();
            const T* go = zi->grad.data();
            // Per-sample kernel-gradient buffers, reduced in index order so
            // the result does not depend on thread scheduling.
            std::vector<T> dw_per_n;
            if (nw) dw_per_n.assign(static_cast<std::size_t>(d.n * d.co * K), T(0));
            std::vector<T>* gx = nullptr;
            if (nx) gx = &xi->grad_buffer();
#pragma omp parallel for schedule(static)
            for (std::int64_t n = 0; n < d.n; ++n) {
                const T* gon = go + n * d.co * M;
                std::vector<T> cols;
                if (nw) {
                    cols.resize(static_cast<std::size_t>(K * M));
                    detail::im2col(xi->data.data() + n * d.ci * d.h * d.w, d, cols.data());
                    // dW_n = gon [co x M] * cols^T [M x K]
                    detail::gemm_abt_acc(gon, cols.data(), dw_per_n.data() + n * d.co * K, d.co, M, K);
                }
                if (nx) {
                    std::vector<T> dcols(static_cast<std::size_t>(K * M), T(0));
                    // dcols = W^T [K x co] * gon [co x M]
                    detail::gemm_atb_acc(wi->data.data(), gon, dcols.data(), d.co, K, M);
                    detail::col2im_acc(dcols.data(), d, gx->data() + n * d.ci * d.h * d.w);
                }
            }
            if (nw) {
                auto& gw = wi->grad_buffer();
                for (std::int64_t n = 0; n < d.n; ++n) {
                    const T* src = dw_per_n.data() + n * d.co * K;
                    for (std::int64_t i = 0; i < d.co * K; ++i) gw[static_cast<std::size_t>(i)] += src[i];
                }
            }
            if (nb) {
                auto& gb = bi->grad_buffer();
                for (std::int64_t n = 0; n < d.n; ++n) {
                    for (std::int64_t c = 0; c < d.co; ++c) {
                        const T* gc = go + (n * d.co + c) * M;
                        T acc = 0;
                        for (std::int64_t j = 0; j < M; ++j) acc += gc[j];
                        gb[static_cast<std::size_t>(c)] += acc;
                    }
                }
            }
        });
        detail::ensure_finite("conv2d", g, *z.impl());
    }
    return z;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride, std::int64_t pad) {
    return conv2d(x, w, Tensor<T>(), stride, pad);
}

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsample
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    detail::check_rank("upsample2x", x, 4);
    const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    auto g = detail::merge_graph<T>("upsample2x", {&x});
    const bool rec = g && x.requires_grad();
    std::vector<T> out(static_cast<std::size_t>(n * c * 4 * h * w));
    const T* xp = x.data().data();
    for (std::int64_t nch = 0; nch < n * c; ++nch) {
        const T* src = xp + nch * h * w;
        T* dst = out.data() + nch * 4 * h * w;
        for (std::int64_t i = 0; i < h; ++i) {
            for (std::int64_t j = 0; j < w; ++j) {
                const T v = src[i * w + j];
                T* base = dst + (2 * i) * (2 * w) + 2 * j;
                base[0] = v;
                base[1] = v;
                base[2 * w] = v;
                base[2 * w + 1] = v;
            }
        }
    }
    Tensor<T> z = Tensor<T>::make_result({n, c, 2 * h, 2 * w}, std::move(out), g, rec);
    if (rec) {
        g->record("upsample2x", [xi = x.impl(), zi = z.impl(), n, c, h, w] {
            if (zi->grad.empty()) return;
            auto& gx = xi->grad_buffer();
            const T* go = zi->grad.data();
            for (std::int64_t nch = 0; nch < n * c; ++nch) {
                T* dst = gx.data() + nch * h * w;
                const T* src = go + nch * 4 * h * w;
                for (std::int64_t i = 0; i < h; ++i) {
                    for (std::int64_t j = 0; j < w; ++j) {
                        const T* base = src + (2 * i) * (2 * w) + 2 * j;
                        dst[i * w + j] += base[0] + base[1] + base[2 * w] + base[2 * w + 1];
                    }
                }
            }
        });
        detail::ensure_finite("upsample2x", g, *z.impl());
    }
    return z;
}

// ---------------------------------------------------------------------------
// Instance normalization (per-sample, per-channel over spatial dims)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
    detail::check_rank("instance_norm", x, 4);
    const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::int64_t hw = h * w;
    auto g = detail::merge_graph<T>("instance_norm", {&x});
    const bool rec = g && x.requires_grad();
    std::vector<T> out(x.numel());
    std::vector<T> inv_sigma(static_cast<std::size_t>(n * c));
    const T* xp = x.data().data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const T* src = xp + nc * hw;
        T mean = 0;
        for (std::int64_t i = 0; i < hw; ++i) mean += src[i];
        mean /= static_cast<T>(hw);
        T var = 0;
        for (std::int64_t i = 0; i < hw; ++i) {
            const T dv = src[i] - mean;
            var += dv * dv;
        }
        var /= static_cast<T>(hw);
        const T inv = T(1) / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(nc)] = inv;
        T* dst = out.data() + nc * hw;
        for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mean) * inv;
    }
    Tensor<T> z = Tensor<T>::make_result(x.shape(), std::move(out), g, rec);
    if (rec) {
        g->record("instance_norm", [xi = x.impl(), zi = z.impl(), inv = std::move(inv_sigma), n, c, hw] {
            if (zi->grad.empty()) return;
            auto& gx = xi->grad_buffer();
            const T* go = zi->grad.data();
            const T* y = zi->data.data();
            for (std::int64_t nc = 0; nc < n * c; ++nc) {
                const T* gy = go + nc * hw;
                const T* yc = y + nc * hw;
                T mean_gy = 0, mean_gyy = 0;
                for (std::int64_t i = 0; i < hw; ++i) {
                    mean_gy += gy[i];
                    mean_gyy += gy[i] * yc[i];
                }
                mean_gy /= static_cast<T>(hw);
                mean_gyy /= static_cast<T>(hw);
                const T s = inv[static_cast<std::size_t>(nc)];
                T* dst = gx.data() + nc * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += s * (gy[i] - mean_gy - yc[i] * mean_gyy);
            }
        });
        detail::ensure_finite("instance_norm", g, *z.impl());
    }
    return z;
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_channels: no inputs");
    for (const auto& p : parts) detail::check_rank("concat_channels", p, 4);
    const auto n = parts[0].shape()[0], h = parts[0].shape()[2], w = parts[0].shape()[3];
    std::int64_t ctot = 0;
    for (const auto& p : parts) {
        if (p.shape()[0] != n || p.shape()[2] != h || p.shape()[3] != w) {
            throw UsageError("concat_channels: shape mismatch between " + shape_str(parts[0].shape()) + " and " +
                             shape_str(p.shape()));
        }
        ctot += p.shape()[1];
    }
    GraphPtr<T> g;
    bool rec = false;
    for (const auto& p : parts) {
        auto pg = detail::merge_graph<T>("concat_channels", {&p});
        if (pg) {
            if (g && g != pg) throw UsageError("concat_channels: inputs belong to different op graphs");
            g = pg;
        }
        rec = rec || p.requires_grad();
    }
    rec = rec && g != nullptr;

    const std::int64_t hw = h * w;
    std::vector<T> out(static_cast<std::size_t>(n * ctot * hw));
    for (std::int64_t b = 0; b < n; ++b) {
        std::int64_t coff = 0;
        for (const auto& p : parts) {
            const std::int64_t pc = p.shape()[1];
            const T* src = p.data().data() + b * pc * hw;
            std::copy(src, src + pc * hw, out.data() + (b * ctot + coff) * hw);
            coff += pc;
        }
    }
    Tensor<T> z = Tensor<T>::make_result({n, ctot, h, w}, std::move(out), g, rec);
    if (rec) {
        std::vector<std::shared_ptr<TensorImpl<T>>> impls;
        std::vector<bool> wants;
        for (const auto& p : parts) {
            impls.push_back(p.impl());
            wants.push_back(p.requires_grad());
        }
        g->record("concat_channels", [impls, wants, zi = z.impl(), n, ctot, hw] {
            if (zi->grad.empty()) return;
            const T* go = zi->grad.data();
            for (std::int64_t b = 0; b < n; ++b) {
                std::int64_t coff = 0;
                for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                    const std::int64_t pc = impls[pi]->shape[1];
                    if (wants[pi]) {
                        auto& gp = impls[pi]->grad_buffer();
                        const T* src = go + (b * ctot + coff) * hw;
                        T* dst = gp.data() + b * pc * hw;
                        for (std::int64_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
                    }
                    coff += pc;
                }
            }
        });
        detail::ensure_finite("concat_channels", g, *z.impl());
    }
    return z;
}

// ---------------------------------------------------------------------------
// Reductions, reshape, broadcast
// ---------------------------------------------------------------------------

/// Spatial mean pool: [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> mean_spatial(const Tensor<T>& x) {
    detail::check_rank("mean_spatial", x, 4);
    const auto n = x.shape()[0], c = x.shape()[1];
    const std::int64_t hw = x.shape()[2] * x.shape()[3];
    auto g = detail::merge_graph<T>("mean_spatial", {&x});
    const bool rec = g && x.requires_grad();
    std::vector<T> out(static_cast<std::size_t>(n * c));
    const T* xp = x.data().data();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        T acc = 0;
        const T* src = xp + nc * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
        out[static_cast<std::size_t>(nc)] = acc / static_cast<T>(hw);
    }
    Tensor<T> z = Tensor<T>::make_result({n, c}, std::move(out), g, rec);
    if (rec) {
        g->record("mean_spatial", [xi = x.impl(), zi = z.impl(), n, c, hw] {
            if (zi->grad.empty()) return;
            auto& gx = xi->grad_buffer();
            for (std::int64_t nc = 0; nc < n * c; ++nc) {
                const T gv = zi->grad[static_cast<std::size_t>(nc)] / static_cast<T>(hw);
                T* dst = gx.data() + nc * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += gv;
            }
        });
        detail::ensure_finite("mean_spatial", g, *z.impl());
    }
    return z;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    auto g = detail::merge_graph<T>("sum_all", {&x});
    const bool rec = g && x.requires_grad();
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> z = Tensor<T>::make_result({1}, {acc}, g, rec);
    if (rec) {
        g->record("sum_all", [xi = x.impl(), zi = z.impl()] {
            if (zi->grad.empty()) return;
            const T gv = zi->grad[0];
            auto& gx = xi->grad_buffer();
            for (auto& v : gx) v += gv;
        });
        detail::ensure_finite("sum_all", g, *z.impl());
    }
    return z;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    auto g = detail::merge_graph<T>("mean_all", {&x});
    const bool rec = g && x.requires_grad();
    T acc = 0;
    for (T v : x.data()) acc += v;
    const T n = static_cast<T>(x.numel());
    Tensor<T> z = Tensor<T>::make_result({1}, {acc / n}, g, rec);
    if (rec) {
        g->record("mean_all", [xi = x.impl(), zi = z.impl(), n] {
            if (zi->grad.empty()) return;
            const T gv = zi->grad[0] / n;
            auto& gx = xi->grad_buffer();
            for (auto& v : gx) v += gv;
        });
        detail::ensure_finite("mean_all", g, *z.impl());
    }
    return z;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw UsageError("reshape: shape mismatch between " + shape_str(x.shape()) + " and " + shape_str(new_shape));
    }
    auto g = detail::merge_graph<T>("reshape", {&x});
    const bool rec = g && x.requires_grad();
    std::vector<T> out(x.data().begin(), x.data().end());
    Tensor<T> z = Tensor<T>::make_result(std::move(new_shape), std::move(out), g, rec);
    if (rec) {
        g->record("reshape", [xi = x.impl(), zi = z.impl()] {
            if (zi->grad.empty()) return;
            xi->accumulate(zi->grad);
        });
        detail::ensure_finite("reshape", g, *z.impl());
    }
    return z;
}

/// Broadcasts per-sample vectors [N,C] onto constant planes [N,C,H,W].
template <typename T>
Tensor<T> broadcast_plane(const Tensor<T>& v, std::int64_t h, std::int64_t w) {
    detail::check_rank("broadcast_plane", v, 2);
    const auto n = v.shape()[0], c = v.shape()[1];
    auto g = detail::merge_graph<T>("broadcast_plane", {&v});
    const bool rec = g && v.requires_grad();
    const std::int64_t hw = h * w;
    std::vector<T> out(static_cast<std::size_t>(n * c * hw));
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        std::fill_n(out.data() + nc * hw, hw, v.data()[static_cast<std::size_t>(nc)]);
    }
    Tensor<T> z = Tensor<T>::make_result({n, c, h, w}, std::move(out), g, rec);
    if (rec) {
        g->record("broadcast_plane", [vi = v.impl(), zi = z.impl(), n, c, hw] {
            if (zi->grad.empty()) return;
            auto& gv = vi->grad_buffer();
            for (std::int64_t nc = 0; nc < n * c; ++nc) {
                const T* src = zi->grad.data() + nc * hw;
                T acc = 0;
                for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
                gv[static_cast<std::size_t>(nc)] += acc;
            }
        });
        detail::ensure_finite("broadcast_plane", g, *z.impl());
    }
    return z;
}

/// Value clamp. Not differentiable; for inference-time range enforcement.
template <typename T>
Tensor<T> clamp_values(const Tensor<T>& x, T lo, T hi) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = std::clamp(v, lo, hi);
    return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.data()) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

}  // namespace echodiff
