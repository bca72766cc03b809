#pragma once

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "attamba/masks.hpp"
#include "attamba/tensor.hpp"

namespace attamba {
namespace detail {

// Row kernels shared between the batched ops and the single-token decode
// path, so both sides produce identical floating-point results.

template <typename T>
inline T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
inline T softplus_scalar(T x) {
    if (x > T(0)) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

template <typename T>
inline T silu_scalar(T x) {
    return x * sigmoid_scalar(x);
}

// out[p] = sum_k x[k] * w[k, p], accumulated over ascending k.
template <typename T>
inline void linear_row(const T* x, const T* w, int k_dim, int p_dim, T* out) {
    std::fill(out, out + p_dim, T(0));
    for (int k = 0; k < k_dim; ++k) {
        T xk = x[k];
        const T* wrow = w + static_cast<std::size_t>(k) * p_dim;
        for (int p = 0; p < p_dim; ++p) out[p] += xk * wrow[p];
    }
}

// out[p] = dot(x, w_row_p) where w is p_dim x k_dim.
template <typename T>
inline void linear_nt_row(const T* x, const T* w, int k_dim, int p_dim, T* out) {
    for (int p = 0; p < p_dim; ++p) {
        const T* wrow = w + static_cast<std::size_t>(p) * k_dim;
        T s = T(0);
        for (int k = 0; k < k_dim; ++k) s += x[k] * wrow[k];
        out[p] = s;
    }
}

template <typename T>
inline void rmsnorm_row(const T* x, const T* w, int width, T eps, T* out) {
    T ms = T(0);
    for (int e = 0; e < width; ++e) ms += x[e] * x[e];
    ms = ms / static_cast<T>(width) + eps;
    T r = T(1) / std::sqrt(ms);
    for (int e = 0; e < width; ++e) out[e] = x[e] * w[e] * r;
}

// Softmax over an explicit key list; scores and weights share the list order.
template <typename T>
inline void softmax_inplace(T* scores, int count) {
    T m = scores[0];
    for (int j = 1; j < count; ++j) m = std::max(m, scores[j]);
    T z = T(0);
    for (int j = 0; j < count; ++j) {
        scores[j] = std::exp(scores[j] - m);
        z += scores[j];
    }
    if (!(z > T(0)))
        throw NumericError("softmax: zero normalizer");
    T inv = T(1) / z;
    for (int j = 0; j < count; ++j) scores[j] *= inv;
}

}  // namespace detail

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    check_finite(out, "add");
    attach_node(out, {a, b}, [](const Tensor<T>& o) {
        auto& n = *o.node;
        for (int p = 0; p < 2; ++p)
            if (n.parents[p].requires_grad) {
                T* g = n.parents[p].grad->data();
                const T* og = o.grad->data();
                for (std::size_t i = 0; i < o.numel(); ++i) g[i] += og[i];
            }
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    check_finite(out, "sub");
    attach_node(out, {a, b}, [](const Tensor<T>& o) {
        auto& n = *o.node;
        const T* og = o.grad->data();
        if (n.parents[0].requires_grad) {
            T* g = n.parents[0].grad->data();
            for (std::size_t i = 0; i < o.numel(); ++i) g[i] += og[i];
        }
        if (n.parents[1].requires_grad) {
            T* g = n.parents[1].grad->data();
            for (std::size_t i = 0; i < o.numel(); ++i) g[i] -= og[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    check_finite(out, "mul");
    attach_node(out, {a, b}, [](const Tensor<T>& o) {
        auto& n = *o.node;
        const T* og = o.grad->data();
        const T* av = n.parents[0].data->data();
        const T* bv = n.parents[1].data->data();
        if (n.parents[0].requires_grad) {
            T* g = n.parents[0].grad->data();
            for (std::size_t i = 0; i < o.numel(); ++i) g[i] += og[i] * bv[i];
        }
        if (n.parents[1].requires_grad) {
            T* g = n.parents[1].grad->data();
            for (std::size_t i = 0; i < o.numel(); ++i) g[i] += og[i] * av[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = (*a.data)[i] * factor;
    check_finite(out, "scale");
    attach_node(out, {a}, [factor](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T* g = p.grad->data();
        const T* og = o.grad->data();
        for (std::size_t i = 0; i < o.numel(); ++i) g[i] += og[i] * factor;
    });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = T(0);
    for (T v : *a.data) s += v;
    Tensor<T> out = Tensor<T>::scalar(s);
    check_finite(out, "sum");
    attach_node(out, {a}, [](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T g = (*o.grad)[0];
        T* pg = p.grad->data();
        for (std::size_t i = 0; i < p.numel(); ++i) pg[i] += g;
    });
    return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out.data)[i] = detail::softplus_scalar((*a.data)[i]);
    check_finite(out, "softplus");
    attach_node(out, {a}, [](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T* g = p.grad->data();
        const T* og = o.grad->data();
        const T* x = p.data->data();
        for (std::size_t i = 0; i < o.numel(); ++i)
            g[i] += og[i] * detail::sigmoid_scalar(x[i]);
    });
    return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i) (*out.data)[i] = std::exp((*a.data)[i]);
    check_finite(out, "exp");
    auto saved = out.data;
    attach_node(out, {a}, [saved](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T* g = p.grad->data();
        const T* og = o.grad->data();
        const T* y = saved->data();
        for (std::size_t i = 0; i < o.numel(); ++i) g[i] += og[i] * y[i];
    });
    return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < a.numel(); ++i)
        (*out.data)[i] = detail::silu_scalar((*a.data)[i]);
    check_finite(out, "silu");
    attach_node(out, {a}, [](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T* g = p.grad->data();
        const T* og = o.grad->data();
        const T* x = p.data->data();
        for (std::size_t i = 0; i < o.numel(); ++i) {
            T s = detail::sigmoid_scalar(x[i]);
            g[i] += og[i] * s * (T(1) + x[i] * (T(1) - s));
        }
    });
    return out;
}

// ---- matrix products -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, FlopCounter* counter = nullptr) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expected rank-2 operands");
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), p = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + a.shape_str() + " x " +
                         b.shape_str());
    Tensor<T> out = Tensor<T>::zeros({m, p});
    const T* A = a.ptr();
    const T* B = b.ptr();
    T* O = out.ptr();
    for (int i = 0; i < m; ++i) {
        T* orow = O + static_cast<std::size_t>(i) * p;
        const T* arow = A + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            T aik = arow[kk];
            const T* brow = B + static_cast<std::size_t>(kk) * p;
            for (int j = 0; j < p; ++j) orow[j] += aik * brow[j];
        }
    }
    if (counter) counter->matmul_macs += 1LL * m * k * p;
    check_finite(out, "matmul");
    attach_node(out, {a, b}, [m, k, p](const Tensor<T>& o) {
        auto& n = *o.node;
        const T* G = o.grad->data();
        const T* A = n.parents[0].data->data();
        const T* B = n.parents[1].data->data();
        if (n.parents[0].requires_grad) {
            T* dA = n.parents[0].grad->data();
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    const T* grow = G + static_cast<std::size_t>(i) * p;
                    const T* brow = B + static_cast<std::size_t>(kk) * p;
                    T s = T(0);
                    for (int j = 0; j < p; ++j) s += grow[j] * brow[j];
                    dA[static_cast<std::size_t>(i) * k + kk] += s;
                }
        }
        if (n.parents[1].requires_grad) {
            T* dB = n.parents[1].grad->data();
            for (int i = 0; i < m; ++i) {
                const T* grow = G + static_cast<std::size_t>(i) * p;
                const T* arow = A + static_cast<std::size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk) {
                    T aik = arow[kk];
                    T* drow = dB + static_cast<std::size_t>(kk) * p;
                    for (int j = 0; j < p; ++j) drow[j] += aik * grow[j];
                }
            }
        }
    });
    return out;
}

// a (m x k) times the transpose of b (p x k).
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b, FlopCounter* counter = nullptr) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul_nt: expected rank-2 operands");
    int m = a.dim(0), k = a.dim(1), p = b.dim(0);
    if (b.dim(1) != k)
        throw ShapeError("matmul_nt: inner extents differ, " + a.shape_str() + " x " +
                         b.shape_str() + "^T");
    Tensor<T> out = Tensor<T>::zeros({m, p});
    const T* A = a.ptr();
    const T* B = b.ptr();
    T* O = out.ptr();
    for (int i = 0; i < m; ++i)
        detail::linear_nt_row(A + static_cast<std::size_t>(i) * k, B, k, p,
                              O + static_cast<std::size_t>(i) * p);
    if (counter) counter->matmul_macs += 1LL * m * k * p;
    check_finite(out, "matmul_nt");
    attach_node(out, {a, b}, [m, k, p](const Tensor<T>& o) {
        auto& n = *o.node;
        const T* G = o.grad->data();
        const T* A = n.parents[0].data->data();
        const T* B = n.parents[1].data->data();
        if (n.parents[0].requires_grad) {
            T* dA = n.parents[0].grad->data();
            for (int i = 0; i < m; ++i) {
                const T* grow = G + static_cast<std::size_t>(i) * p;
                T* darow = dA + static_cast<std::size_t>(i) * k;
                for (int j = 0; j < p; ++j) {
                    T g = grow[j];
                    const T* brow = B + static_cast<std::size_t>(j) * k;
                    for (int kk = 0; kk < k; ++kk) darow[kk] += g * brow[kk];
                }
            }
        }
        if (n.parents[1].requires_grad) {
            T* dB = n.parents[1].grad->data();
            for (int i = 0; i < m; ++i) {
                const T* grow = G + static_cast<std::size_t>(i) * p;
                const T* arow = A + static_cast<std::size_t>(i) * k;
                for (int j = 0; j < p; ++j) {
                    T g = grow[j];
                    T* dbrow = dB + static_cast<std::size_t>(j) * k;
                    for (int kk = 0; kk < k; ++kk) dbrow[kk] += g * arow[kk];
                }
            }
        }
    });
    return out;
}

// ---- normalization and table lookups ----------------------------------------

template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, T eps = T(1e-5)) {
    if (x.rank() != 2 || weight.rank() != 1 || weight.dim(0) != x.dim(1))
        throw ShapeError("rmsnorm: expected x [n,e] and weight [e]");
    int n = x.dim(0), e = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    for (int i = 0; i < n; ++i)
        detail::rmsnorm_row(x.ptr() + static_cast<std::size_t>(i) * e, weight.ptr(), e, eps,
                            out.ptr() + static_cast<std::size_t>(i) * e);
    check_finite(out, "rmsnorm");
    attach_node(out, {x, weight}, [n, e, eps](const Tensor<T>& o) {
        auto& nd = *o.node;
        const T* G = o.grad->data();
        const T* X = nd.parents[0].data->data();
        const T* W = nd.parents[1].data->data();
        T* dX = nd.parents[0].requires_grad ? nd.parents[0].grad->data() : nullptr;
        T* dW = nd.parents[1].requires_grad ? nd.parents[1].grad->data() : nullptr;
        for (int i = 0; i < n; ++i) {
            const T* xr = X + static_cast<std::size_t>(i) * e;
            const T* gr = G + static_cast<std::size_t>(i) * e;
            T ms = T(0);
            for (int c = 0; c < e; ++c) ms += xr[c] * xr[c];
            ms = ms / static_cast<T>(e) + eps;
            T r = T(1) / std::sqrt(ms);
            if (dW)
                for (int c = 0; c < e; ++c) dW[c] += gr[c] * xr[c] * r;
            if (dX) {
                T dot = T(0);
                for (int c = 0; c < e; ++c) dot += gr[c] * W[c] * xr[c];
                T k = dot * r * r * r / static_cast<T>(e);
                T* dxr = dX + static_cast<std::size_t>(i) * e;
                for (int c = 0; c < e; ++c) dxr[c] += gr[c] * W[c] * r - xr[c] * k;
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [v,e]");
    int v = table.dim(0), e = table.dim(1);
    int n = static_cast<int>(ids.size());
    Tensor<T> out = Tensor<T>::zeros({n, e});
    for (int i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= v)
            throw IndexError("embedding_lookup: token id " + std::to_string(ids[i]) +
                             " outside vocabulary of " + std::to_string(v));
        std::copy_n(table.ptr() + static_cast<std::size_t>(ids[i]) * e, e,
                    out.ptr() + static_cast<std::size_t>(i) * e);
    }
    check_finite(out, "embedding_lookup");
    attach_node(out, {table}, [ids, e](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T* dT = p.grad->data();
        const T* G = o.grad->data();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            T* drow = dT + static_cast<std::size_t>(ids[i]) * e;
            const T* grow = G + i * e;
            for (int c = 0; c < e; ++c) drow[c] += grow[c];
        }
    });
    return out;
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& x, const std::vector<int>& rows) {
    if (x.rank() != 2) throw ShapeError("select_rows: expected rank-2 input");
    int n = x.dim(0), c = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros({static_cast<int>(rows.size()), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= n) throw IndexError("select_rows: row out of range");
        std::copy_n(x.ptr() + static_cast<std::size_t>(rows[i]) * c, c, out.ptr() + i * c);
    }
    attach_node(out, {x}, [rows, c](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T* dX = p.grad->data();
        const T* G = o.grad->data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            T* drow = dX + static_cast<std::size_t>(rows[i]) * c;
            for (int j = 0; j < c; ++j) drow[j] += G[i * c + j];
        }
    });
    return out;
}

// Mean next-token negative log likelihood over all positions.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [n,v]");
    int n = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("cross_entropy: target count does not match positions");
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * v);
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
        if (targets[i] < 0 || targets[i] >= v)
            throw IndexError("cross_entropy: target outside vocabulary");
        const T* row = logits.ptr() + static_cast<std::size_t>(i) * v;
        T m = row[0];
        for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
        T z = T(0);
        for (int j = 0; j < v; ++j) z += std::exp(row[j] - m);
        T lse = m + std::log(z);
        T* prow = probs->data() + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) prow[j] = std::exp(row[j] - lse);
        loss += lse - row[targets[i]];
    }
    Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(n));
    check_finite(out, "cross_entropy");
    attach_node(out, {logits}, [probs, targets, n, v](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        T g = (*o.grad)[0] / static_cast<T>(n);
        T* dL = p.grad->data();
        const T* P = probs->data();
        for (int i = 0; i < n; ++i) {
            T* drow = dL + static_cast<std::size_t>(i) * v;
            const T* prow = P + static_cast<std::size_t>(i) * v;
            for (int j = 0; j < v; ++j) drow[j] += g * prow[j];
            drow[targets[i]] -= g;
        }
    });
    return out;
}

// ---- attention --------------------------------------------------------------

// Row-stabilized softmax over the allowed entries of each query row;
// disallowed entries are exactly zero. Leading axes are batched.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const MaskMatrix& mask) {
    if (scores.rank() < 2) throw ShapeError("masked_softmax: need at least 2 axes");
    int n_q = scores.dim(scores.rank() - 2);
    int n_k = scores.dim(scores.rank() - 1);
    if (n_q != mask.n_q || n_k != mask.n_k)
        throw ShapeError("masked_softmax: mask extents do not match scores");
    std::size_t batch = scores.numel() / (static_cast<std::size_t>(n_q) * n_k);
    Tensor<T> out = Tensor<T>::zeros(scores.shape);
    for (std::size_t b = 0; b < batch; ++b) {
        for (int i = 0; i < n_q; ++i) {
            const std::size_t off = (b * n_q + i) * n_k;
            const uint8_t* arow = mask.allowed.data() + static_cast<std::size_t>(i) * n_k;
            const T* srow = scores.ptr() + off;
            T* orow = out.ptr() + off;
            T m = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < n_k; ++j)
                if (arow[j]) m = std::max(m, srow[j]);
            if (m == -std::numeric_limits<T>::infinity())
                throw MaskError("masked_softmax: query row " + std::to_string(i) +
                                " has no allowed keys");
            T z = T(0);
            for (int j = 0; j < n_k; ++j)
                if (arow[j]) {
                    orow[j] = std::exp(srow[j] - m);
                    z += orow[j];
                }
            T inv = T(1) / z;
            for (int j = 0; j < n_k; ++j)
                if (arow[j]) orow[j] *= inv;
        }
    }
    check_finite(out, "masked_softmax");
    auto saved = out.data;
    auto allowed = std::make_shared<std::vector<uint8_t>>(mask.allowed);
    attach_node(out, {scores}, [saved, allowed, n_q, n_k](const Tensor<T>& o) {
        auto& p = o.node->parents[0];
        if (!p.requires_grad) return;
        std::size_t batch = o.numel() / (static_cast<std::size_t>(n_q) * n_k);
        const T* P = saved->data();
        const T* G = o.grad->data();
        T* dS = p.grad->data();
        for (std::size_t b = 0; b < batch; ++b)
            for (int i = 0; i < n_q; ++i) {
                const std::size_t off = (b * n_q + i) * n_k;
                const uint8_t* arow = allowed->data() + static_cast<std::size_t>(i) * n_k;
                T dot = T(0);
                for (int j = 0; j < n_k; ++j)
                    if (arow[j]) dot += G[off + j] * P[off + j];
                for (int j = 0; j < n_k; ++j)
                    if (arow[j]) dS[off + j] += P[off + j] * (G[off + j] - dot);
            }
    });
    return out;
}

// Multi-head scaled dot-product attention over a boolean mask. Only allowed
// (query, key) pairs are scored, so the counter reflects the masked cost.
// probs_out, when given, receives the h x n_q x n_k attention map.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const MaskMatrix& mask, int heads,
                               std::type_identity_t<std::vector<T>>* probs_out = nullptr,
                               FlopCounter* counter = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention: expected rank-2 q, k, v");
    int n_q = q.dim(0), e = q.dim(1);
    int n_k = k.dim(0);
    if (k.dim(1) != e || v.dim(1) != e || v.dim(0) != n_k)
        throw ShapeError("attention: k/v extents do not match q");
    if (heads < 1 || e % heads != 0)
        throw ConfigError("attention: head count must divide the embedding width");
    if (mask.n_q != n_q || mask.n_k != n_k)
        throw ShapeError("attention: mask extents do not match");
    if (static_cast<int>(mask.rows.size()) != n_q)
        throw ContractError("attention: mask was not finalized");
    int d = e / heads;
    T scl = T(1) / std::sqrt(static_cast<T>(d));

    auto probs = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(heads) * n_q * n_k, T(0));
    Tensor<T> out = Tensor<T>::zeros({n_q, e});
    std::vector<T> srow;
    long long pairs = 0;
    for (int h = 0; h < heads; ++h) {
        int hoff = h * d;
        for (int i = 0; i < n_q; ++i) {
            const auto& row = mask.rows[i];
            srow.resize(row.size());
            const T* qrow = q.ptr() + static_cast<std::size_t>(i) * e + hoff;
            for (std::size_t r = 0; r < row.size(); ++r) {
                const T* krow = k.ptr() + static_cast<std::size_t>(row[r]) * e + hoff;
                T s = T(0);
                for (int c = 0; c < d; ++c) s += qrow[c] * krow[c];
                srow[r] = s * scl;
            }
            detail::softmax_inplace(srow.data(), static_cast<int>(srow.size()));
            T* prow = probs->data() + (static_cast<std::size_t>(h) * n_q + i) * n_k;
            T* orow = out.ptr() + static_cast<std::size_t>(i) * e + hoff;
            for (std::size_t r = 0; r < row.size(); ++r) {
                T pj = srow[r];
                prow[row[r]] = pj;
                const T* vrow = v.ptr() + static_cast<std::size_t>(row[r]) * e + hoff;
                for (int c = 0; c < d; ++c) orow[c] += pj * vrow[c];
            }
            pairs += static_cast<long long>(row.size());
        }
    }
    if (counter) {
        counter->attn_score_macs += pairs * d;
        counter->attn_av_macs += pairs * d;
    }
    check_finite(out, "attention");
    if (probs_out) *probs_out = *probs;

    auto rows = std::make_shared<std::vector<std::vector<int>>>(mask.rows);
    attach_node(out, {q, k, v}, [probs, rows, heads, d, e, n_q, n_k, scl](const Tensor<T>& o) {
        auto& nd = *o.node;
        const T* G = o.grad->data();
        const T* Q = nd.parents[0].data->data();
        const T* K = nd.parents[1].data->data();
        const T* V = nd.parents[2].data->data();
        T* dQ = nd.parents[0].requires_grad ? nd.parents[0].grad->data() : nullptr;
        T* dK = nd.parents[1].requires_grad ? nd.parents[1].grad->data() : nullptr;
        T* dV = nd.parents[2].requires_grad ? nd.parents[2].grad->data() : nullptr;
        std::vector<T> dp;
        for (int h = 0; h < heads; ++h) {
            int hoff = h * d;
            for (int i = 0; i < n_q; ++i) {
                const auto& row = (*rows)[i];
                const T* prow = probs->data() + (static_cast<std::size_t>(h) * n_q + i) * n_k;
                const T* grow = G + static_cast<std::size_t>(i) * e + hoff;
                dp.assign(row.size(), T(0));
                T dot = T(0);
                for (std::size_t r = 0; r < row.size(); ++r) {
                    const T* vrow = V + static_cast<std::size_t>(row[r]) * e + hoff;
                    T s = T(0);
                    for (int c = 0; c < d; ++c) s += grow[c] * vrow[c];
                    dp[r] = s;
                    dot += s * prow[row[r]];
                    if (dV) {
                        T* dvrow = dV + static_cast<std::size_t>(row[r]) * e + hoff;
                        T pj = prow[row[r]];
                        for (int c = 0; c < d; ++c) dvrow[c] += pj * grow[c];
                    }
                }
                const T* qrow = Q + static_cast<std::size_t>(i) * e + hoff;
                for (std::size_t r = 0; r < row.size(); ++r) {
                    T ds = prow[row[r]] * (dp[r] - dot) * scl;
                    const T* krow = K + static_cast<std::size_t>(row[r]) * e + hoff;
                    if (dQ) {
                        T* dqrow = dQ + static_cast<std::size_t>(i) * e + hoff;
                        for (int c = 0; c < d; ++c) dqrow[c] += ds * krow[c];
                    }
                    if (dK) {
                        T* dkrow = dK + static_cast<std::size_t>(row[r]) * e + hoff;
                        for (int c = 0; c < d; ++c) dkrow[c] += ds * qrow[c];
                    }
                }
            }
        }
    });
    return out;
}

}  // namespace attamba
