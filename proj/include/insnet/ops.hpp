#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "insnet/tensor.hpp"

// Reverse-mode ops over dense 1-D/2-D tensors. Every op allocates a fresh
// output (inputs are never mutated) and, when a tape is active and any input
// requires a gradient, records a backward closure. Closures no-op when the
// output never received a gradient (dead branch).

namespace insnet {
namespace ops {

template <typename T>
inline void check_2d(const Tensor<T>& x, const char* who) {
    if (x.shape().size() != 2) {
        throw ShapeError(std::string(who) + ": expected 2-D tensor, got " +
                         shape_str(x.shape()));
    }
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

template <typename T>
inline bool tape_wants(const Tensor<T>& a) {
    return Tape<T>::current() != nullptr && a.requires_grad();
}

template <typename T>
inline bool tape_wants(const Tensor<T>& a, const Tensor<T>& b) {
    return Tape<T>::current() != nullptr && (a.requires_grad() || b.requires_grad());
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    const auto& av = a.val();
    const auto& bv = b.val();
    auto& ov = out.val();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (tape_wants(a, b)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([pa = a.payload(), pb = b.payload(), po = out.payload()] {
            if (po->grad.empty()) return;
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < po->grad.size(); ++i) pb->grad[i] += po->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    const auto& av = a.val();
    const auto& bv = b.val();
    auto& ov = out.val();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (tape_wants(a, b)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([pa = a.payload(), pb = b.payload(), po = out.payload()] {
            if (po->grad.empty()) return;
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < po->grad.size(); ++i) pb->grad[i] -= po->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    const auto& av = a.val();
    const auto& bv = b.val();
    auto& ov = out.val();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (tape_wants(a, b)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([pa = a.payload(), pb = b.payload(), po = out.payload()] {
            if (po->grad.empty()) return;
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < po->grad.size(); ++i)
                    pa->grad[i] += po->grad[i] * pb->val[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < po->grad.size(); ++i)
                    pb->grad[i] += po->grad[i] * pa->val[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    const auto& av = a.val();
    auto& ov = out.val();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    if (tape_wants(a)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([pa = a.payload(), po = out.payload(), c] {
            if (po->grad.empty()) return;
            pa->ensure_grad();
            for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i] * c;
        });
    }
    return out;
}

// X (n x d) + r broadcast over rows; r is (1 x d) or (d).
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& r) {
    check_2d(x, "add_rowvec");
    const int64_t n = x.size(0), d = x.size(1);
    if (r.numel() != d) {
        throw ShapeError("add_rowvec: row vector size " + std::to_string(r.numel()) +
                         " vs matrix cols " + std::to_string(d));
    }
    Tensor<T> out(x.shape());
    const auto& xv = x.val();
    const auto& rv = r.val();
    auto& ov = out.val();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) ov[i * d + j] = xv[i * d + j] + rv[j];
    if (tape_wants(x, r)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record(
            [px = x.payload(), pr = r.payload(), po = out.payload(), n, d] {
                if (po->grad.empty()) return;
                if (px->requires_grad) {
                    px->ensure_grad();
                    for (size_t i = 0; i < po->grad.size(); ++i) px->grad[i] += po->grad[i];
                }
                if (pr->requires_grad) {
                    pr->ensure_grad();
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < d; ++j) pr->grad[j] += po->grad[i * d + j];
                }
            });
    }
    return out;
}

// x + s broadcast to every element; s is a scalar tensor (participates in
// the graph, unlike scale()'s compile-time constant).
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) {
        throw ShapeError("add_scalar: expected scalar, got " + shape_str(s.shape()));
    }
    Tensor<T> out(x.shape());
    const auto& xv = x.val();
    const T sv = s.val()[0];
    auto& ov = out.val();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + sv;
    if (tape_wants(x, s)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), ps = s.payload(), po = out.payload()] {
            if (po->grad.empty()) return;
            if (px->requires_grad) {
                px->ensure_grad();
                for (size_t i = 0; i < po->grad.size(); ++i) px->grad[i] += po->grad[i];
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                T acc = T(0);
                for (size_t i = 0; i < po->grad.size(); ++i) acc += po->grad[i];
                ps->grad[0] += acc;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const auto& xv = x.val();
    auto& ov = out.val();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload()] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            for (size_t i = 0; i < po->grad.size(); ++i)
                if (px->val[i] > T(0)) px->grad[i] += po->grad[i];
        });
    }
    return out;
}

// Exact GeLU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const auto& xv = x.val();
    auto& ov = out.val();
    const T inv_sqrt2 = T(0.70710678118654752440);
    for (size_t i = 0; i < ov.size(); ++i)
        ov[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload(), inv_sqrt2] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            const T inv_sqrt2pi = T(0.39894228040143267794);
            for (size_t i = 0; i < po->grad.size(); ++i) {
                const T v = px->val[i];
                const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
                px->grad[i] += po->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

// Inverted dropout; advances the caller's rng by exactly numel() draws.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ValueError("dropout: p must be in [0,1), got " + std::to_string(p));
    }
    Tensor<T> out(x.shape());
    const auto& xv = x.val();
    auto& ov = out.val();
    auto keep = std::make_shared<std::vector<uint8_t>>(xv.size());
    const T inv_keep = T(1) / T(1.0 - p);
    for (size_t i = 0; i < ov.size(); ++i) {
        const bool k = rng.uniform() >= p;
        (*keep)[i] = k;
        ov[i] = k ? xv[i] * inv_keep : T(0);
    }
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload(), keep, inv_keep] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            for (size_t i = 0; i < po->grad.size(); ++i)
                if ((*keep)[i]) px->grad[i] += po->grad[i] * inv_keep;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    const int64_t m = a.size(0), k = a.size(1), k2 = b.size(0), n = b.size(1);
    if (k != k2) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
    }
    Tensor<T> out(Shape{m, n});
    const T* av = a.val().data();
    const T* bv = b.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t l = 0; l < k; ++l) {
            const T ail = av[i * k + l];
            const T* brow = bv + l * n;
            T* orow = ov + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += ail * brow[j];
        }
    }
    if (tape_wants(a, b)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record(
            [pa = a.payload(), pb = b.payload(), po = out.payload(), m, k, n] {
                if (po->grad.empty()) return;
                const T* g = po->grad.data();
                if (pa->requires_grad) {
                    pa->ensure_grad();
                    T* ga = pa->grad.data();
                    const T* bv = pb->val.data();
                    // a.grad += g * b^T
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t l = 0; l < k; ++l) {
                            T acc = T(0);
                            const T* grow = g + i * n;
                            const T* brow = bv + l * n;
                            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            ga[i * k + l] += acc;
                        }
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    T* gb = pb->grad.data();
                    const T* av = pa->val.data();
                    // b.grad += a^T * g
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t l = 0; l < k; ++l) {
                            const T ail = av[i * k + l];
                            const T* grow = g + i * n;
                            T* gbrow = gb + l * n;
                            for (int64_t j = 0; j < n; ++j) gbrow[j] += ail * grow[j];
                        }
                }
            });
    }
    return out;
}

// a (m x k) * b^T with b (n x k) -> (m x n)
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    const int64_t m = a.size(0), k = a.size(1), n = b.size(0);
    if (k != b.size(1)) {
        throw ShapeError("matmul_nt: inner extents disagree, " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()) + "^T");
    }
    Tensor<T> out(Shape{m, n});
    const T* av = a.val().data();
    const T* bv = b.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = av + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = bv + j * k;
            T acc = T(0);
            for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            ov[i * n + j] = acc;
        }
    }
    if (tape_wants(a, b)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record(
            [pa = a.payload(), pb = b.payload(), po = out.payload(), m, k, n] {
                if (po->grad.empty()) return;
                const T* g = po->grad.data();
                if (pa->requires_grad) {
                    pa->ensure_grad();
                    T* ga = pa->grad.data();
                    const T* bv = pb->val.data();
                    // a.grad += g * b
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j) {
                            const T gij = g[i * n + j];
                            const T* brow = bv + j * k;
                            T* garow = ga + i * k;
                            for (int64_t l = 0; l < k; ++l) garow[l] += gij * brow[l];
                        }
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    T* gb = pb->grad.data();
                    const T* av = pa->val.data();
                    // b.grad += g^T * a
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j) {
                            const T gij = g[i * n + j];
                            const T* arow = av + i * k;
                            T* gbrow = gb + j * k;
                            for (int64_t l = 0; l < k; ++l) gbrow[l] += gij * arow[l];
                        }
                }
            });
    }
    return out;
}

// a^T * b with a (k x m), b (k x n) -> (m x n)
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    check_2d(a, "matmul_tn");
    check_2d(b, "matmul_tn");
    const int64_t k = a.size(0), m = a.size(1), n = b.size(1);
    if (k != b.size(0)) {
        throw ShapeError("matmul_tn: inner extents disagree, " + shape_str(a.shape()) +
                         "^T * " + shape_str(b.shape()));
    }
    Tensor<T> out(Shape{m, n});
    const T* av = a.val().data();
    const T* bv = b.val().data();
    T* ov = out.val().data();
    for (int64_t l = 0; l < k; ++l) {
        const T* arow = av + l * m;
        const T* brow = bv + l * n;
        for (int64_t i = 0; i < m; ++i) {
            const T ali = arow[i];
            T* orow = ov + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += ali * brow[j];
        }
    }
    if (tape_wants(a, b)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record(
            [pa = a.payload(), pb = b.payload(), po = out.payload(), m, k, n] {
                if (po->grad.empty()) return;
                const T* g = po->grad.data();
                if (pa->requires_grad) {
                    pa->ensure_grad();
                    T* ga = pa->grad.data();
                    const T* bv = pb->val.data();
                    // a.grad += b * g^T
                    for (int64_t l = 0; l < k; ++l)
                        for (int64_t i = 0; i < m; ++i) {
                            T acc = T(0);
                            const T* brow = bv + l * n;
                            const T* grow = g + i * n;
                            for (int64_t j = 0; j < n; ++j) acc += brow[j] * grow[j];
                            ga[l * m + i] += acc;
                        }
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    T* gb = pb->grad.data();
                    const T* av = pa->val.data();
                    // b.grad += a * g
                    for (int64_t l = 0; l < k; ++l)
                        for (int64_t i = 0; i < m; ++i) {
                            const T ali = av[l * m + i];
                            const T* grow = g + i * n;
                            T* gbrow = gb + l * n;
                            for (int64_t j = 0; j < n; ++j) gbrow[j] += ali * grow[j];
                        }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// attention-specific

// scores[i,j] = dot(q[i], p[idx[i*n+j]]), or 0 where idx < 0 (invalid cell,
// expected to be masked downstream). q is (n x dh), p is (m x dh).
template <typename T>
Tensor<T> rel_scores(const Tensor<T>& q, const Tensor<T>& p,
                     const std::shared_ptr<const std::vector<int32_t>>& idx) {
    check_2d(q, "rel_scores");
    check_2d(p, "rel_scores");
    const int64_t n = q.size(0), dh = q.size(1), m = p.size(0);
    if (p.size(1) != dh) {
        throw ShapeError("rel_scores: width mismatch " + shape_str(q.shape()) + " vs " +
                         shape_str(p.shape()));
    }
    if (static_cast<int64_t>(idx->size()) != n * n) {
        throw ShapeError("rel_scores: index table size mismatch");
    }
    Tensor<T> out(Shape{n, n});
    const T* qv = q.val().data();
    const T* pv = p.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < n; ++i) {
        const T* qrow = qv + i * dh;
        for (int64_t j = 0; j < n; ++j) {
            const int32_t id = (*idx)[i * n + j];
            if (id < 0) continue;
            if (id >= m) throw IndexError("rel_scores: index out of range");
            const T* prow = pv + static_cast<int64_t>(id) * dh;
            T acc = T(0);
            for (int64_t l = 0; l < dh; ++l) acc += qrow[l] * prow[l];
            ov[i * n + j] = acc;
        }
    }
    if (tape_wants(q, p)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record(
            [pq = q.payload(), pp = p.payload(), po = out.payload(), idx, n, dh] {
                if (po->grad.empty()) return;
                const T* g = po->grad.data();
                if (pq->requires_grad) pq->ensure_grad();
                if (pp->requires_grad) pp->ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    for (int64_t j = 0; j < n; ++j) {
                        const int32_t id = (*idx)[i * n + j];
                        if (id < 0) continue;
                        const T gij = g[i * n + j];
                        if (gij == T(0)) continue;
                        if (pq->requires_grad) {
                            const T* prow = pp->val.data() + static_cast<int64_t>(id) * dh;
                            T* gq = pq->grad.data() + i * dh;
                            for (int64_t l = 0; l < dh; ++l) gq[l] += gij * prow[l];
                        }
                        if (pp->requires_grad) {
                            const T* qrow = pq->val.data() + i * dh;
                            T* gp = pp->grad.data() + static_cast<int64_t>(id) * dh;
                            for (int64_t l = 0; l < dh; ++l) gp[l] += gij * qrow[l];
                        }
                    }
                }
            });
    }
    return out;
}

// Row-wise softmax over unmasked entries; masked entries are exactly zero.
// mask[i*c+j] != 0 means "allowed". A fully-masked row is an error.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x,
                         const std::shared_ptr<const std::vector<uint8_t>>& mask) {
    check_2d(x, "masked_softmax");
    const int64_t r = x.size(0), c = x.size(1);
    if (static_cast<int64_t>(mask->size()) != r * c) {
        throw ShapeError("masked_softmax: mask size mismatch");
    }
    Tensor<T> out(x.shape());
    const T* xv = x.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < r; ++i) {
        const T* row = xv + i * c;
        const uint8_t* mrow = mask->data() + i * c;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (int64_t j = 0; j < c; ++j) {
            if (mrow[j]) {
                any = true;
                if (row[j] > mx) mx = row[j];
            }
        }
        if (!any) {
            throw ValueError("masked_softmax: fully-masked row " + std::to_string(i));
        }
        T sum = T(0);
        T* orow = ov + i * c;
        for (int64_t j = 0; j < c; ++j) {
            if (mrow[j]) {
                orow[j] = std::exp(row[j] - mx);
                sum += orow[j];
            }
        }
        const T inv = T(1) / sum;
        for (int64_t j = 0; j < c; ++j) orow[j] = mrow[j] ? orow[j] * inv : T(0);
    }
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload(), mask, r, c] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            const T* g = po->grad.data();
            const T* y = po->val.data();
            T* gx = px->grad.data();
            for (int64_t i = 0; i < r; ++i) {
                const uint8_t* mrow = mask->data() + i * c;
                T dot = T(0);
                for (int64_t j = 0; j < c; ++j)
                    if (mrow[j]) dot += g[i * c + j] * y[i * c + j];
                for (int64_t j = 0; j < c; ++j)
                    if (mrow[j]) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
            }
        });
    }
    return out;
}

// Row-wise log-softmax (no mask).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
    check_2d(x, "log_softmax");
    const int64_t r = x.size(0), c = x.size(1);
    Tensor<T> out(x.shape());
    const T* xv = x.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < r; ++i) {
        const T* row = xv + i * c;
        T mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
        const T lse = mx + std::log(sum);
        for (int64_t j = 0; j < c; ++j) ov[i * c + j] = row[j] - lse;
    }
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload(), r, c] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            const T* g = po->grad.data();
            const T* y = po->val.data();
            T* gx = px->grad.data();
            for (int64_t i = 0; i < r; ++i) {
                T gsum = T(0);
                for (int64_t j = 0; j < c; ++j) gsum += g[i * c + j];
                for (int64_t j = 0; j < c; ++j)
                    gx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gsum;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps) {
    check_2d(x, "layer_norm");
    if (eps <= T(0)) {
        throw ValueError("layer_norm: eps must be positive");
    }
    const int64_t n = x.size(0), d = x.size(1);
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias size mismatch with width " +
                         std::to_string(d));
    }
    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(n * d));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    const T* xv = x.val().data();
    const T* gv = gain.val().data();
    const T* bv = bias.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < n; ++i) {
        const T* row = xv + i * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= T(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= T(d);
        const T inv = T(1) / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        for (int64_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * inv;
            (*xhat)[i * d + j] = h;
            ov[i * d + j] = h * gv[j] + bv[j];
        }
    }
    if (Tape<T>::current() &&
        (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), pg = gain.payload(),
                                    pb = bias.payload(), po = out.payload(), xhat,
                                    inv_std, n, d] {
            if (po->grad.empty()) return;
            const T* g = po->grad.data();
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        pg->grad[j] += g[i * d + j] * (*xhat)[i * d + j];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) pb->grad[j] += g[i * d + j];
            }
            if (px->requires_grad) {
                px->ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    T gy_mean = T(0), gyx_mean = T(0);
                    for (int64_t j = 0; j < d; ++j) {
                        const T gy = g[i * d + j] * pg->val[j];
                        gy_mean += gy;
                        gyx_mean += gy * (*xhat)[i * d + j];
                    }
                    gy_mean /= T(d);
                    gyx_mean /= T(d);
                    const T inv = (*inv_std)[i];
                    for (int64_t j = 0; j < d; ++j) {
                        const T gy = g[i * d + j] * pg->val[j];
                        px->grad[i * d + j] +=
                            inv * (gy - gy_mean - (*xhat)[i * d + j] * gyx_mean);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t start, int64_t len) {
    check_2d(x, "slice_cols");
    const int64_t n = x.size(0), d = x.size(1);
    if (start < 0 || len <= 0 || start + len > d) {
        throw IndexError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside width " +
                         std::to_string(d));
    }
    Tensor<T> out(Shape{n, len});
    const T* xv = x.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < len; ++j) ov[i * len + j] = xv[i * d + start + j];
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record(
            [px = x.payload(), po = out.payload(), n, d, start, len] {
                if (po->grad.empty()) return;
                px->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < len; ++j)
                        px->grad[i * d + start + j] += po->grad[i * len + j];
            });
    }
    return out;
}

template <typename T>
Tensor<T> concat_last_dim(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw ValueError("concat_last_dim: empty input list");
    }
    const int64_t n = parts[0].rows();
    int64_t total = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        check_2d(p, "concat_last_dim");
        if (p.size(0) != n) {
            throw ShapeError("concat_last_dim: row count mismatch");
        }
        total += p.size(1);
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor<T> out(Shape{n, total});
    T* ov = out.val().data();
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t d = p.size(1);
        const T* pv = p.val().data();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) ov[i * total + off + j] = pv[i * d + j];
        off += d;
    }
    if (Tape<T>::current() && needs_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<Payload<T>>> payloads;
        payloads.reserve(parts.size());
        for (const auto& p : parts) payloads.push_back(p.payload());
        Tape<T>::current()->record([payloads, po = out.payload(), n, total] {
            if (po->grad.empty()) return;
            int64_t off = 0;
            for (auto& pp : payloads) {
                const int64_t d = pp->shape.back();
                if (pp->requires_grad) {
                    pp->ensure_grad();
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < d; ++j)
                            pp->grad[i * d + j] += po->grad[i * total + off + j];
                }
                off += d;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw ValueError("concat_rows: empty input list");
    }
    const int64_t d = parts[0].cols();
    int64_t total = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        check_2d(p, "concat_rows");
        if (p.size(1) != d) {
            throw ShapeError("concat_rows: column count mismatch");
        }
        total += p.size(0);
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor<T> out(Shape{total, d});
    T* ov = out.val().data();
    int64_t off = 0;
    for (const auto& p : parts) {
        const auto& pv = p.val();
        std::copy(pv.begin(), pv.end(), ov + off * d);
        off += p.size(0);
    }
    if (Tape<T>::current() && needs_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<Payload<T>>> payloads;
        payloads.reserve(parts.size());
        for (const auto& p : parts) payloads.push_back(p.payload());
        Tape<T>::current()->record([payloads, po = out.payload(), d] {
            if (po->grad.empty()) return;
            int64_t off = 0;
            for (auto& pp : payloads) {
                const int64_t rows = pp->shape[0];
                if (pp->requires_grad) {
                    pp->ensure_grad();
                    for (int64_t i = 0; i < rows * d; ++i)
                        pp->grad[i] += po->grad[off * d + i];
                }
                off += rows;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_last_dim(std::initializer_list<Tensor<T>> parts) {
    return concat_last_dim(std::vector<Tensor<T>>(parts));
}

template <typename T>
Tensor<T> concat_rows(std::initializer_list<Tensor<T>> parts) {
    return concat_rows(std::vector<Tensor<T>>(parts));
}

// Same data, new extents; gradient passes through untouched.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor<T> out(std::move(shape), x.val());
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload()] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            for (size_t i = 0; i < po->grad.size(); ++i) px->grad[i] += po->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& indices) {
    check_2d(x, "gather_rows");
    const int64_t n = x.size(0), d = x.size(1);
    const int64_t k = static_cast<int64_t>(indices.size());
    for (int64_t id : indices) {
        if (id < 0 || id >= n) {
            throw IndexError("gather_rows: index " + std::to_string(id) +
                             " outside row count " + std::to_string(n));
        }
    }
    Tensor<T> out(Shape{k, d});
    const T* xv = x.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < d; ++j) ov[i * d + j] = xv[indices[i] * d + j];
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload(), indices, d, k] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            for (int64_t i = 0; i < k; ++i)
                for (int64_t j = 0; j < d; ++j)
                    px->grad[indices[i] * d + j] += po->grad[i * d + j];
        });
    }
    return out;
}

// gather_rows with ids validated against a vocabulary-sized table.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int64_t>& ids) {
    check_2d(table, "embedding_lookup");
    for (int64_t id : ids) {
        if (id < 0 || id >= table.size(0)) {
            throw IndexError("embedding_lookup: id " + std::to_string(id) +
                             " outside vocabulary of " + std::to_string(table.size(0)));
        }
    }
    return gather_rows(table, ids);
}

// ---------------------------------------------------------------------------
// reductions and losses

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out(Shape{1});
    T acc = T(0);
    for (const T v : x.val()) acc += v;
    out.val()[0] = acc;
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload()] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            const T g = po->grad[0];
            for (auto& v : px->grad) v += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    check_2d(x, "mean_rows");
    const int64_t n = x.size(0), d = x.size(1);
    Tensor<T> out(Shape{1, d});
    const T* xv = x.val().data();
    T* ov = out.val().data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) ov[j] += xv[i * d + j];
    const T inv = T(1) / T(n);
    for (int64_t j = 0; j < d; ++j) ov[j] *= inv;
    if (tape_wants(x)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record([px = x.payload(), po = out.payload(), n, d, inv] {
            if (po->grad.empty()) return;
            px->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j) px->grad[i * d + j] += po->grad[j] * inv;
        });
    }
    return out;
}

// -log softmax(logits)[target]; logits may be (v) or (1 x v).
template <typename T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits, int64_t target) {
    const int64_t v = logits.numel();
    if (logits.shape().size() == 2 && logits.size(0) != 1) {
        throw ShapeError("cross_entropy_from_logits: expected a single row, got " +
                         shape_str(logits.shape()));
    }
    if (target < 0 || target >= v) {
        throw IndexError("cross_entropy_from_logits: target " + std::to_string(target) +
                         " outside vocabulary of " + std::to_string(v));
    }
    const T* lv = logits.val().data();
    T mx = lv[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, lv[j]);
    T sum = T(0);
    for (int64_t j = 0; j < v; ++j) sum += std::exp(lv[j] - mx);
    const T lse = mx + std::log(sum);
    Tensor<T> out = Tensor<T>::scalar(lse - lv[target]);
    if (tape_wants(logits)) {
        out.set_requires_grad(true);
        Tape<T>::current()->record(
            [pl = logits.payload(), po = out.payload(), target, v, lse] {
                if (po->grad.empty()) return;
                pl->ensure_grad();
                const T g = po->grad[0];
                for (int64_t j = 0; j < v; ++j) {
                    T p = std::exp(pl->val[j] - lse);
                    pl->grad[j] += g * (p - (j == target ? T(1) : T(0)));
                }
            });
    }
    return out;
}

// Non-differentiating helpers.

template <typename T>
int64_t argmax(const std::vector<T>& v) {
    int64_t best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int64_t>(i);
    return best;
}

}  // namespace ops
}  // namespace insnet
