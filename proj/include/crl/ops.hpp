#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

// ---------------------------------------------------------------------------
// gemm: C[M,N] += op(A) * op(B), row-major with leading dimensions.
// op(A) is [M,K]; stored as [M,K]/lda when !tA, as [K,M]/lda when tA.
// Every matmul-like backward in the library funnels through this kernel.
// ---------------------------------------------------------------------------
inline void gemm(bool tA, bool tB, int M, int N, int K,
                 const double* A, int lda, const double* B, int ldb,
                 double* C, int ldc) {
    if (!tA && !tB) {
        for (int i = 0; i < M; ++i) {
            double* c = C + static_cast<std::size_t>(i) * ldc;
            const double* a = A + static_cast<std::size_t>(i) * lda;
            for (int k = 0; k < K; ++k) {
                const double av = a[k];
                if (av == 0.0) continue;
                const double* b = B + static_cast<std::size_t>(k) * ldb;
                for (int j = 0; j < N; ++j) c[j] += av * b[j];
            }
        }
    } else if (!tA && tB) {
        for (int i = 0; i < M; ++i) {
            const double* a = A + static_cast<std::size_t>(i) * lda;
            double* c = C + static_cast<std::size_t>(i) * ldc;
            for (int j = 0; j < N; ++j) {
                const double* b = B + static_cast<std::size_t>(j) * ldb;
                double acc = 0.0;
                for (int k = 0; k < K; ++k) acc += a[k] * b[k];
                c[j] += acc;
            }
        }
    } else if (tA && !tB) {
        for (int k = 0; k < K; ++k) {
            const double* a = A + static_cast<std::size_t>(k) * lda;
            const double* b = B + static_cast<std::size_t>(k) * ldb;
            for (int i = 0; i < M; ++i) {
                const double av = a[i];
                if (av == 0.0) continue;
                double* c = C + static_cast<std::size_t>(i) * ldc;
                for (int j = 0; j < N; ++j) c[j] += av * b[j];
            }
        }
    } else {
        for (int i = 0; i < M; ++i) {
            double* c = C + static_cast<std::size_t>(i) * ldc;
            for (int j = 0; j < N; ++j) {
                const double* b = B + static_cast<std::size_t>(j) * ldb;
                double acc = 0.0;
                for (int k = 0; k < K; ++k) acc += A[static_cast<std::size_t>(k) * lda + i] * b[k];
                c[j] += acc;
            }
        }
    }
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

inline void require_same_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.tape_ptr() != b.tape_ptr())
        throw UsageError(std::string(op) + ": tensors belong to different tapes");
}

inline Tape::Node* out_node(Tape& t, Shape s, bool needs, const char* op) {
    return t.make(std::move(s), needs, op);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binaries
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b, "add");
    detail::require_same_shape(a, b, "add");
    Tape& t = a.tape();
    Tape::Node *an = a.node(), *bn = b.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad || bn->needs_grad, "add");
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = an->val[i] + bn->val[i];
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, bn]() {
            if (an->needs_grad)
                for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
            if (bn->needs_grad)
                for (std::size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i];
        };
    return {&t, o};
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b, "sub");
    detail::require_same_shape(a, b, "sub");
    Tape& t = a.tape();
    Tape::Node *an = a.node(), *bn = b.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad || bn->needs_grad, "sub");
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = an->val[i] - bn->val[i];
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, bn]() {
            if (an->needs_grad)
                for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
            if (bn->needs_grad)
                for (std::size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] -= o->grad[i];
        };
    return {&t, o};
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b, "mul");
    detail::require_same_shape(a, b, "mul");
    Tape& t = a.tape();
    Tape::Node *an = a.node(), *bn = b.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad || bn->needs_grad, "mul");
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = an->val[i] * bn->val[i];
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, bn]() {
            if (an->needs_grad)
                for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * bn->val[i];
            if (bn->needs_grad)
                for (std::size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i] * an->val[i];
        };
    return {&t, o};
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::require_same_tape(a, b, "div");
    detail::require_same_shape(a, b, "div");
    Tape& t = a.tape();
    Tape::Node *an = a.node(), *bn = b.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad || bn->needs_grad, "div");
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = an->val[i] / bn->val[i];
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, bn]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                const double inv = 1.0 / bn->val[i];
                if (an->needs_grad) an->grad[i] += o->grad[i] * inv;
                if (bn->needs_grad) bn->grad[i] -= o->grad[i] * o->val[i] * inv;
            }
        };
    return {&t, o};
}

// n-ary elementwise sum (loss assembly over many terms).
inline Tensor add_n(std::span<const Tensor> xs) {
    if (xs.empty()) throw UsageError("add_n: empty input list");
    Tape& t = xs[0].tape();
    bool needs = false;
    for (const Tensor& x : xs) {
        detail::require_same_shape(xs[0], x, "add_n");
        needs = needs || x.node()->needs_grad;
    }
    Tape::Node* o = t.make(xs[0].shape(), needs, "add_n");
    for (const Tensor& x : xs) {
        const auto& v = x.node()->val;
        for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] += v[i];
    }
    t.check_finite(o);
    if (o->needs_grad) {
        std::vector<Tape::Node*> parents;
        parents.reserve(xs.size());
        for (const Tensor& x : xs) parents.push_back(x.node());
        o->back = [o, parents = std::move(parents)]() {
            for (Tape::Node* p : parents) {
                if (!p->needs_grad) continue;
                for (std::size_t i = 0; i < o->grad.size(); ++i) p->grad[i] += o->grad[i];
            }
        };
    }
    return {&t, o};
}

// ---------------------------------------------------------------------------
// scalar-broadcast helpers
// ---------------------------------------------------------------------------

inline Tensor scale(const Tensor& a, double c) {
    Tape& t = a.tape();
    Tape::Node* an = a.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad, "scale");
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = an->val[i] * c;
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, c]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * c;
        };
    return {&t, o};
}

inline Tensor add_scalar(const Tensor& a, double c) {
    Tape& t = a.tape();
    Tape::Node* an = a.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad, "add_scalar");
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = an->val[i] + c;
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
        };
    return {&t, o};
}

// y = a + coef * s where s is a scalar tensor broadcast over a.
inline Tensor add_bscalar(const Tensor& a, const Tensor& s, double coef = 1.0) {
    detail::require_same_tape(a, s, "add_bscalar");
    if (s.size() != 1) throw ShapeError("add_bscalar: s must be scalar, got " + shape_str(s.shape()));
    Tape& t = a.tape();
    Tape::Node *an = a.node(), *sn = s.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad || sn->needs_grad, "add_bscalar");
    const double sv = sn->val[0] * coef;
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = an->val[i] + sv;
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, sn, coef]() {
            double acc = 0.0;
            for (std::size_t i = 0; i < o->grad.size(); ++i) {
                if (an->needs_grad) an->grad[i] += o->grad[i];
                acc += o->grad[i];
            }
            if (sn->needs_grad) sn->grad[0] += coef * acc;
        };
    return {&t, o};
}

// ---------------------------------------------------------------------------
// elementwise unaries
// ---------------------------------------------------------------------------

namespace detail {

template <class F, class DF>
Tensor unary(const Tensor& a, const char* name, F f, DF df) {
    Tape& t = a.tape();
    Tape::Node* an = a.node();
    Tape::Node* o = t.make(a.shape(), an->needs_grad, name);
    for (std::size_t i = 0; i < o->val.size(); ++i) o->val[i] = f(an->val[i]);
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, df]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i)
                an->grad[i] += o->grad[i] * df(an->val[i], o->val[i]);
        };
    return {&t, o};
}

}  // namespace detail

inline Tensor exp(const Tensor& a) {
    return detail::unary(a, "exp", [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary(a, "log", [](double x) { return std::log(x); },
                         [](double x, double) { return 1.0 / x; });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(a, "sigmoid",
                         [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                        : std::exp(x) / (1.0 + std::exp(x)); },
                         [](double, double y) { return y * (1.0 - y); });
}

inline Tensor softplus(const Tensor& a) {
    return detail::unary(a, "softplus",
                         [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
                         [](double x, double) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                                : std::exp(x) / (1.0 + std::exp(x)); });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(a, "square", [](double x) { return x * x; },
                         [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// matmul / affine
// ---------------------------------------------------------------------------

// C = op(A)·op(B); op(X) transposes when the flag is set.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool tA = false, bool tB = false) {
    detail::require_same_tape(a, b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int M = tA ? a.dim(1) : a.dim(0);
    const int K = tA ? a.dim(0) : a.dim(1);
    const int Kb = tB ? b.dim(1) : b.dim(0);
    const int N = tB ? b.dim(0) : b.dim(1);
    if (K != Kb)
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) +
                         (tA ? "^T" : "") + " x " + shape_str(b.shape()) + (tB ? "^T" : ""));
    Tape& t = a.tape();
    Tape::Node *an = a.node(), *bn = b.node();
    Tape::Node* o = t.make({M, N}, an->needs_grad || bn->needs_grad, "matmul");
    const int lda = a.dim(1), ldb = b.dim(1);
    gemm(tA, tB, M, N, K, an->val.data(), lda, bn->val.data(), ldb, o->val.data(), N);
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, an, bn, tA, tB, M, N, K, lda, ldb]() {
            if (an->needs_grad) {
                // d(opA) = dC·op(B)^T; transpose back into A's storage.
                if (!tA)
                    gemm(false, !tB, M, K, N, o->grad.data(), N, bn->val.data(), ldb,
                         an->grad.data(), lda);
                else
                    gemm(tB, true, K, M, N, bn->val.data(), ldb, o->grad.data(), N,
                         an->grad.data(), lda);
            }
            if (bn->needs_grad) {
                if (!tB)
                    gemm(!tA, false, K, N, M, an->val.data(), lda, o->grad.data(), N,
                         bn->grad.data(), ldb);
                else
                    gemm(true, tA, N, K, M, o->grad.data(), N, an->val.data(), lda,
                         bn->grad.data(), ldb);
            }
        };
    return {&t, o};
}

// y = x·W + b. x may be [din] or [R,din]; W is [din,dout]; b is [dout].
inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
    detail::require_same_tape(x, W, "linear");
    detail::require_same_tape(x, b, "linear");
    if (W.ndim() != 2)
        throw ShapeError("linear: weight must be 2-D, got " + shape_str(W.shape()));
    const bool vec = x.ndim() == 1;
    const int din = vec ? x.dim(0) : x.dim(x.ndim() - 1);
    if (x.ndim() > 2) throw ShapeError("linear: input rank > 2: " + shape_str(x.shape()));
    const int R = vec ? 1 : x.dim(0);
    const int dout = W.dim(1);
    if (din != W.dim(0) || b.dim(0) != dout || b.ndim() != 1)
        throw ShapeError("linear: shape mismatch between input " + shape_str(x.shape()) +
                         ", weight " + shape_str(W.shape()) + ", bias " + shape_str(b.shape()));
    Tape& t = x.tape();
    Tape::Node *xn = x.node(), *wn = W.node(), *bn = b.node();
    Shape oshape = vec ? Shape{dout} : Shape{R, dout};
    Tape::Node* o = t.make(std::move(oshape),
                           xn->needs_grad || wn->needs_grad || bn->needs_grad, "linear");
    for (int r = 0; r < R; ++r)
        std::copy(bn->val.begin(), bn->val.end(),
                  o->val.begin() + static_cast<std::size_t>(r) * dout);
    gemm(false, false, R, dout, din, xn->val.data(), din, wn->val.data(), dout,
         o->val.data(), dout);
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, xn, wn, bn, R, din, dout]() {
            if (xn->needs_grad)
                gemm(false, true, R, din, dout, o->grad.data(), dout, wn->val.data(), dout,
                     xn->grad.data(), din);
            if (wn->needs_grad)
                gemm(true, false, din, dout, R, xn->val.data(), din, o->grad.data(), dout,
                     wn->grad.data(), dout);
            if (bn->needs_grad)
                for (int r = 0; r < R; ++r)
                    for (int j = 0; j < dout; ++j)
                        bn->grad[static_cast<std::size_t>(j)] +=
                            o->grad[static_cast<std::size_t>(r) * dout + j];
        };
    return {&t, o};
}

// ---------------------------------------------------------------------------
// softmax over the last dimension (max-shifted)
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x) {
    if (x.ndim() < 1) throw ShapeError("softmax: rank-0 input");
    const int k = x.dim(x.ndim() - 1);
    if (k < 1) throw ShapeError("softmax: empty last dimension");
    const std::int64_t rows = x.size() / k;
    Tape& t = x.tape();
    Tape::Node* xn = x.node();
    Tape::Node* o = t.make(x.shape(), xn->needs_grad, "softmax");
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = xn->val.data() + r * k;
        double* out = o->val.data() + r * k;
        double mx = in[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, in[i]);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            out[i] = std::exp(in[i] - mx);
            sum += out[i];
        }
        const double inv = 1.0 / sum;
        for (int i = 0; i < k; ++i) out[i] *= inv;
    }
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, xn, rows, k]() {
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* y = o->val.data() + r * k;
                const double* gy = o->grad.data() + r * k;
                double* gx = xn->grad.data() + r * k;
                double dot = 0.0;
                for (int i = 0; i < k; ++i) dot += gy[i] * y[i];
                for (int i = 0; i < k; ++i) gx[i] += y[i] * (gy[i] - dot);
            }
        };
    return {&t, o};
}

// ---------------------------------------------------------------------------
// reductions and broadcasts
// ---------------------------------------------------------------------------

inline Tensor reduce_sum(const Tensor& x) {
    Tape& t = x.tape();
    Tape::Node* xn = x.node();
    Tape::Node* o = t.make({1}, xn->needs_grad, "reduce_sum");
    double s = 0.0;
    for (double v : xn->val) s += v;
    o->val[0] = s;
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, xn]() {
            const double g = o->grad[0];
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        };
    return {&t, o};
}

inline Tensor reduce_mean(const Tensor& x) {
    return scale(reduce_sum(x), 1.0 / static_cast<double>(x.size()));
}

// Row sums of a 2-D tensor: [m,n] -> [m].
inline Tensor row_sum(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("row_sum: expected 2-D, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tape& t = x.tape();
    Tape::Node* xn = x.node();
    Tape::Node* o = t.make({m}, xn->needs_grad, "row_sum");
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        const double* row = xn->val.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) s += row[j];
        o->val[static_cast<std::size_t>(i)] = s;
    }
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, xn, m, n]() {
            for (int i = 0; i < m; ++i) {
                const double g = o->grad[static_cast<std::size_t>(i)];
                double* row = xn->grad.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) row[j] += g;
            }
        };
    return {&t, o};
}

// X[m,n] + v[m] broadcast across columns.
inline Tensor add_colvec(const Tensor& x, const Tensor& v) {
    detail::require_same_tape(x, v, "add_colvec");
    if (x.ndim() != 2 || v.ndim() != 1 || v.dim(0) != x.dim(0))
        throw ShapeError("add_colvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(v.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tape& t = x.tape();
    Tape::Node *xn = x.node(), *vn = v.node();
    Tape::Node* o = t.make(x.shape(), xn->needs_grad || vn->needs_grad, "add_colvec");
    for (int i = 0; i < m; ++i) {
        const double b = vn->val[static_cast<std::size_t>(i)];
        const double* in = xn->val.data() + static_cast<std::size_t>(i) * n;
        double* out = o->val.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) out[j] = in[j] + b;
    }
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, xn, vn, m, n]() {
            for (int i = 0; i < m; ++i) {
                const double* g = o->grad.data() + static_cast<std::size_t>(i) * n;
                if (xn->needs_grad) {
                    double* gx = xn->grad.data() + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) gx[j] += g[j];
                }
                if (vn->needs_grad) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += g[j];
                    vn->grad[static_cast<std::size_t>(i)] += acc;
                }
            }
        };
    return {&t, o};
}

// Main diagonal of a square matrix: [n,n] -> [n].
inline Tensor diag(const Tensor& x) {
    if (x.ndim() != 2 || x.dim(0) != x.dim(1))
        throw ShapeError("diag: expected square matrix, got " + shape_str(x.shape()));
    const int n = x.dim(0);
    Tape& t = x.tape();
    Tape::Node* xn = x.node();
    Tape::Node* o = t.make({n}, xn->needs_grad, "diag");
    for (int i = 0; i < n; ++i)
        o->val[static_cast<std::size_t>(i)] = xn->val[static_cast<std::size_t>(i) * n + i];
    t.check_finite(o);
    if (o->needs_grad)
        o->back = [o, xn, n]() {
            for (int i = 0; i < n; ++i)
                xn->grad[static_cast<std::size_t>(i) * n + i] += o->grad[static_cast<std::size_t>(i)];
        };
    return {&t, o};
}

// ---------------------------------------------------------------------------
// indexing / reassembly
// ---------------------------------------------------------------------------

inline Tensor row_slice(const Tensor& x, int row) {
    if (x.ndim() != 2) throw ShapeError("row_slice: expected 2-D, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    if (row < 0 || row >= m) throw UsageError("row_slice: row index out of range");
    Tape& t = x.tape();
    Tape::Node* xn = x.node();
    Tape::Node* o = t.make({n}, xn->needs_grad, "row_slice");
    std::copy_n(xn->val.data() + static_cast<std::size_t>(row) * n, n, o->val.data());
    if (o->needs_grad)
        o->back = [o, xn, row, n]() {
            double* g = xn->grad.data() + static_cast<std::size_t>(row) * n;
            for (int j = 0; j < n; ++j) g[j] += o->grad[static_cast<std::size_t>(j)];
        };
    return {&t, o};
}

inline Tensor stack_rows(std::span<const Tensor> rows) {
    if (rows.empty()) throw UsageError("stack_rows: empty input list");
    const int n = rows[0].dim(0);
    Tape& t = rows[0].tape();
    bool needs = false;
    for (const Tensor& r : rows) {
        if (r.ndim() != 1 || r.dim(0) != n)
            throw ShapeError("stack_rows: all rows must be 1-D of equal length");
        needs = needs || r.node()->needs_grad;
    }
    const int m = static_cast<int>(rows.size());
    Tape::Node* o = t.make({m, n}, needs, "stack_rows");
    for (int i = 0; i < m; ++i)
        std::copy_n(rows[static_cast<std::size_t>(i)].node()->val.data(), n,
                    o->val.data() + static_cast<std::size_t>(i) * n);
    if (o->needs_grad) {
        std::vector<Tape::Node*> parents;
        for (const Tensor& r : rows) parents.push_back(r.node());
        o->back = [o, parents = std::move(parents), n]() {
            for (std::size_t i = 0; i < parents.size(); ++i) {
                if (!parents[i]->needs_grad) continue;
                const double* g = o->grad.data() + i * static_cast<std::size_t>(n);
                for (int j = 0; j < n; ++j) parents[i]->grad[static_cast<std::size_t>(j)] += g[j];
            }
        };
    }
    return {&t, o};
}

inline Tensor concat1d(std::span<const Tensor> parts) {
    if (parts.empty()) throw UsageError("concat1d: empty input list");
    Tape& t = parts[0].tape();
    int total = 0;
    bool needs = false;
    for (const Tensor& p : parts) {
        if (p.ndim() != 1) throw ShapeError("concat1d: inputs must be 1-D");
        total += p.dim(0);
        needs = needs || p.node()->needs_grad;
    }
    Tape::Node* o = t.make({total}, needs, "concat1d");
    int off = 0;
    for (const Tensor& p : parts) {
        std::copy_n(p.node()->val.data(), p.dim(0), o->val.data() + off);
        off += p.dim(0);
    }
    if (o->needs_grad) {
        std::vector<Tape::Node*> parents;
        for (const Tensor& p : parts) parents.push_back(p.node());
        o->back = [o, parents = std::move(parents)]() {
            std::size_t off2 = 0;
            for (Tape::Node* p : parents) {
                const std::size_t len = p->val.size();
                if (p->needs_grad)
                    for (std::size_t j = 0; j < len; ++j) p->grad[j] += o->grad[off2 + j];
                off2 += len;
            }
        };
    }
    return {&t, o};
}

// Embedding lookup: rows of E[V,d] selected by ids -> [n,d].
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw ShapeError("gather_rows: table must be 2-D");
    const int V = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= V) throw UsageError("gather_rows: id out of vocabulary range");
    Tape& t = table.tape();
    Tape::Node* tn = table.node();
    const int n = static_cast<int>(ids.size());
    Tape::Node* o = t.make({n, d}, tn->needs_grad, "gather_rows");
    for (int i = 0; i < n; ++i)
        std::copy_n(tn->val.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
                    d, o->val.data() + static_cast<std::size_t>(i) * d);
    if (o->needs_grad)
        o->back = [o, tn, ids, d]() {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* g = tn->grad.data() + static_cast<std::size_t>(ids[i]) * d;
                const double* go = o->grad.data() + i * static_cast<std::size_t>(d);
                for (int j = 0; j < d; ++j) g[j] += go[j];
            }
        };
    return {&t, o};
}

// Same data, new shape (copy with pass-through gradient).
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
    Tape& t = x.tape();
    Tape::Node* xn = x.node();
    Tape::Node* o = t.make(std::move(shape), xn->needs_grad, "reshape");
    o->val = xn->val;
    if (o->needs_grad)
        o->back = [o, xn]() {
            for (std::size_t i = 0; i < o->grad.size(); ++i) xn->grad[i] += o->grad[i];
        };
    return {&t, o};
}

// Sparse row scatter: a [rows, width] tensor whose listed rows are the given
// 1-D tensors and whose remaining rows are zero.
inline Tensor compose_rows(Tape& t, int rows, int width,
                           std::span<const std::pair<int, Tensor>> placed) {
    bool needs = false;
    for (const auto& [idx, ten] : placed) {
        if (idx < 0 || idx >= rows) throw UsageError("compose_rows: row index out of range");
        if (ten.ndim() != 1 || ten.dim(0) != width)
            throw ShapeError("compose_rows: entry shape " + shape_str(ten.shape()) +
                             " does not match width " + std::to_string(width));
        needs = needs || ten.node()->needs_grad;
    }
    Tape::Node* o = t.make({rows, width}, needs, "compose_rows");
    for (const auto& [idx, ten] : placed)
        std::copy_n(ten.node()->val.data(), width,
                    o->val.data() + static_cast<std::size_t>(idx) * width);
    if (o->needs_grad) {
        std::vector<std::pair<int, Tape::Node*>> parents;
        for (const auto& [idx, ten] : placed) parents.emplace_back(idx, ten.node());
        o->back = [o, parents = std::move(parents), width]() {
            for (const auto& [idx, p] : parents) {
                if (!p->needs_grad) continue;
                const double* g = o->grad.data() + static_cast<std::size_t>(idx) * width;
                for (int j = 0; j < width; ++j) p->grad[static_cast<std::size_t>(j)] += g[j];
            }
        };
    }
    return {&t, o};
}

// Single element by flat index -> scalar.
inline Tensor select(const Tensor& x, std::int64_t index) {
    if (index < 0 || index >= x.size()) throw UsageError("select: index out of range");
    Tape& t = x.tape();
    Tape::Node* xn = x.node();
    Tape::Node* o = t.make({1}, xn->needs_grad, "select");
    o->val[0] = xn->val[static_cast<std::size_t>(index)];
    if (o->needs_grad)
        o->back = [o, xn, index]() { xn->grad[static_cast<std::size_t>(index)] += o->grad[0]; };
    return {&t, o};
}

// ---------------------------------------------------------------------------
// conv2d, 3x3, stride 1, zero 'same' padding, channels-last [H,W,C]
// ---------------------------------------------------------------------------

inline Tensor conv2d_3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    detail::require_same_tape(x, kernel, "conv2d");
    if (x.ndim() != 3) throw ShapeError("conv2d: input must be [H,W,C], got " + shape_str(x.shape()));
    if (kernel.ndim() != 4 || kernel.dim(0) != 3 || kernel.dim(1) != 3)
        throw ShapeError("conv2d: kernel must be [3,3,Cin,Cout], got " + shape_str(kernel.shape()));
    const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    const int Co = kernel.dim(3);
    if (kernel.dim(2) != Ci || bias.dim(0) != Co)
        throw ShapeError("conv2d: channel mismatch between input " + shape_str(x.shape()) +
                         ", kernel " + shape_str(kernel.shape()) + ", bias " + shape_str(bias.shape()));
    Tape& t = x.tape();
    Tape::Node *xn = x.node(), *kn = kernel.node(), *bn = bias.node();
    Tape::Node* o = t.make({H, W, Co}, xn->needs_grad || kn->needs_grad || bn->needs_grad, "conv2d");

    auto run = [H, W, Ci, Co](const double* in, const double* K, const double* b, double* out) {
        for (int y = 0; y < H; ++y)
            for (int x2 = 0; x2 < W; ++x2) {
                double* op = out + (static_cast<std::size_t>(y) * W + x2) * Co;
                for (int c = 0; c < Co; ++c) op[c] = b[c];
                for (int dy = -1; dy <= 1; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= H) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int xx = x2 + dx;
                        if (xx < 0 || xx >= W) continue;
                        const double* ip = in + (static_cast<std::size_t>(yy) * W + xx) * Ci;
                        const double* kp =
                            K + ((static_cast<std::size_t>(dy + 1) * 3 + (dx + 1)) * Ci) * Co;
                        for (int ci = 0; ci < Ci; ++ci) {
                            const double a = ip[ci];
                            if (a == 0.0) continue;  // o_c grids are mostly zero
                            const double* kr = kp + static_cast<std::size_t>(ci) * Co;
                            for (int c = 0; c < Co; ++c) op[c] += a * kr[c];
                        }
                    }
                }
            }
    };
    run(xn->val.data(), kn->val.data(), bn->val.data(), o->val.data());
    t.check_finite(o);

    if (o->needs_grad)
        o->back = [o, xn, kn, bn, H, W, Ci, Co]() {
            const double* gout = o->grad.data();
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 < W; ++x2) {
                    const double* gp = gout + (static_cast<std::size_t>(y) * W + x2) * Co;
                    if (bn->needs_grad)
                        for (int c = 0; c < Co; ++c) bn->grad[static_cast<std::size_t>(c)] += gp[c];
                    for (int dy = -1; dy <= 1; ++dy) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= H) continue;
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int xx = x2 + dx;
                            if (xx < 0 || xx >= W) continue;
                            const std::size_t ioff = (static_cast<std::size_t>(yy) * W + xx) * Ci;
                            const std::size_t koff =
                                (static_cast<std::size_t>(dy + 1) * 3 + (dx + 1)) *
                                static_cast<std::size_t>(Ci) * Co;
                            for (int ci = 0; ci < Ci; ++ci) {
                                const double* kr = kn->val.data() + koff + static_cast<std::size_t>(ci) * Co;
                                if (xn->needs_grad) {
                                    double acc = 0.0;
                                    for (int c = 0; c < Co; ++c) acc += gp[c] * kr[c];
                                    xn->grad[ioff + static_cast<std::size_t>(ci)] += acc;
                                }
                                if (kn->needs_grad) {
                                    const double a = xn->val[ioff + static_cast<std::size_t>(ci)];
                                    if (a == 0.0) continue;
                                    double* gk = kn->grad.data() + koff + static_cast<std::size_t>(ci) * Co;
                                    for (int c = 0; c < Co; ++c) gk[c] += a * gp[c];
                                }
                            }
                        }
                    }
                }
        };
    return {&t, o};
}

// ---------------------------------------------------------------------------
// fused GRU cell
//
//   z = sigmoid(x Wx_z + h Wh_z + b_z)
//   r = sigmoid(x Wx_r + h Wh_r + b_r)
//   c = tanh   (x Wx_c + (r . h) Wh_c + b_c)
//   h' = (1 - z) . h + z . c
//
// Gate blocks are packed [z | r | c] along the 3*dh axis of Wx, Wh, b.
// Fusing the cell keeps the tape small across long token sequences.
// ---------------------------------------------------------------------------

inline Tensor gru_cell(const Tensor& x, const Tensor& h, const Tensor& Wx, const Tensor& Wh,
                       const Tensor& b) {
    detail::require_same_tape(x, h, "gru_cell");
    if (x.ndim() != 2 || h.ndim() != 2)
        throw ShapeError("gru_cell: x and h must be 2-D, got " + shape_str(x.shape()) + " and " +
                         shape_str(h.shape()));
    const int B = x.dim(0), din = x.dim(1), dh = h.dim(1);
    if (h.dim(0) != B || Wx.dim(0) != din || Wx.dim(1) != 3 * dh || Wh.dim(0) != dh ||
        Wh.dim(1) != 3 * dh || b.dim(0) != 3 * dh)
        throw ShapeError("gru_cell: parameter shapes inconsistent with x " + shape_str(x.shape()) +
                         ", h " + shape_str(h.shape()));
    Tape& t = x.tape();
    Tape::Node *xn = x.node(), *hn = h.node(), *wxn = Wx.node(), *whn = Wh.node(), *bn = b.node();
    const bool needs = xn->needs_grad || hn->needs_grad || wxn->needs_grad || whn->needs_grad ||
                       bn->needs_grad;
    Tape::Node* o = t.make({B, dh}, needs, "gru_cell");

    // caches shared with the backward closure
    auto cache = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * dh * 4);
    double* z = cache->data();
    double* r = z + static_cast<std::size_t>(B) * dh;
    double* c = r + static_cast<std::size_t>(B) * dh;
    double* rh = c + static_cast<std::size_t>(B) * dh;

    std::vector<double> gates(static_cast<std::size_t>(B) * 3 * dh);
    for (int i = 0; i < B; ++i)
        std::copy(bn->val.begin(), bn->val.end(), gates.begin() + static_cast<std::size_t>(i) * 3 * dh);
    gemm(false, false, B, 3 * dh, din, xn->val.data(), din, wxn->val.data(), 3 * dh,
         gates.data(), 3 * dh);
    // z,r pre-activations get the h contribution; candidate waits for r.h
    gemm(false, false, B, 2 * dh, dh, hn->val.data(), dh, whn->val.data(), 3 * dh,
         gates.data(), 3 * dh);
    auto sig = [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    };
    for (int i = 0; i < B; ++i) {
        const double* g = gates.data() + static_cast<std::size_t>(i) * 3 * dh;
        for (int j = 0; j < dh; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * dh + j;
            z[idx] = sig(g[j]);
            r[idx] = sig(g[dh + j]);
            rh[idx] = r[idx] * hn->val[idx];
        }
    }
    gemm(false, false, B, dh, dh, rh, dh, whn->val.data() + 2 * dh, 3 * dh, gates.data() + 2 * dh,
         3 * dh);
    for (int i = 0; i < B; ++i) {
        const double* g = gates.data() + static_cast<std::size_t>(i) * 3 * dh;
        for (int j = 0; j < dh; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * dh + j;
            c[idx] = std::tanh(g[2 * dh + j]);
            o->val[idx] = (1.0 - z[idx]) * hn->val[idx] + z[idx] * c[idx];
        }
    }
    t.check_finite(o);

    if (o->needs_grad)
        o->back = [o, xn, hn, wxn, whn, bn, cache, B, din, dh]() {
            const double* z2 = cache->data();
            const double* r2 = z2 + static_cast<std::size_t>(B) * dh;
            const double* c2 = r2 + static_cast<std::size_t>(B) * dh;
            const double* rh2 = c2 + static_cast<std::size_t>(B) * dh;
            std::vector<double> dG(static_cast<std::size_t>(B) * 3 * dh, 0.0);
            std::vector<double> drh(static_cast<std::size_t>(B) * dh, 0.0);
            // dz, dc and the candidate pre-activation
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < dh; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(i) * dh + j;
                    const double gh = o->grad[idx];
                    const double dz = gh * (c2[idx] - hn->val[idx]);
                    const double dc = gh * z2[idx];
                    dG[static_cast<std::size_t>(i) * 3 * dh + j] = dz * z2[idx] * (1.0 - z2[idx]);
                    dG[static_cast<std::size_t>(i) * 3 * dh + 2 * dh + j] =
                        dc * (1.0 - c2[idx] * c2[idx]);
                    if (hn->needs_grad) hn->grad[idx] += gh * (1.0 - z2[idx]);
                }
            // d(r.h) = dac * Wh_c^T
            for (int i = 0; i < B; ++i) {
                const double* dac = dG.data() + static_cast<std::size_t>(i) * 3 * dh + 2 * dh;
                double* dr = drh.data() + static_cast<std::size_t>(i) * dh;
                for (int k = 0; k < dh; ++k) {
                    const double* whr = whn->val.data() + static_cast<std::size_t>(k) * 3 * dh + 2 * dh;
                    double acc = 0.0;
                    for (int j = 0; j < dh; ++j) acc += dac[j] * whr[j];
                    dr[k] += acc;
                }
            }
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < dh; ++j) {
                    const std::size_t idx = static_cast<std::size_t>(i) * dh + j;
                    const double dr = drh[idx] * hn->val[idx];
                    dG[static_cast<std::size_t>(i) * 3 * dh + dh + j] =
                        dr * r2[idx] * (1.0 - r2[idx]);
                    if (hn->needs_grad) hn->grad[idx] += drh[idx] * r2[idx];
                }
            if (xn->needs_grad)
                gemm(false, true, B, din, 3 * dh, dG.data(), 3 * dh, wxn->val.data(), 3 * dh,
                     xn->grad.data(), din);
            if (wxn->needs_grad)
                gemm(true, false, din, 3 * dh, B, xn->val.data(), din, dG.data(), 3 * dh,
                     wxn->grad.data(), 3 * dh);
            if (bn->needs_grad)
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < 3 * dh; ++j)
                        bn->grad[static_cast<std::size_t>(j)] +=
                            dG[static_cast<std::size_t>(i) * 3 * dh + j];
            if (hn->needs_grad) {
                // z and r blocks act on h directly
                for (int i = 0; i < B; ++i) {
                    const double* g = dG.data() + static_cast<std::size_t>(i) * 3 * dh;
                    double* gh = hn->grad.data() + static_cast<std::size_t>(i) * dh;
                    for (int k = 0; k < dh; ++k) {
                        const double* whr = whn->val.data() + static_cast<std::size_t>(k) * 3 * dh;
                        double acc = 0.0;
                        for (int j = 0; j < 2 * dh; ++j) acc += g[j] * whr[j];
                        gh[k] += acc;
                    }
                }
            }
            if (whn->needs_grad) {
                // h^T x dG for the z,r blocks; (r.h)^T x dac for the candidate block
                for (int i = 0; i < B; ++i) {
                    const double* g = dG.data() + static_cast<std::size_t>(i) * 3 * dh;
                    for (int k = 0; k < dh; ++k) {
                        const double hv = hn->val[static_cast<std::size_t>(i) * dh + k];
                        const double rv = rh2[static_cast<std::size_t>(i) * dh + k];
                        double* gw = whn->grad.data() + static_cast<std::size_t>(k) * 3 * dh;
                        if (hv != 0.0)
                            for (int j = 0; j < 2 * dh; ++j) gw[j] += hv * g[j];
                        if (rv != 0.0)
                            for (int j = 0; j < dh; ++j) gw[2 * dh + j] += rv * g[2 * dh + j];
                    }
                }
            }
        };
    return {&t, o};
}

}  // namespace crl
