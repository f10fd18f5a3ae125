#pragma once

// Dense float64 tensor core with reverse-mode automatic differentiation on an
// explicit tape, plus the AdamW optimizer and a named parameter store.
//
// Scope is deliberately small: the op set covers exactly what the networks in
// this repository need (matmul, elementwise arithmetic, tanh/sigmoid, softmax
// and layernorm over the trailing axis, reductions, row/column slicing and
// concatenation, embedding lookup). Everything is double precision and
// single-threaded; values are immutable once recorded on a tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ribosphere/rng.hpp"

namespace ribosphere {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // allocated lazily; same length as data

    // Autodiff links, populated when the op was recorded on a tape.
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d, bool rg = false)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {}

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    // 2D view used by most ops: all leading dims fused into rows.
    int rows() const {
        int64_t r = 1;
        for (size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
        return static_cast<int>(shape.empty() ? 1 : r);
    }
    int cols() const { return shape.empty() ? 1 : shape.back(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    double scalar() const {
        if (data.size() != 1) throw TensorError("scalar(): tensor is not a scalar");
        return data[0];
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
}

inline int64_t shape_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw TensorError("shape has non-positive dimension " + shape_str(s));
        n *= d;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

// Records op outputs in creation order (a valid topological order) so the
// backward pass can replay them exactly in reverse. A tape is single-use:
// backward() twice without re-recording is an error.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(TensorPtr t) { nodes_.push_back(std::move(t)); }
    size_t size() const { return nodes_.size(); }

    void backward(const TensorPtr& loss) {
        if (consumed_) throw TensorError("backward called twice on the same tape");
        if (!loss || loss->numel() != 1) throw TensorError("backward: loss must be a scalar");
        if (nodes_.empty()) throw TensorError("backward: tape is empty");
        consumed_ = true;

        std::unordered_set<const Tensor*> reachable;
        reachable.insert(loss.get());
        loss->ensure_grad();
        loss->grad[0] = 1.0;

        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Tensor* node = it->get();
            if (!reachable.count(node) || !node->backward_fn) continue;
            for (const auto& p : node->parents) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    reachable.insert(p.get());
                }
            }
            node->backward_fn(*node);
        }
    }

    void clear() {
        nodes_.clear();
        consumed_ = false;
    }

    static Tape*& active() {
        static thread_local Tape* current = nullptr;
        return current;
    }

    // RAII activation: ops record on the innermost active tape.
    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
        ~Scope() { active() = prev_; }

    private:
        Tape* prev_;
    };

private:
    std::vector<TensorPtr> nodes_;
    bool consumed_ = false;
};

namespace detail {

inline void check_finite(const char* op, const Tensor& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw TensorError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

inline TensorPtr make_node(const char* op, std::vector<int> shape, std::vector<double> data,
                           std::vector<TensorPtr> parents,
                           std::function<void(Tensor&)> backward) {
    auto out = std::make_shared<Tensor>(std::move(shape), std::move(data));
    check_finite(op, *out);
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    out->requires_grad = needs;
    Tape* tape = Tape::active();
    if (needs && tape) {
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward);
        tape->record(out);
    }
    return out;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

inline TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data,
                             bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw TensorError("make_tensor: data length does not match shape " + shape_str(shape));
    auto t = std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
    return t;
}

inline TensorPtr zeros(std::vector<int> shape, bool requires_grad = false) {
    int64_t n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

inline TensorPtr full(std::vector<int> shape, double value) {
    int64_t n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, value));
}

inline TensorPtr scalar_tensor(double v) { return make_tensor({1}, {v}); }

inline TensorPtr randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    int64_t n = shape_numel(shape);
    std::vector<double> d(n);
    for (auto& x : d) x = rng.normal() * stddev;
    return make_tensor(std::move(shape), std::move(d));
}

// ---------------------------------------------------------------------------
// Elementwise and arithmetic ops
// ---------------------------------------------------------------------------

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape("add", *a, *b);
    std::vector<double> out(a->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    return detail::make_node("add", a->shape, std::move(out), {a, b}, [](Tensor& self) {
        auto &pa = *self.parents[0], &pb = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
    });
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape("sub", *a, *b);
    std::vector<double> out(a->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
    return detail::make_node("sub", a->shape, std::move(out), {a, b}, [](Tensor& self) {
        auto &pa = *self.parents[0], &pb = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    });
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape("mul", *a, *b);
    std::vector<double> out(a->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    return detail::make_node("mul", a->shape, std::move(out), {a, b}, [](Tensor& self) {
        auto &pa = *self.parents[0], &pb = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.data[i];
        if (pb.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.data[i];
    });
}

inline TensorPtr scale(const TensorPtr& a, double c) {
    std::vector<double> out(a->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * c;
    return detail::make_node("scale", a->shape, std::move(out), {a}, [c](Tensor& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * c;
    });
}

inline TensorPtr add_scalar(const TensorPtr& a, double c) {
    std::vector<double> out(a->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + c;
    return detail::make_node("add_scalar", a->shape, std::move(out), {a}, [](Tensor& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    });
}

// Broadcast a length-C vector over the leading (row) dims: out[r,c] = a[r,c] + v[c].
inline TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    int R = a->rows(), C = a->cols();
    if (v->numel() != C)
        throw TensorError("add_rowvec: vector length " + shape_str(v->shape) +
                          " does not match trailing dim of " + shape_str(a->shape));
    std::vector<double> out(a->data.size());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out[r * C + c] = a->data[r * C + c] + v->data[c];
    return detail::make_node("add_rowvec", a->shape, std::move(out), {a, v}, [R, C](Tensor& self) {
        auto &pa = *self.parents[0], &pv = *self.parents[1];
        if (pa.requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pv.requires_grad)
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) pv.grad[c] += self.grad[r * C + c];
    });
}

// Broadcast multiply by a length-C vector over rows: out[r,c] = a[r,c] * v[c].
inline TensorPtr mul_rowvec(const TensorPtr& a, const TensorPtr& v) {
    int R = a->rows(), C = a->cols();
    if (v->numel() != C)
        throw TensorError("mul_rowvec: vector length " + shape_str(v->shape) +
                          " does not match trailing dim of " + shape_str(a->shape));
    std::vector<double> out(a->data.size());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out[r * C + c] = a->data[r * C + c] * v->data[c];
    return detail::make_node("mul_rowvec", a->shape, std::move(out), {a, v}, [R, C](Tensor& self) {
        auto &pa = *self.parents[0], &pv = *self.parents[1];
        if (pa.requires_grad)
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    pa.grad[r * C + c] += self.grad[r * C + c] * pv.data[c];
        if (pv.requires_grad)
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    pv.grad[c] += self.grad[r * C + c] * pa.data[r * C + c];
    });
}

inline TensorPtr tanh_op(const TensorPtr& a) {
    std::vector<double> out(a->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a->data[i]);
    return detail::make_node("tanh", a->shape, std::move(out), {a}, [](Tensor& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
    });
}

inline TensorPtr sigmoid_op(const TensorPtr& a) {
    std::vector<double> out(a->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a->data[i]));
    return detail::make_node("sigmoid", a->shape, std::move(out), {a}, [](Tensor& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * self.data[i] * (1.0 - self.data[i]);
    });
}

// ---------------------------------------------------------------------------
// Matrix ops (strict 2D; use reshape to adapt)
// ---------------------------------------------------------------------------

namespace detail {
inline void require_2d(const char* op, const Tensor& t) {
    if (t.shape.size() != 2)
        throw TensorError(std::string(op) + ": expected 2D tensor, got " + shape_str(t.shape));
}

// C[r,c] += A[r,k] * B[k,c]; tight ikj loop.
inline void mm_acc(const double* a, const double* b, double* c, int R, int K, int C) {
    for (int r = 0; r < R; ++r) {
        const double* arow = a + static_cast<size_t>(r) * K;
        double* crow = c + static_cast<size_t>(r) * C;
        for (int k = 0; k < K; ++k) {
            double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(k) * C;
            for (int j = 0; j < C; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[r,c] += A[r,k] * B[c,k]  (A * B^T)
inline void mm_nt_acc(const double* a, const double* b, double* c, int R, int K, int C) {
    for (int r = 0; r < R; ++r) {
        const double* arow = a + static_cast<size_t>(r) * K;
        double* crow = c + static_cast<size_t>(r) * C;
        for (int j = 0; j < C; ++j) {
            const double* brow = b + static_cast<size_t>(j) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
}

// C[k,c] += A[r,k] * B[r,c]  (A^T * B)
inline void mm_tn_acc(const double* a, const double* b, double* c, int R, int K, int C) {
    for (int r = 0; r < R; ++r) {
        const double* arow = a + static_cast<size_t>(r) * K;
        const double* brow = b + static_cast<size_t>(r) * C;
        for (int k = 0; k < K; ++k) {
            double av = arow[k];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(k) * C;
            for (int j = 0; j < C; ++j) crow[j] += av * brow[j];
        }
    }
}
} // namespace detail

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    detail::require_2d("matmul", *a);
    detail::require_2d("matmul", *b);
    int R = a->shape[0], K = a->shape[1], C = b->shape[1];
    if (b->shape[0] != K)
        throw TensorError("matmul: inner dims differ, " + shape_str(a->shape) + " vs " +
                          shape_str(b->shape));
    std::vector<double> out(static_cast<size_t>(R) * C, 0.0);
    detail::mm_acc(a->data.data(), b->data.data(), out.data(), R, K, C);
    return detail::make_node("matmul", {R, C}, std::move(out), {a, b}, [R, K, C](Tensor& self) {
        auto &pa = *self.parents[0], &pb = *self.parents[1];
        if (pa.requires_grad) // dA = G * B^T
            detail::mm_nt_acc(self.grad.data(), pb.data.data(), pa.grad.data(), R, C, K);
        if (pb.requires_grad) // dB = A^T * G
            detail::mm_tn_acc(pa.data.data(), self.grad.data(), pb.grad.data(), R, K, C);
    });
}

// A * B^T with A: RxK, B: CxK -> RxC.
inline TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
    detail::require_2d("matmul_nt", *a);
    detail::require_2d("matmul_nt", *b);
    int R = a->shape[0], K = a->shape[1], C = b->shape[0];
    if (b->shape[1] != K)
        throw TensorError("matmul_nt: inner dims differ, " + shape_str(a->shape) + " vs " +
                          shape_str(b->shape));
    std::vector<double> out(static_cast<size_t>(R) * C, 0.0);
    detail::mm_nt_acc(a->data.data(), b->data.data(), out.data(), R, K, C);
    return detail::make_node("matmul_nt", {R, C}, std::move(out), {a, b}, [R, K, C](Tensor& self) {
        auto &pa = *self.parents[0], &pb = *self.parents[1];
        if (pa.requires_grad) // dA = G * B
            detail::mm_acc(self.grad.data(), pb.data.data(), pa.grad.data(), R, C, K);
        if (pb.requires_grad) // dB = G^T * A
            detail::mm_tn_acc(self.grad.data(), pa.data.data(), pb.grad.data(), R, C, K);
    });
}

// ---------------------------------------------------------------------------
// Softmax / layernorm over the trailing axis
// ---------------------------------------------------------------------------

inline TensorPtr softmax(const TensorPtr& a) {
    int R = a->rows(), C = a->cols();
    std::vector<double> out(a->data.size());
    for (int r = 0; r < R; ++r) {
        const double* x = a->data.data() + static_cast<size_t>(r) * C;
        double* y = out.data() + static_cast<size_t>(r) * C;
        double m = x[0];
        for (int c = 1; c < C; ++c) m = std::max(m, x[c]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - m);
            s += y[c];
        }
        double inv = 1.0 / s;
        for (int c = 0; c < C; ++c) y[c] *= inv;
    }
    return detail::make_node("softmax", a->shape, std::move(out), {a}, [R, C](Tensor& self) {
        auto& pa = *self.parents[0];
        for (int r = 0; r < R; ++r) {
            const double* y = self.data.data() + static_cast<size_t>(r) * C;
            const double* g = self.grad.data() + static_cast<size_t>(r) * C;
            double dotgy = 0.0;
            for (int c = 0; c < C; ++c) dotgy += g[c] * y[c];
            double* d = pa.grad.data() + static_cast<size_t>(r) * C;
            for (int c = 0; c < C; ++c) d[c] += y[c] * (g[c] - dotgy);
        }
    });
}

inline TensorPtr log_softmax(const TensorPtr& a) {
    int R = a->rows(), C = a->cols();
    std::vector<double> out(a->data.size());
    for (int r = 0; r < R; ++r) {
        const double* x = a->data.data() + static_cast<size_t>(r) * C;
        double* y = out.data() + static_cast<size_t>(r) * C;
        double m = x[0];
        for (int c = 1; c < C; ++c) m = std::max(m, x[c]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(x[c] - m);
        double lse = m + std::log(s);
        for (int c = 0; c < C; ++c) y[c] = x[c] - lse;
    }
    return detail::make_node("log_softmax", a->shape, std::move(out), {a}, [R, C](Tensor& self) {
        auto& pa = *self.parents[0];
        for (int r = 0; r < R; ++r) {
            const double* y = self.data.data() + static_cast<size_t>(r) * C;
            const double* g = self.grad.data() + static_cast<size_t>(r) * C;
            double gsum = 0.0;
            for (int c = 0; c < C; ++c) gsum += g[c];
            double* d = pa.grad.data() + static_cast<size_t>(r) * C;
            for (int c = 0; c < C; ++c) d[c] += g[c] - std::exp(y[c]) * gsum;
        }
    });
}

// Trailing-axis layer normalization with affine parameters.
inline TensorPtr layernorm(const TensorPtr& a, const TensorPtr& gamma, const TensorPtr& beta,
                           double eps = 1e-5) {
    int R = a->rows(), C = a->cols();
    if (gamma->numel() != C || beta->numel() != C)
        throw TensorError("layernorm: affine params must have length " + std::to_string(C));
    std::vector<double> out(a->data.size());
    // Stash per-row inv-std and normalized values for backward.
    auto xhat = std::make_shared<std::vector<double>>(a->data.size());
    auto inv_std = std::make_shared<std::vector<double>>(R);
    for (int r = 0; r < R; ++r) {
        const double* x = a->data.data() + static_cast<size_t>(r) * C;
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += x[c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= C;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (int c = 0; c < C; ++c) {
            double xh = (x[c] - mean) * is;
            (*xhat)[static_cast<size_t>(r) * C + c] = xh;
            out[static_cast<size_t>(r) * C + c] = gamma->data[c] * xh + beta->data[c];
        }
    }
    return detail::make_node(
        "layernorm", a->shape, std::move(out), {a, gamma, beta},
        [R, C, xhat, inv_std](Tensor& self) {
            auto &pa = *self.parents[0], &pg = *self.parents[1], &pb = *self.parents[2];
            for (int r = 0; r < R; ++r) {
                const double* g = self.grad.data() + static_cast<size_t>(r) * C;
                const double* xh = xhat->data() + static_cast<size_t>(r) * C;
                if (pg.requires_grad)
                    for (int c = 0; c < C; ++c) pg.grad[c] += g[c] * xh[c];
                if (pb.requires_grad)
                    for (int c = 0; c < C; ++c) pb.grad[c] += g[c];
                if (pa.requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int c = 0; c < C; ++c) {
                        double gg = g[c] * pg.data[c];
                        m1 += gg;
                        m2 += gg * xh[c];
                    }
                    m1 /= C;
                    m2 /= C;
                    double is = (*inv_std)[r];
                    double* d = pa.grad.data() + static_cast<size_t>(r) * C;
                    for (int c = 0; c < C; ++c)
                        d[c] += is * (g[c] * pg.data[c] - m1 - xh[c] * m2);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline TensorPtr sum(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    return detail::make_node("sum", {1}, {s}, {a}, [](Tensor& self) {
        auto& pa = *self.parents[0];
        double g = self.grad[0];
        for (auto& d : pa.grad) d += g;
    });
}

inline TensorPtr mean(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    double inv = 1.0 / static_cast<double>(a->numel());
    return detail::make_node("mean", {1}, {s * inv}, {a}, [inv](Tensor& self) {
        auto& pa = *self.parents[0];
        double g = self.grad[0] * inv;
        for (auto& d : pa.grad) d += g;
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline TensorPtr reshape(const TensorPtr& a, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != a->numel())
        throw TensorError("reshape: cannot view " + shape_str(a->shape) + " as " +
                          shape_str(new_shape));
    return detail::make_node("reshape", std::move(new_shape), a->data, {a}, [](Tensor& self) {
        auto& pa = *self.parents[0];
        for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    });
}

inline TensorPtr slice_cols(const TensorPtr& a, int start, int len) {
    int R = a->rows(), C = a->cols();
    if (start < 0 || len < 1 || start + len > C)
        throw TensorError("slice_cols: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") out of " + std::to_string(C));
    std::vector<double> out(static_cast<size_t>(R) * len);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < len; ++c)
            out[static_cast<size_t>(r) * len + c] = a->data[static_cast<size_t>(r) * C + start + c];
    return detail::make_node("slice_cols", {R, len}, std::move(out), {a},
                             [R, C, start, len](Tensor& self) {
                                 auto& pa = *self.parents[0];
                                 for (int r = 0; r < R; ++r)
                                     for (int c = 0; c < len; ++c)
                                         pa.grad[static_cast<size_t>(r) * C + start + c] +=
                                             self.grad[static_cast<size_t>(r) * len + c];
                             });
}

inline TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw TensorError("concat_cols: empty input");
    int R = parts[0]->rows();
    int C = 0;
    for (const auto& p : parts) {
        if (p->rows() != R) throw TensorError("concat_cols: row count mismatch");
        C += p->cols();
    }
    std::vector<double> out(static_cast<size_t>(R) * C);
    int off = 0;
    for (const auto& p : parts) {
        int pc = p->cols();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < pc; ++c)
                out[static_cast<size_t>(r) * C + off + c] = p->data[static_cast<size_t>(r) * pc + c];
        off += pc;
    }
    return detail::make_node("concat_cols", {R, C}, std::move(out), parts, [R, C](Tensor& self) {
        int off = 0;
        for (auto& pp : self.parents) {
            Tensor& p = *pp;
            int pc = p.cols();
            if (p.requires_grad)
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < pc; ++c)
                        p.grad[static_cast<size_t>(r) * pc + c] +=
                            self.grad[static_cast<size_t>(r) * C + off + c];
            off += pc;
        }
    });
}

inline TensorPtr slice_rows(const TensorPtr& a, int start, int len) {
    int R = a->rows(), C = a->cols();
    if (start < 0 || len < 1 || start + len > R)
        throw TensorError("slice_rows: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") out of " + std::to_string(R));
    std::vector<double> out(a->data.begin() + static_cast<size_t>(start) * C,
                            a->data.begin() + static_cast<size_t>(start + len) * C);
    return detail::make_node("slice_rows", {len, C}, std::move(out), {a},
                             [C, start, len](Tensor& self) {
                                 auto& pa = *self.parents[0];
                                 for (int r = 0; r < len; ++r)
                                     for (int c = 0; c < C; ++c)
                                         pa.grad[static_cast<size_t>(start + r) * C + c] +=
                                             self.grad[static_cast<size_t>(r) * C + c];
                             });
}

inline TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw TensorError("concat_rows: empty input");
    int C = parts[0]->cols();
    int R = 0;
    for (const auto& p : parts) {
        if (p->cols() != C) throw TensorError("concat_rows: column count mismatch");
        R += p->rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(R) * C);
    for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
    return detail::make_node("concat_rows", {R, C}, std::move(out), parts, [C](Tensor& self) {
        size_t off = 0;
        for (auto& pp : self.parents) {
            Tensor& p = *pp;
            if (p.requires_grad)
                for (size_t i = 0; i < p.data.size(); ++i) p.grad[i] += self.grad[off + i];
            off += p.data.size();
        }
    });
}

// Embedding lookup: rows of `table` gathered by integer `indices`.
inline TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& indices) {
    detail::require_2d("gather_rows", *table);
    int V = table->shape[0], C = table->shape[1];
    std::vector<double> out(indices.size() * static_cast<size_t>(C));
    for (size_t i = 0; i < indices.size(); ++i) {
        int idx = indices[i];
        if (idx < 0 || idx >= V)
            throw TensorError("gather_rows: index " + std::to_string(idx) + " out of [0," +
                              std::to_string(V) + ")");
        std::copy_n(table->data.begin() + static_cast<size_t>(idx) * C, C,
                    out.begin() + i * static_cast<size_t>(C));
    }
    auto idx_copy = indices;
    return detail::make_node("gather_rows", {static_cast<int>(indices.size()), C}, std::move(out),
                             {table}, [C, idx_copy](Tensor& self) {
                                 auto& pt = *self.parents[0];
                                 for (size_t i = 0; i < idx_copy.size(); ++i)
                                     for (int c = 0; c < C; ++c)
                                         pt.grad[static_cast<size_t>(idx_copy[i]) * C + c] +=
                                             self.grad[i * static_cast<size_t>(C) + c];
                             });
}

// ---------------------------------------------------------------------------
// Vector-channel ops (used by the geometry adapter; tensors hold K 3-vectors
// per row as a flat r x (K*3) layout)
// ---------------------------------------------------------------------------

// Mean over the K channel axis: r x (K*3) -> r x 3.
inline TensorPtr mean_channels(const TensorPtr& a, int K) {
    int R = a->rows(), C = a->cols();
    if (C != K * 3) throw TensorError("mean_channels: cols != K*3");
    std::vector<double> out(static_cast<size_t>(R) * 3, 0.0);
    for (int r = 0; r < R; ++r)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < 3; ++c)
                out[static_cast<size_t>(r) * 3 + c] += a->data[(static_cast<size_t>(r) * K + k) * 3 + c];
    for (auto& v : out) v /= K;
    return detail::make_node("mean_channels", {R, 3}, std::move(out), {a}, [R, K](Tensor& self) {
        auto& pa = *self.parents[0];
        for (int r = 0; r < R; ++r)
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < 3; ++c)
                    pa.grad[(static_cast<size_t>(r) * K + k) * 3 + c] +=
                        self.grad[static_cast<size_t>(r) * 3 + c] / K;
    });
}

// Per-channel Euclidean norms: r x (K*3) -> r x K. Rotation-invariant.
inline TensorPtr channel_norms(const TensorPtr& a, int K) {
    int R = a->rows(), C = a->cols();
    if (C != K * 3) throw TensorError("channel_norms: cols != K*3");
    std::vector<double> out(static_cast<size_t>(R) * K);
    for (int r = 0; r < R; ++r)
        for (int k = 0; k < K; ++k) {
            const double* v = a->data.data() + (static_cast<size_t>(r) * K + k) * 3;
            out[static_cast<size_t>(r) * K + k] =
                std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + 1e-12);
        }
    return detail::make_node("channel_norms", {R, K}, std::move(out), {a}, [R, K](Tensor& self) {
        auto& pa = *self.parents[0];
        for (int r = 0; r < R; ++r)
            for (int k = 0; k < K; ++k) {
                double n = self.data[static_cast<size_t>(r) * K + k];
                double g = self.grad[static_cast<size_t>(r) * K + k] / n;
                const double* v = pa.data.data() + (static_cast<size_t>(r) * K + k) * 3;
                double* d = pa.grad.data() + (static_cast<size_t>(r) * K + k) * 3;
                for (int c = 0; c < 3; ++c) d[c] += g * v[c];
            }
    });
}

// Row-wise outer product: a (r x K) with b (r x 3) -> r x (K*3).
inline TensorPtr rowwise_outer(const TensorPtr& a, const TensorPtr& b) {
    int R = a->rows(), K = a->cols();
    if (b->rows() != R || b->cols() != 3)
        throw TensorError("rowwise_outer: b must be rows x 3 matching a's rows");
    std::vector<double> out(static_cast<size_t>(R) * K * 3);
    for (int r = 0; r < R; ++r)
        for (int k = 0; k < K; ++k)
            for (int c = 0; c < 3; ++c)
                out[(static_cast<size_t>(r) * K + k) * 3 + c] =
                    a->data[static_cast<size_t>(r) * K + k] * b->data[static_cast<size_t>(r) * 3 + c];
    return detail::make_node("rowwise_outer", {R, K * 3}, std::move(out), {a, b},
                             [R, K](Tensor& self) {
                                 auto &pa = *self.parents[0], &pb = *self.parents[1];
                                 for (int r = 0; r < R; ++r)
                                     for (int k = 0; k < K; ++k)
                                         for (int c = 0; c < 3; ++c) {
                                             double g = self.grad[(static_cast<size_t>(r) * K + k) * 3 + c];
                                             if (pa.requires_grad)
                                                 pa.grad[static_cast<size_t>(r) * K + k] +=
                                                     g * pb.data[static_cast<size_t>(r) * 3 + c];
                                             if (pb.requires_grad)
                                                 pb.grad[static_cast<size_t>(r) * 3 + c] +=
                                                     g * pa.data[static_cast<size_t>(r) * K + k];
                                         }
                             });
}

// Project L x (A*3) coordinates onto the zero center-of-mass subspace, taking
// the per-axis mean over unmasked atoms only; masked slots are forced to 0.
inline TensorPtr com_project(const TensorPtr& a, const std::vector<uint8_t>& atom_mask) {
    int64_t n_atoms = a->numel() / 3;
    if (a->numel() % 3 != 0) throw TensorError("com_project: numel not divisible by 3");
    if (atom_mask.size() != static_cast<size_t>(n_atoms))
        throw TensorError("com_project: mask size mismatch");
    int64_t n_live = 0;
    double m[3] = {0, 0, 0};
    for (int64_t i = 0; i < n_atoms; ++i) {
        if (!atom_mask[i]) continue;
        ++n_live;
        for (int c = 0; c < 3; ++c) m[c] += a->data[i * 3 + c];
    }
    if (n_live == 0) throw TensorError("com_project: all atoms masked");
    for (double& v : m) v /= static_cast<double>(n_live);
    std::vector<double> out(a->data.size(), 0.0);
    for (int64_t i = 0; i < n_atoms; ++i) {
        if (!atom_mask[i]) continue;
        for (int c = 0; c < 3; ++c) out[i * 3 + c] = a->data[i * 3 + c] - m[c];
    }
    auto mask = atom_mask;
    return detail::make_node("com_project", a->shape, std::move(out), {a},
                             [mask, n_atoms, n_live](Tensor& self) {
                                 auto& pa = *self.parents[0];
                                 double gm[3] = {0, 0, 0};
                                 for (int64_t i = 0; i < n_atoms; ++i) {
                                     if (!mask[i]) continue;
                                     for (int c = 0; c < 3; ++c) gm[c] += self.grad[i * 3 + c];
                                 }
                                 for (double& v : gm) v /= static_cast<double>(n_live);
                                 for (int64_t i = 0; i < n_atoms; ++i) {
                                     if (!mask[i]) continue;
                                     for (int c = 0; c < 3; ++c)
                                         pa.grad[i * 3 + c] += self.grad[i * 3 + c] - gm[c];
                                 }
                             });
}

// ---------------------------------------------------------------------------
// Linear layer helper
// ---------------------------------------------------------------------------

inline TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled weight decay, applied multiplicatively before the moment update.
class AdamW {
public:
    AdamW(std::vector<TensorPtr> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->data.size(), 0.0);
            v_[i].assign(params_[i]->data.size(), 0.0);
        }
    }

    void step() {
        ++step_count_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i];
            p.ensure_grad();
            for (size_t j = 0; j < p.data.size(); ++j) {
                double g = p.grad[j];
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                p.data[j] = p.data[j] * (1.0 - cfg_.lr * cfg_.weight_decay) -
                            cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& p : params_)
            for (double g : p->grad) s += g * g;
        return std::sqrt(s);
    }

    int64_t step_count() const { return step_count_; }
    void set_step_count(int64_t s) { step_count_ = s; }
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

    std::vector<double>& moment_m(size_t i) { return m_[i]; }
    std::vector<double>& moment_v(size_t i) { return v_[i]; }
    size_t num_params() const { return params_.size(); }
    const TensorPtr& param(size_t i) const { return params_[i]; }

private:
    std::vector<TensorPtr> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

enum class Init { Zeros, Ones, Normal, NormalScaled }; // NormalScaled: std = 1/sqrt(fan_in)

// Owns named parameters in creation order; the order is deterministic and is
// what the checkpoint manifest records.
class ParamStore {
public:
    TensorPtr create(const std::string& name, std::vector<int> shape, Init init, Rng& rng,
                     double std_scale = 1.0) {
        if (index_.count(name)) throw TensorError("ParamStore: duplicate parameter " + name);
        int64_t n = shape_numel(shape);
        std::vector<double> d(n, 0.0);
        switch (init) {
        case Init::Zeros:
            break;
        case Init::Ones:
            std::fill(d.begin(), d.end(), 1.0);
            break;
        case Init::Normal:
            for (auto& x : d) x = rng.normal() * std_scale;
            break;
        case Init::NormalScaled: {
            int fan_in = shape.size() >= 2 ? shape[0] : static_cast<int>(shape_numel(shape));
            double s = std_scale / std::sqrt(static_cast<double>(fan_in));
            for (auto& x : d) x = rng.normal() * s;
            break;
        }
        }
        auto t = make_tensor(std::move(shape), std::move(d), true);
        index_[name] = entries_.size();
        entries_.emplace_back(name, t);
        return t;
    }

    TensorPtr get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw TensorError("ParamStore: unknown parameter " + name);
        return entries_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, TensorPtr>>& entries() const { return entries_; }

    std::vector<TensorPtr> all_params() const {
        std::vector<TensorPtr> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.second);
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto& e : entries_) e.second->requires_grad = trainable;
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.second->numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, TensorPtr>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

} // namespace ribosphere
