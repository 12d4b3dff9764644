#include "redforge/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace redforge::autodiff {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

double Tensor::scalar() const {
    if (!is_scalar()) throw std::runtime_error("scalar() on tensor of shape " + shape_str(shape));
    return values[0];
}

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values = std::move(values);
    t->requires_grad = requires_grad;
    if (t->numel() != static_cast<std::int64_t>(t->values.size()))
        throw std::runtime_error("make_tensor: " + std::to_string(t->values.size()) + " values for shape " +
                                 shape_str(t->shape));
    return t;
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values.assign(static_cast<std::size_t>(t->numel()), 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t->values.begin(), t->values.end(), value);
    return t;
}

TensorPtr scalar_tensor(double value, bool requires_grad) {
    return make_tensor({}, {value}, requires_grad);
}

namespace {

TensorPtr node(Shape shape, std::size_t n, const char* op, std::vector<TensorPtr> parents) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values.resize(n);
    t->op = op;
    for (const auto& p : parents)
        if (p->requires_grad) t->requires_grad = true;
    t->parents = std::move(parents);
    return t;
}

void check_same_shape(const char* op, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) shape_error(op, a->shape, b->shape);
}

// sum in ascending value order: permutation-invariant bit for bit
double sorted_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
}

}  // namespace

void backward(const TensorPtr& root) {
    if (!root->is_scalar()) throw std::runtime_error("backward: root must be scalar, got " + shape_str(root->shape));
    // iterative post-order DFS over grad-requiring parents
    std::vector<Tensor*> topo;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    if (root->requires_grad) stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [t, i] = stack.back();
        if (i < t->parents.size()) {
            Tensor* p = t->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(t);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <class Fwd, class Bwd>
TensorPtr unary_op(const TensorPtr& a, const char* op, Fwd fwd, Bwd dydx) {
    auto out = node(a->shape, a->values.size(), op, {a});
    for (std::size_t i = 0; i < a->values.size(); ++i) out->values[i] = fwd(a->values[i]);
    if (out->requires_grad) {
        Tensor* o = out.get();
        Tensor* ta = a.get();
        out->backward_fn = [o, ta, dydx]() {
            ta->ensure_grad();
            for (std::size_t i = 0; i < ta->values.size(); ++i)
                ta->grad[i] += o->grad[i] * dydx(ta->values[i], o->values[i]);
        };
    }
    return out;
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("add", a, b);
    auto out = node(a->shape, a->values.size(), "add", {a, b});
    for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get(), *tb = b.get();
        out->backward_fn = [o, ta, tb]() {
            if (ta->requires_grad) {
                ta->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) ta->grad[i] += o->grad[i];
            }
            if (tb->requires_grad) {
                tb->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) tb->grad[i] += o->grad[i];
            }
        };
    }
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("sub", a, b);
    auto out = node(a->shape, a->values.size(), "sub", {a, b});
    for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] - b->values[i];
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get(), *tb = b.get();
        out->backward_fn = [o, ta, tb]() {
            if (ta->requires_grad) {
                ta->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) ta->grad[i] += o->grad[i];
            }
            if (tb->requires_grad) {
                tb->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) tb->grad[i] -= o->grad[i];
            }
        };
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("mul", a, b);
    auto out = node(a->shape, a->values.size(), "mul", {a, b});
    for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * b->values[i];
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get(), *tb = b.get();
        out->backward_fn = [o, ta, tb]() {
            if (ta->requires_grad) {
                ta->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) ta->grad[i] += o->grad[i] * tb->values[i];
            }
            if (tb->requires_grad) {
                tb->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) tb->grad[i] += o->grad[i] * ta->values[i];
            }
        };
    }
    return out;
}

TensorPtr scalar_mul(const TensorPtr& a, double c) {
    return unary_op(a, "scalar_mul", [c](double x) { return x * c; }, [c](double, double) { return c; });
}

TensorPtr relu(const TensorPtr& a) {
    return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

TensorPtr leaky_relu(const TensorPtr& a, double alpha) {
    return unary_op(a, "leaky_relu", [alpha](double x) { return x > 0.0 ? x : alpha * x; },
                    [alpha](double x, double) { return x > 0.0 ? 1.0 : alpha; });
}

TensorPtr square(const TensorPtr& a) {
    return unary_op(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

TensorPtr sqrt_t(const TensorPtr& a) {
    return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

TensorPtr exp_t(const TensorPtr& a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

TensorPtr clamp(const TensorPtr& a, double lo, double hi) {
    return unary_op(a, "clamp", [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions

TensorPtr sum(const TensorPtr& a) {
    auto out = node({}, 1, "sum", {a});
    double acc = 0.0;
    for (double v : a->values) acc += v;
    out->values[0] = acc;
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta]() {
            ta->ensure_grad();
            for (std::size_t i = 0; i < ta->grad.size(); ++i) ta->grad[i] += o->grad[0];
        };
    }
    return out;
}

TensorPtr mean(const TensorPtr& a) {
    return scalar_mul(sum(a), 1.0 / static_cast<double>(a->numel()));
}

TensorPtr max_pool(const TensorPtr& a, int axis) {
    if (a->shape.size() != 2 || axis != 0)
        throw std::runtime_error("max_pool: expected 2-D input with axis 0, got " + shape_str(a->shape));
    const int m = a->rows(), c = a->cols();
    if (m == 0) throw std::runtime_error("max_pool: empty input");
    auto out = node({c}, static_cast<std::size_t>(c), "max_pool", {a});
    std::vector<int> argmax(c, 0);
    for (int j = 0; j < c; ++j) {
        double best = a->values[j];
        int bi = 0;
        for (int i = 1; i < m; ++i) {
            const double v = a->values[static_cast<std::size_t>(i) * c + j];
            if (v > best) {  // ties keep the first maximal row
                best = v;
                bi = i;
            }
        }
        out->values[j] = best;
        argmax[j] = bi;
    }
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, argmax = std::move(argmax), c]() {
            ta->ensure_grad();
            for (int j = 0; j < c; ++j) ta->grad[static_cast<std::size_t>(argmax[j]) * c + j] += o->grad[j];
        };
    }
    return out;
}

TensorPtr mean_pool(const TensorPtr& a, int axis) {
    if (a->shape.size() != 2 || axis != 0)
        throw std::runtime_error("mean_pool: expected 2-D input with axis 0, got " + shape_str(a->shape));
    const int m = a->rows(), c = a->cols();
    auto out = node({c}, static_cast<std::size_t>(c), "mean_pool", {a});
    for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += a->values[static_cast<std::size_t>(i) * c + j];
        out->values[j] = acc / m;
    }
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, m, c]() {
            ta->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) ta->grad[static_cast<std::size_t>(i) * c + j] += o->grad[j] / m;
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->cols() != b->rows())
        shape_error("matmul", a->shape, b->shape);
    const int m = a->rows(), k = a->cols(), n = b->cols();
    auto out = node({m, n}, static_cast<std::size_t>(m) * n, "matmul", {a, b});
    CMap A(a->values.data(), m, k), B(b->values.data(), k, n);
    MMap(out->values.data(), m, n).noalias() = A * B;
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get(), *tb = b.get();
        out->backward_fn = [o, ta, tb, m, k, n]() {
            CMap dC(o->grad.data(), m, n);
            if (ta->requires_grad) {
                ta->ensure_grad();
                CMap B(tb->values.data(), k, n);
                MMap(ta->grad.data(), m, k).noalias() += dC * B.transpose();
            }
            if (tb->requires_grad) {
                tb->ensure_grad();
                CMap A(ta->values.data(), m, k);
                MMap(tb->grad.data(), k, n).noalias() += A.transpose() * dC;
            }
        };
    }
    return out;
}

TensorPtr transpose(const TensorPtr& a) {
    if (a->shape.size() != 2) throw std::runtime_error("transpose: expected 2-D, got " + shape_str(a->shape));
    const int m = a->rows(), n = a->cols();
    auto out = node({n, m}, a->values.size(), "transpose", {a});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->values[static_cast<std::size_t>(j) * m + i] = a->values[static_cast<std::size_t>(i) * n + j];
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, m, n]() {
            ta->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ta->grad[static_cast<std::size_t>(i) * n + j] += o->grad[static_cast<std::size_t>(j) * m + i];
        };
    }
    return out;
}

TensorPtr softmax(const TensorPtr& a, int axis) {
    if (a->shape.size() != 2 || axis != 1)
        throw std::runtime_error("softmax: expected 2-D input with axis 1, got " + shape_str(a->shape));
    const int m = a->rows(), n = a->cols();
    auto out = node(a->shape, a->values.size(), "softmax", {a});
    for (int i = 0; i < m; ++i) {
        const double* row = &a->values[static_cast<std::size_t>(i) * n];
        double* orow = &out->values[static_cast<std::size_t>(i) * n];
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= denom;
    }
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, m, n]() {
            ta->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* y = &o->values[static_cast<std::size_t>(i) * n];
                const double* dy = &o->grad[static_cast<std::size_t>(i) * n];
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
                double* dx = &ta->grad[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    }
    return out;
}

TensorPtr l2_normalize(const TensorPtr& a, double eps) {
    const bool is_vec = a->shape.size() == 1;
    if (!is_vec && a->shape.size() != 2)
        throw std::runtime_error("l2_normalize: expected 1-D or 2-D, got " + shape_str(a->shape));
    const int m = is_vec ? 1 : a->rows();
    const int n = is_vec ? static_cast<int>(a->numel()) : a->cols();
    auto out = node(a->shape, a->values.size(), "l2_normalize", {a});
    std::vector<double> norms(m);
    for (int i = 0; i < m; ++i) {
        const double* row = &a->values[static_cast<std::size_t>(i) * n];
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += row[j] * row[j];
        norms[i] = std::max(std::sqrt(s), eps);
        double* orow = &out->values[static_cast<std::size_t>(i) * n];
        for (int j = 0; j < n; ++j) orow[j] = row[j] / norms[i];
    }
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, norms = std::move(norms), m, n]() {
            ta->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* y = &o->values[static_cast<std::size_t>(i) * n];
                const double* dy = &o->grad[static_cast<std::size_t>(i) * n];
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
                double* dx = &ta->grad[static_cast<std::size_t>(i) * n];
                for (int j = 0; j < n; ++j) dx[j] += (dy[j] - y[j] * dot) / norms[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape & indexing

TensorPtr reshape(const TensorPtr& a, Shape shape) {
    auto out = node(std::move(shape), a->values.size(), "reshape", {a});
    if (out->numel() != a->numel()) shape_error("reshape", a->shape, out->shape);
    out->values = a->values;
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta]() {
            ta->ensure_grad();
            for (std::size_t i = 0; i < ta->grad.size(); ++i) ta->grad[i] += o->grad[i];
        };
    }
    return out;
}

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) throw std::runtime_error("concat: no inputs");
    for (const auto& p : parts)
        if (p->shape.size() != 2) throw std::runtime_error("concat: expected 2-D inputs");
    if (axis == 0) {
        const int c = parts[0]->cols();
        int rows = 0;
        for (const auto& p : parts) {
            if (p->cols() != c) shape_error("concat", parts[0]->shape, p->shape);
            rows += p->rows();
        }
        auto out = node({rows, c}, static_cast<std::size_t>(rows) * c, "concat", parts);
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->values.begin(), p->values.end(), out->values.begin() + off);
            off += p->values.size();
        }
        if (out->requires_grad) {
            Tensor* o = out.get();
            out->backward_fn = [o]() {
                std::size_t off = 0;
                for (auto& p : o->parents) {
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += o->grad[off + i];
                    }
                    off += p->values.size();
                }
            };
        }
        return out;
    }
    if (axis != 1) throw std::runtime_error("concat: axis must be 0 or 1");
    const int m = parts[0]->rows();
    int cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != m) shape_error("concat", parts[0]->shape, p->shape);
        cols += p->cols();
    }
    auto out = node({m, cols}, static_cast<std::size_t>(m) * cols, "concat", parts);
    int coff = 0;
    for (const auto& p : parts) {
        const int pc = p->cols();
        for (int i = 0; i < m; ++i)
            std::copy(&p->values[static_cast<std::size_t>(i) * pc], &p->values[static_cast<std::size_t>(i) * pc] + pc,
                      &out->values[static_cast<std::size_t>(i) * cols + coff]);
        coff += pc;
    }
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backward_fn = [o, m, cols]() {
            int coff = 0;
            for (auto& p : o->parents) {
                const int pc = p->cols();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < pc; ++j)
                            p->grad[static_cast<std::size_t>(i) * pc + j] +=
                                o->grad[static_cast<std::size_t>(i) * cols + coff + j];
                }
                coff += pc;
            }
        };
    }
    return out;
}

TensorPtr gather_rows(const TensorPtr& a, const std::vector<int>& idx) {
    if (a->shape.size() != 2) throw std::runtime_error("gather_rows: expected 2-D, got " + shape_str(a->shape));
    const int n = a->rows(), c = a->cols();
    const int m = static_cast<int>(idx.size());
    auto out = node({m, c}, static_cast<std::size_t>(m) * c, "gather_rows", {a});
    for (int i = 0; i < m; ++i) {
        const int r = idx[static_cast<std::size_t>(i)];
        if (r < 0 || r >= n) throw std::runtime_error("gather_rows: index " + std::to_string(r) + " out of range");
        std::copy(&a->values[static_cast<std::size_t>(r) * c], &a->values[static_cast<std::size_t>(r) * c] + c,
                  &out->values[static_cast<std::size_t>(i) * c]);
    }
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, idx, c]() {
            ta->ensure_grad();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < c; ++j)
                    ta->grad[static_cast<std::size_t>(idx[i]) * c + j] += o->grad[i * c + j];
        };
    }
    return out;
}

TensorPtr segment_mean(const TensorPtr& a, const std::vector<std::uint16_t>& labels, int n_segments) {
    if (a->shape.size() != 2) throw std::runtime_error("segment_mean: expected 2-D, got " + shape_str(a->shape));
    if (labels.size() != static_cast<std::size_t>(a->rows()))
        throw std::runtime_error("segment_mean: label count does not match row count");
    const int c = a->cols();
    std::vector<int> counts(n_segments, 0);
    for (auto l : labels) {
        if (l >= n_segments) throw std::runtime_error("segment_mean: label " + std::to_string(l) + " out of range");
        ++counts[l];
    }
    for (int s = 0; s < n_segments; ++s)
        if (counts[s] == 0) throw std::runtime_error("empty part");
    auto out = node({n_segments, c}, static_cast<std::size_t>(n_segments) * c, "segment_mean", {a});
    std::fill(out->values.begin(), out->values.end(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (int j = 0; j < c; ++j)
            out->values[static_cast<std::size_t>(labels[i]) * c + j] += a->values[i * c + j];
    for (int s = 0; s < n_segments; ++s)
        for (int j = 0; j < c; ++j) out->values[static_cast<std::size_t>(s) * c + j] /= counts[s];
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, labels, counts = std::move(counts), c]() {
            ta->ensure_grad();
            for (std::size_t i = 0; i < labels.size(); ++i)
                for (int j = 0; j < c; ++j)
                    ta->grad[i * c + j] += o->grad[static_cast<std::size_t>(labels[i]) * c + j] / counts[labels[i]];
        };
    }
    return out;
}

TensorPtr tile_rows(const TensorPtr& v, int m) {
    if (v->shape.size() != 1) throw std::runtime_error("tile_rows: expected 1-D, got " + shape_str(v->shape));
    const int c = static_cast<int>(v->numel());
    auto out = node({m, c}, static_cast<std::size_t>(m) * c, "tile_rows", {v});
    for (int i = 0; i < m; ++i) std::copy(v->values.begin(), v->values.end(), &out->values[static_cast<std::size_t>(i) * c]);
    if (out->requires_grad) {
        Tensor *o = out.get(), *tv = v.get();
        out->backward_fn = [o, tv, m, c]() {
            tv->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) tv->grad[j] += o->grad[static_cast<std::size_t>(i) * c + j];
        };
    }
    return out;
}

TensorPtr stack_rows(const std::vector<TensorPtr>& vs) {
    if (vs.empty()) throw std::runtime_error("stack_rows: no inputs");
    const int c = static_cast<int>(vs[0]->numel());
    for (const auto& v : vs) {
        if (v->shape.size() != 1 || v->numel() != c) shape_error("stack_rows", vs[0]->shape, v->shape);
    }
    const int m = static_cast<int>(vs.size());
    auto out = node({m, c}, static_cast<std::size_t>(m) * c, "stack_rows", vs);
    for (int i = 0; i < m; ++i)
        std::copy(vs[i]->values.begin(), vs[i]->values.end(), &out->values[static_cast<std::size_t>(i) * c]);
    if (out->requires_grad) {
        Tensor* o = out.get();
        out->backward_fn = [o, c]() {
            for (std::size_t i = 0; i < o->parents.size(); ++i) {
                auto& p = o->parents[i];
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (int j = 0; j < c; ++j) p->grad[j] += o->grad[i * c + j];
            }
        };
    }
    return out;
}

TensorPtr slice_cols(const TensorPtr& a, int start, int len) {
    if (a->shape.size() != 2) throw std::runtime_error("slice_cols: expected 2-D, got " + shape_str(a->shape));
    const int m = a->rows(), c = a->cols();
    if (start < 0 || start + len > c) throw std::runtime_error("slice_cols: range out of bounds");
    auto out = node({m, len}, static_cast<std::size_t>(m) * len, "slice_cols", {a});
    for (int i = 0; i < m; ++i)
        std::copy(&a->values[static_cast<std::size_t>(i) * c + start],
                  &a->values[static_cast<std::size_t>(i) * c + start] + len,
                  &out->values[static_cast<std::size_t>(i) * len]);
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get();
        out->backward_fn = [o, ta, m, c, start, len]() {
            ta->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < len; ++j)
                    ta->grad[static_cast<std::size_t>(i) * c + start + j] += o->grad[static_cast<std::size_t>(i) * len + j];
        };
    }
    return out;
}

TensorPtr add_rowwise(const TensorPtr& a, const TensorPtr& bias) {
    if (a->shape.size() != 2 || bias->shape.size() != 1 || bias->numel() != a->cols())
        shape_error("add_rowwise", a->shape, bias->shape);
    const int m = a->rows(), c = a->cols();
    auto out = node(a->shape, a->values.size(), "add_rowwise", {a, bias});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j)
            out->values[static_cast<std::size_t>(i) * c + j] = a->values[static_cast<std::size_t>(i) * c + j] + bias->values[j];
    if (out->requires_grad) {
        Tensor *o = out.get(), *ta = a.get(), *tb = bias.get();
        out->backward_fn = [o, ta, tb, m, c]() {
            if (ta->requires_grad) {
                ta->ensure_grad();
                for (std::size_t i = 0; i < o->grad.size(); ++i) ta->grad[i] += o->grad[i];
            }
            if (tb->requires_grad) {
                tb->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < c; ++j) tb->grad[j] += o->grad[static_cast<std::size_t>(i) * c + j];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch norm

TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     const TensorPtr& running_mean, const TensorPtr& running_var,
                     bool train, double momentum, double eps) {
    if (x->shape.size() != 2) throw std::runtime_error("batch_norm: expected 2-D, got " + shape_str(x->shape));
    const int m = x->rows(), c = x->cols();
    if (gamma->numel() != c || beta->numel() != c || running_mean->numel() != c || running_var->numel() != c)
        throw std::runtime_error("batch_norm: parameter size mismatch for " + shape_str(x->shape));

    auto out = node(x->shape, x->values.size(), "batch_norm", {x, gamma, beta});
    std::vector<double> mu(c), invstd(c), xhat(x->values.size());

    if (train) {
        std::vector<double> col(m);
        for (int j = 0; j < c; ++j) {
            for (int i = 0; i < m; ++i) col[i] = x->values[static_cast<std::size_t>(i) * c + j];
            mu[j] = sorted_sum(col) / m;
            for (int i = 0; i < m; ++i) {
                const double d = x->values[static_cast<std::size_t>(i) * c + j] - mu[j];
                col[i] = d * d;
            }
            const double var = sorted_sum(col) / m;
            invstd[j] = 1.0 / std::sqrt(var + eps);
            running_mean->values[j] = (1.0 - momentum) * running_mean->values[j] + momentum * mu[j];
            running_var->values[j] = (1.0 - momentum) * running_var->values[j] + momentum * var;
        }
    } else {
        for (int j = 0; j < c; ++j) {
            mu[j] = running_mean->values[j];
            invstd[j] = 1.0 / std::sqrt(running_var->values[j] + eps);
        }
    }
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * c + j;
            xhat[k] = (x->values[k] - mu[j]) * invstd[j];
            out->values[k] = gamma->values[j] * xhat[k] + beta->values[j];
        }

    if (out->requires_grad) {
        Tensor *o = out.get(), *tx = x.get(), *tg = gamma.get(), *tb = beta.get();
        out->backward_fn = [o, tx, tg, tb, xhat = std::move(xhat), invstd = std::move(invstd), m, c, train]() {
            for (int j = 0; j < c; ++j) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int i = 0; i < m; ++i) {
                    const std::size_t k = static_cast<std::size_t>(i) * c + j;
                    sum_dy += o->grad[k];
                    sum_dy_xhat += o->grad[k] * xhat[k];
                }
                if (tg->requires_grad) {
                    tg->ensure_grad();
                    tg->grad[j] += sum_dy_xhat;
                }
                if (tb->requires_grad) {
                    tb->ensure_grad();
                    tb->grad[j] += sum_dy;
                }
                if (tx->requires_grad) {
                    tx->ensure_grad();
                    const double g = tg->values[j];
                    if (train) {
                        for (int i = 0; i < m; ++i) {
                            const std::size_t k = static_cast<std::size_t>(i) * c + j;
                            tx->grad[k] += g * invstd[j] * (o->grad[k] - sum_dy / m - xhat[k] * sum_dy_xhat / m);
                        }
                    } else {
                        for (int i = 0; i < m; ++i) {
                            const std::size_t k = static_cast<std::size_t>(i) * c + j;
                            tx->grad[k] += g * invstd[j] * o->grad[k];
                        }
                    }
                }
            }
        };
    }
    return out;
}

}  // namespace redforge::autodiff
