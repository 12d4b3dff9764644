#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "redforge/rng.hpp"

namespace redforge::autodiff {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;
using Shape = std::vector<int>;

// Dense f64 tensor participating in a reverse-mode tape. The tape is implicit:
// every op result keeps shared ownership of its parents plus a closure that
// scatters the chain rule into their grad buffers. backward() topologically
// sorts that DAG and visits each node exactly once.
class Tensor {
public:
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same length as values
    bool requires_grad = false;

    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;  // null for leaves
    const char* op = "leaf";

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    bool is_scalar() const { return numel() == 1; }
    double scalar() const;
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    void zero_grad() { grad.assign(values.size(), 0.0); }
};

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar_tensor(double value, bool requires_grad = false);

// Populates grads of every reachable tensor with requires_grad set.
// Root must be scalar. Grads accumulate additively into existing buffers.
void backward(const TensorPtr& root);

// --- elementwise -----------------------------------------------------------
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scalar_mul(const TensorPtr& a, double c);
TensorPtr relu(const TensorPtr& a);
TensorPtr leaky_relu(const TensorPtr& a, double alpha);
TensorPtr square(const TensorPtr& a);
TensorPtr sqrt_t(const TensorPtr& a);
TensorPtr exp_t(const TensorPtr& a);
// gradient passes only strictly inside [lo, hi]
TensorPtr clamp(const TensorPtr& a, double lo, double hi);

// --- reductions ------------------------------------------------------------
TensorPtr sum(const TensorPtr& a);
TensorPtr mean(const TensorPtr& a);
// 2-D, axis 0 (over rows): results are length-C vectors
TensorPtr max_pool(const TensorPtr& a, int axis = 0);
TensorPtr mean_pool(const TensorPtr& a, int axis = 0);

// --- linear algebra (2-D) ---------------------------------------------------
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);
TensorPtr softmax(const TensorPtr& a, int axis);
// 1-D vector or 2-D rows; eps floors the norm
TensorPtr l2_normalize(const TensorPtr& a, double eps = 1e-12);

// --- shape & indexing -------------------------------------------------------
TensorPtr reshape(const TensorPtr& a, Shape shape);
TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
// rows of a selected by idx (may repeat); backward scatter-adds
TensorPtr gather_rows(const TensorPtr& a, const std::vector<int>& idx);
// per-label row means; throws "empty part" when a label has no rows
TensorPtr segment_mean(const TensorPtr& a, const std::vector<std::uint16_t>& labels, int n_segments);
// broadcast a length-C vector over M rows
TensorPtr tile_rows(const TensorPtr& v, int m);
// stack 1-D vectors of equal length into a matrix
TensorPtr stack_rows(const std::vector<TensorPtr>& vs);
TensorPtr slice_cols(const TensorPtr& a, int start, int len);
// matrix + row-vector bias
TensorPtr add_rowwise(const TensorPtr& a, const TensorPtr& bias);

// --- batch norm --------------------------------------------------------------
// Normalizes each column of a 2-D input over the row (point) dimension.
// Column statistics are accumulated in sorted order so they are invariant to
// row permutations bit for bit. running_mean / running_var are plain value
// buffers: mutated in train mode, read in eval mode, never differentiated.
TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     const TensorPtr& running_mean, const TensorPtr& running_var,
                     bool train, double momentum = 0.1, double eps = 1e-5);

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b);
std::string shape_str(const Shape& s);

}  // namespace redforge::autodiff
