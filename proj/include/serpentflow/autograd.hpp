#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "serpentflow/tensor.hpp"

namespace serpentflow::numerics {

enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Relu,
    MatMul,
    Linear,
    Conv1d,
    Conv2d,
    AvgPool1d,
    AvgPool2d,
    Upsample1d,
    Upsample2d,
    ConcatChannels,
    Film,
    GlobalAvgPool,
    Sum,
    Mean,
    Mse,
    BceLogits,
};

// Reverse-mode tape. Forward ops append one record each (with the input
// buffers they need for the backward pass); backward() replays the records
// once, in reverse order. A tape belongs to a single forward pass and is
// never shared between concurrently executing passes.
class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        Shape shape; // output shape
        std::array<std::int64_t, 3> in{-1, -1, -1};
        std::array<std::shared_ptr<const std::vector<double>>, 3> vals{};
        std::array<Shape, 3> in_shapes{};
        std::int64_t i0 = 0, i1 = 0; // op attributes (stride, padding, factor, ...)
        double a0 = 0.0;             // scalar attribute
    };

    // Registers a tracked leaf that shares `value`'s buffer.
    Tensor leaf(const Tensor& value);

    // Accumulates gradients of a scalar loss into every node of the tape.
    void backward(const Tensor& loss);

    const std::vector<double>& grad(const Tensor& t) const;
    const std::vector<double>& grad(std::int64_t node) const;

    std::int64_t record(Node n);
    const Node& node(std::int64_t id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }
    bool has_grads() const { return has_grads_; }
    void clear();

private:
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool has_grads_ = false;
};

// Forward primitives. Results are recorded on the tape of any tracked input;
// with no tracked inputs the computation is identical but unrecorded.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t pad);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t pad);
Tensor avg_pool1d(const Tensor& x, std::int64_t window);
Tensor avg_pool2d(const Tensor& x, std::int64_t window);
Tensor upsample1d(const Tensor& x, std::int64_t factor);
Tensor upsample2d(const Tensor& x, std::int64_t factor);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor film(const Tensor& x, const Tensor& gamma, const Tensor& beta);
Tensor global_avg_pool(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor bce_with_logits(const Tensor& logits, const Tensor& labels);

// Gradient oracle: builds the loss through `f` on a fresh tape to obtain the
// analytic gradient of theta, then compares against central differences with
// step h. Returns max over coordinates of |analytic - central| / (|analytic|
// + 1e-8); non-finite evaluations report as +inf.
using TapedScalarFn = std::function<Tensor(Tape&, const Tensor&)>;
double finite_difference_check(const TapedScalarFn& f, const Tensor& theta, double h);

} // namespace serpentflow::numerics
