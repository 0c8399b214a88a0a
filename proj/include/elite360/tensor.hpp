#pragma once

// Dense row-major tensor with a fixed catalog of differentiable primitives.
//
// A Tensor is a cheap handle onto an immutable node. Primitives applied to
// tensors that require gradients record their inputs and a reverse rule;
// backward() replays those records in reverse creation order. Every primitive
// checks operand shapes and rejects non-finite results.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace e360 {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class Op : int {
  kLeaf = 0,
  kMatmul,
  kTranspose,
  kReshape,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,
  kAddScalar,
  kExp,
  kAbs,
  kSigmoid,
  kRelu,
  kSum,
  kConcat,
  kExpand,
  kSlice,
  kSoftmax,
  kConv2d,
  kBilinearResize,
  kGatherRows,
  kMaxGroups,
  kBerhu,
  kCount
};

std::string_view op_name(Op op);

// Negative-control hook for gradient audits: while enabled, the reverse rule
// of `op` propagates a gradient scaled by 1.5.
void set_gradient_fault(Op op, bool enabled);
bool gradient_fault(Op op);
void clear_gradient_faults();

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  Op op = Op::kLeaf;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return op == Op::kLeaf; }
  std::vector<Scalar>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Scalar(0));
    return grad;
  }
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;
  using NodePtr = std::shared_ptr<Node>;
  using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  // Copies a row-major Eigen matrix into a rank-2 tensor.
  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m, bool requires_grad = false) {
    std::vector<Scalar> v(static_cast<std::size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c)
        v[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<Scalar>(m(r, c));
    return from_vector({m.rows(), m.cols()}, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index numel() const { return static_cast<Index>(node_->value.size()); }

  std::span<const Scalar> values() const { return node_->value; }
  // Only leaves may be mutated (optimizer updates, gradient probes).
  std::span<Scalar> mutable_values();
  Scalar item() const;
  Scalar operator[](Index flat) const { return node_->value[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Op op() const { return node_->op; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), Scalar(0)); }

  // Rank-2 read-only view.
  Eigen::Map<const MatrixRM> matrix() const;

  // Fresh leaf holding the converted values.
  template <typename Other>
  Tensor<Other> cast(bool requires_grad = false) const {
    std::vector<Other> v(node_->value.begin(), node_->value.end());
    return Tensor<Other>::from_vector(node_->shape, std::move(v), requires_grad);
  }
  // Fresh leaf with the same values, cut off from the graph.
  Tensor detach(bool requires_grad = false) const {
    return from_vector(node_->shape, node_->value, requires_grad);
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Ordered record of every gradient-carrying node reachable from a root.
// Records are sorted by creation sequence, which is a topological order.
template <typename Scalar>
class ComputationTape {
 public:
  using NodePtr = typename Tensor<Scalar>::NodePtr;

  static ComputationTape record(const Tensor<Scalar>& root);
  std::span<const NodePtr> records() const { return records_; }
  bool is_topological() const;
  // Seeds d root = 1 and visits each record once in reverse order.
  void run_backward(bool retain_graph = false);

 private:
  std::vector<NodePtr> records_;
};

// Accumulates d loss / d leaf into every requires_grad leaf. `loss` must hold
// exactly one element.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss, bool retain_graph = false);

// --- primitive catalog -----------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);

// Binary ops broadcast the operand whose shape is a trailing suffix of the
// other's shape.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);
template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar offset);
template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a);
// Reverse Huber: |x| for |x| <= c, (x^2 + c^2) / 2c beyond.
template <typename Scalar>
Tensor<Scalar> berhu(const Tensor<Scalar>& a, Scalar threshold);

// Sums out one axis (negative counts from the back).
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, Index axis);
template <typename Scalar>
Tensor<Scalar> sum_all(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean_all(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis);
// Repeats size-1 axes up to `shape` (same rank).
template <typename Scalar>
Tensor<Scalar> expand(const Tensor<Scalar>& a, Shape shape);
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index axis, Index begin, Index end);

template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& a);

// Cross-correlation of x[Cin,H,W] with w[Cout,Cin,kh,kw]; bias[Cout] optional.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias,
                      Index stride, Index padding);
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride, Index padding) {
  return conv2d(x, w, Tensor<Scalar>(), stride, padding);
}

// Half-pixel (align_corners = false) bilinear resampling of x[C,H,W].
template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, Index out_h, Index out_w);

// Selects rows along axis 0.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::span<const Index> rows);
// a[(k*g), C] -> [k, C]: max over each run of `group` consecutive rows.
template <typename Scalar>
Tensor<Scalar> max_groups(const Tensor<Scalar>& a, Index group);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) { return neg(a); }

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace e360
