#include "elite360/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "elite360/errors.hpp"

namespace e360 {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

std::string_view op_name(Op op) {
  static constexpr std::array<std::string_view, static_cast<int>(Op::kCount)> names = {
      "leaf",  "matmul",  "transpose", "reshape", "add",     "sub",             "mul",
      "neg",   "scale",   "add_scalar", "exp",    "abs",     "sigmoid",         "relu",
      "sum",   "concat",  "expand",    "slice",   "softmax", "conv2d",          "bilinear_resize",
      "gather_rows", "max_groups", "berhu"};
  return names[static_cast<std::size_t>(op)];
}

namespace {

std::array<std::atomic<bool>, static_cast<std::size_t>(Op::kCount)> g_faults{};
std::atomic<std::uint64_t> g_sequence{1};

}  // namespace

void set_gradient_fault(Op op, bool enabled) { g_faults[static_cast<std::size_t>(op)] = enabled; }
bool gradient_fault(Op op) { return g_faults[static_cast<std::size_t>(op)]; }
void clear_gradient_faults() {
  for (auto& f : g_faults) f = false;
}

namespace {

template <typename Scalar>
using NodePtr = std::shared_ptr<detail::Node<Scalar>>;
template <typename Scalar>
using Backward = std::function<void(detail::Node<Scalar>&)>;
template <typename Scalar>
using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapRM = Eigen::Map<MatRM<Scalar>>;
template <typename Scalar>
using CMapRM = Eigen::Map<const MatRM<Scalar>>;

template <typename Scalar>
void check_finite(Op op, const std::vector<Scalar>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << op_name(op) << ": non-finite value at flat index " << i;
      throw NumericError(os.str());
    }
  }
}

template <typename Scalar>
NodePtr<Scalar> make_leaf(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  for (Index d : shape)
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  if (shape_numel(shape) != static_cast<Index>(values.size()))
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1);
  return node;
}

template <typename Scalar>
Tensor<Scalar> make_result(Op op, Shape shape, std::vector<Scalar> values,
                           std::vector<NodePtr<Scalar>> inputs, Backward<Scalar> rule) {
  check_finite(op, values);
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  node->sequence = g_sequence.fetch_add(1);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const auto& n) { return n->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
  }
  return Tensor<Scalar>(std::move(node));
}

// Grad buffer of input k, or nullptr when that input takes no gradient.
template <typename Scalar>
std::vector<Scalar>* input_grad(detail::Node<Scalar>& self, std::size_t k) {
  auto& in = *self.inputs[k];
  return in.requires_grad ? &in.ensure_grad() : nullptr;
}

Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("axis out of range");
  return axis;
}

void require_rank(const Shape& s, Index rank, std::string_view what) {
  if (static_cast<Index>(s.size()) != rank)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(s));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename Scalar, typename Fwd, typename Dx>
Tensor<Scalar> unary(Op op, const Tensor<Scalar>& a, Fwd fwd, Dx dx) {
  const auto& x = a.node()->value;
  std::vector<Scalar> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return make_result<Scalar>(op, a.shape(), std::move(y), {a.node()},
                             [dx](detail::Node<Scalar>& self) {
                               auto* g = input_grad(self, 0);
                               if (!g) return;
                               const auto& xin = self.inputs[0]->value;
                               for (std::size_t i = 0; i < xin.size(); ++i)
                                 (*g)[i] += self.grad[i] * dx(xin[i], self.value[i]);
                             });
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename Scalar>
Tensor<Scalar> binary(Op op, BinaryKind kind, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out;
  if (is_suffix(sb, sa)) {
    out = sa;
  } else if (is_suffix(sa, sb)) {
    out = sb;
  } else {
    throw DimensionError(std::string(op_name(op)) + ": cannot broadcast " + shape_string(sa) +
                         " with " + shape_string(sb));
  }
  const auto& xa = a.node()->value;
  const auto& xb = b.node()->value;
  const std::size_t n = static_cast<std::size_t>(shape_numel(out));
  const std::size_t na = xa.size();
  const std::size_t nb = xb.size();
  std::vector<Scalar> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar u = xa[i % na];
    const Scalar v = xb[i % nb];
    y[i] = kind == BinaryKind::kAdd ? u + v : kind == BinaryKind::kSub ? u - v : u * v;
  }
  return make_result<Scalar>(op, out, std::move(y), {a.node(), b.node()},
                             [kind](detail::Node<Scalar>& self) {
                               auto* ga = input_grad(self, 0);
                               auto* gb = input_grad(self, 1);
                               const auto& ua = self.inputs[0]->value;
                               const auto& ub = self.inputs[1]->value;
                               const std::size_t n = self.grad.size();
                               const std::size_t na = ua.size();
                               const std::size_t nb = ub.size();
                               for (std::size_t i = 0; i < n; ++i) {
                                 const Scalar g = self.grad[i];
                                 if (ga) {
                                   (*ga)[i % na] += kind == BinaryKind::kMul ? g * ub[i % nb] : g;
                                 }
                                 if (gb) {
                                   (*gb)[i % nb] += kind == BinaryKind::kMul   ? g * ua[i % na]
                                                    : kind == BinaryKind::kSub ? -g
                                                                               : g;
                                 }
                               }
                             });
}

}  // namespace

// --- Tensor members --------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  const Index n = shape_numel(shape);
  return Tensor(make_leaf<Scalar>(std::move(shape), std::vector<Scalar>(std::max<Index>(n, 0)),
                                  requires_grad));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  const Index n = shape_numel(shape);
  return Tensor(make_leaf<Scalar>(std::move(shape),
                                  std::vector<Scalar>(std::max<Index>(n, 0), value), requires_grad));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_vector(Shape shape, std::vector<Scalar> values,
                                           bool requires_grad) {
  return Tensor(make_leaf<Scalar>(std::move(shape), std::move(values), requires_grad));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return Tensor(make_leaf<Scalar>({}, {value}, requires_grad));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  return node_->shape[static_cast<std::size_t>(normalize_axis(axis, rank()))];
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::mutable_values() {
  if (!node_->is_leaf()) throw UsageError("only leaf tensors may be mutated");
  return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (node_->value.size() != 1) throw UsageError("item() on a tensor with " +
                                                 std::to_string(node_->value.size()) + " elements");
  return node_->value[0];
}

template <typename Scalar>
Eigen::Map<const typename Tensor<Scalar>::MatrixRM> Tensor<Scalar>::matrix() const {
  require_rank(shape(), 2, "matrix view");
  return Eigen::Map<const MatrixRM>(node_->value.data(), shape()[0], shape()[1]);
}

// --- tape ------------------------------------------------------------------

template <typename Scalar>
ComputationTape<Scalar> ComputationTape<Scalar>::record(const Tensor<Scalar>& root) {
  ComputationTape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const detail::Node<Scalar>*> seen;
  std::vector<NodePtr> stack{root.node()};
  while (!stack.empty()) {
    NodePtr n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (const auto& in : n->inputs)
      if (in->requires_grad) stack.push_back(in);
    tape.records_.push_back(std::move(n));
  }
  std::sort(tape.records_.begin(), tape.records_.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->sequence < b->sequence; });
  return tape;
}

template <typename Scalar>
bool ComputationTape<Scalar>::is_topological() const {
  std::unordered_set<const detail::Node<Scalar>*> before;
  for (const auto& rec : records_) {
    for (const auto& in : rec->inputs)
      if (in->requires_grad && !before.count(in.get())) return false;
    before.insert(rec.get());
  }
  return true;
}

template <typename Scalar>
void ComputationTape<Scalar>::run_backward(bool retain_graph) {
  if (records_.empty()) return;
  auto& root = *records_.back();
  if (root.value.size() != 1) throw UsageError("backward() needs a scalar loss, got shape " +
                                               shape_string(root.shape));
  if (!root.is_leaf()) root.grad.assign(1, Scalar(0));
  root.ensure_grad()[0] += Scalar(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf() || !node.backward) continue;
    if (node.grad.size() == node.value.size()) {
      if (gradient_fault(node.op))
        for (auto& g : node.grad) g *= Scalar(1.5);
      node.backward(node);
    }
    node.grad.clear();
    node.grad.shrink_to_fit();
    if (!retain_graph) {
      node.inputs.clear();
      node.backward = nullptr;
    }
  }
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss, bool retain_graph) {
  if (!loss.defined()) throw UsageError("backward() on an undefined tensor");
  if (loss.numel() != 1) throw UsageError("backward() needs a scalar loss, got shape " +
                                          shape_string(loss.shape()));
  if (!loss.requires_grad()) return;
  auto tape = ComputationTape<Scalar>::record(loss);
  tape.run_backward(retain_graph);
}

// --- primitives ------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  std::vector<Scalar> y(static_cast<std::size_t>(m * n));
  MapRM<Scalar>(y.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result<Scalar>(Op::kMatmul, {m, n}, std::move(y), {a.node(), b.node()},
                             [m, k, n](detail::Node<Scalar>& self) {
                               CMapRM<Scalar> dc(self.grad.data(), m, n);
                               CMapRM<Scalar> av(self.inputs[0]->value.data(), m, k);
                               CMapRM<Scalar> bv(self.inputs[1]->value.data(), k, n);
                               if (auto* ga = input_grad(self, 0))
                                 MapRM<Scalar>(ga->data(), m, k).noalias() += dc * bv.transpose();
                               if (auto* gb = input_grad(self, 1))
                                 MapRM<Scalar>(gb->data(), k, n).noalias() += av.transpose() * dc;
                             });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  require_rank(a.shape(), 2, "transpose");
  const Index m = a.shape()[0], n = a.shape()[1];
  std::vector<Scalar> y(static_cast<std::size_t>(m * n));
  MapRM<Scalar>(y.data(), n, m) = a.matrix().transpose();
  return make_result<Scalar>(Op::kTranspose, {n, m}, std::move(y), {a.node()},
                             [m, n](detail::Node<Scalar>& self) {
                               if (auto* g = input_grad(self, 0))
                                 MapRM<Scalar>(g->data(), m, n) +=
                                     CMapRM<Scalar>(self.grad.data(), n, m).transpose();
                             });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  for (Index d : shape)
    if (d <= 0) throw DimensionError("reshape: dimensions must be positive");
  return make_result<Scalar>(Op::kReshape, std::move(shape), a.node()->value, {a.node()},
                             [](detail::Node<Scalar>& self) {
                               if (auto* g = input_grad(self, 0))
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                             });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(Op::kAdd, BinaryKind::kAdd, a, b);
}
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(Op::kSub, BinaryKind::kSub, a, b);
}
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(Op::kMul, BinaryKind::kMul, a, b);
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a) {
  return unary(Op::kNeg, a, [](Scalar x) { return -x; }, [](Scalar, Scalar) { return Scalar(-1); });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return unary(Op::kScale, a, [factor](Scalar x) { return factor * x; },
               [factor](Scalar, Scalar) { return factor; });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar offset) {
  return unary(Op::kAddScalar, a, [offset](Scalar x) { return x + offset; },
               [](Scalar, Scalar) { return Scalar(1); });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  return unary(Op::kExp, a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& a) {
  return unary(Op::kAbs, a, [](Scalar x) { return std::abs(x); },
               [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : x < 0 ? Scalar(-1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  return unary(Op::kSigmoid, a,
               [](Scalar x) {
                 if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
                 const Scalar e = std::exp(x);
                 return e / (Scalar(1) + e);
               },
               [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  return unary(Op::kRelu, a, [](Scalar x) { return x > 0 ? x : Scalar(0); },
               [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Tensor<Scalar> berhu(const Tensor<Scalar>& a, Scalar c) {
  if (!(c > 0)) throw UsageError("berhu: threshold must be positive");
  return unary(Op::kBerhu, a,
               [c](Scalar x) {
                 const Scalar ax = std::abs(x);
                 return ax <= c ? ax : (x * x + c * c) / (Scalar(2) * c);
               },
               [c](Scalar x, Scalar) {
                 if (std::abs(x) <= c) return x > 0 ? Scalar(1) : x < 0 ? Scalar(-1) : Scalar(0);
                 return x / c;
               });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, Index axis) {
  const Shape& s = a.shape();
  axis = normalize_axis(axis, a.rank());
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[i];
  for (Index i = axis + 1; i < a.rank(); ++i) inner *= s[i];
  const Index len = s[axis];
  Shape out;
  for (Index i = 0; i < a.rank(); ++i)
    if (i != axis) out.push_back(s[i]);
  const auto& x = a.node()->value;
  std::vector<Scalar> y(static_cast<std::size_t>(outer * inner), Scalar(0));
  for (Index o = 0; o < outer; ++o)
    for (Index l = 0; l < len; ++l)
      for (Index i = 0; i < inner; ++i) y[o * inner + i] += x[(o * len + l) * inner + i];
  return make_result<Scalar>(Op::kSum, std::move(out), std::move(y), {a.node()},
                             [outer, inner, len](detail::Node<Scalar>& self) {
                               auto* g = input_grad(self, 0);
                               if (!g) return;
                               for (Index o = 0; o < outer; ++o)
                                 for (Index l = 0; l < len; ++l)
                                   for (Index i = 0; i < inner; ++i)
                                     (*g)[(o * len + l) * inner + i] += self.grad[o * inner + i];
                             });
}

template <typename Scalar>
Tensor<Scalar> sum_all(const Tensor<Scalar>& a) {
  Scalar total = 0;
  for (Scalar v : a.values()) total += v;
  return make_result<Scalar>(Op::kSum, {}, {total}, {a.node()}, [](detail::Node<Scalar>& self) {
    if (auto* g = input_grad(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean_all(const Tensor<Scalar>& a) {
  return scale(sum_all(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  axis = normalize_axis(axis, static_cast<Index>(s0.size()));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s0[i];
  for (Index i = axis + 1; i < static_cast<Index>(s0.size()); ++i) inner *= s0[i];
  std::vector<Index> lens;
  Index total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<Index>(i) != axis && s[i] != s0[i])
        throw DimensionError("concat: " + shape_string(s) + " vs " + shape_string(s0));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape out = s0;
  out[axis] = total;
  std::vector<Scalar> y(static_cast<std::size_t>(outer * total * inner));
  std::vector<NodePtr<Scalar>> inputs;
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& x = parts[k].node()->value;
    const Index len = lens[k];
    for (Index o = 0; o < outer; ++o)
      std::copy_n(x.begin() + o * len * inner, len * inner,
                  y.begin() + (o * total + offset) * inner);
    offset += len;
    inputs.push_back(parts[k].node());
  }
  return make_result<Scalar>(Op::kConcat, std::move(out), std::move(y), std::move(inputs),
                             [outer, inner, total, lens](detail::Node<Scalar>& self) {
                               Index offset = 0;
                               for (std::size_t k = 0; k < lens.size(); ++k) {
                                 const Index len = lens[k];
                                 if (auto* g = input_grad(self, k)) {
                                   for (Index o = 0; o < outer; ++o)
                                     for (Index t = 0; t < len * inner; ++t)
                                       (*g)[o * len * inner + t] +=
                                           self.grad[(o * total + offset) * inner + t];
                                 }
                                 offset += len;
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> expand(const Tensor<Scalar>& a, Shape shape) {
  const Shape& s = a.shape();
  if (s.size() != shape.size()) throw DimensionError("expand: rank mismatch");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] != shape[i] && s[i] != 1)
      throw DimensionError("expand: cannot expand " + shape_string(s) + " to " + shape_string(shape));
  const std::size_t rank = s.size();
  const Index n = shape_numel(shape);
  // Flat source index for every output index.
  std::vector<Index> src(static_cast<std::size_t>(n));
  std::vector<Index> in_stride(rank, 1);
  for (Index i = static_cast<Index>(rank) - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * s[i + 1];
  std::vector<Index> idx(rank, 0);
  for (Index f = 0; f < n; ++f) {
    Index off = 0;
    for (std::size_t d = 0; d < rank; ++d) off += (s[d] == 1 ? 0 : idx[d]) * in_stride[d];
    src[f] = off;
    for (Index d = static_cast<Index>(rank) - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  const auto& x = a.node()->value;
  std::vector<Scalar> y(static_cast<std::size_t>(n));
  for (Index f = 0; f < n; ++f) y[f] = x[src[f]];
  return make_result<Scalar>(Op::kExpand, std::move(shape), std::move(y), {a.node()},
                             [src = std::move(src)](detail::Node<Scalar>& self) {
                               if (auto* g = input_grad(self, 0))
                                 for (std::size_t f = 0; f < src.size(); ++f)
                                   (*g)[src[f]] += self.grad[f];
                             });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index axis, Index begin, Index end) {
  const Shape& s = a.shape();
  axis = normalize_axis(axis, a.rank());
  if (begin < 0 || end > s[axis] || begin >= end)
    throw DimensionError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on axis of size " + std::to_string(s[axis]));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[i];
  for (Index i = axis + 1; i < a.rank(); ++i) inner *= s[i];
  const Index len = s[axis];
  const Index out_len = end - begin;
  Shape out = s;
  out[axis] = out_len;
  const auto& x = a.node()->value;
  std::vector<Scalar> y(static_cast<std::size_t>(outer * out_len * inner));
  for (Index o = 0; o < outer; ++o)
    std::copy_n(x.begin() + (o * len + begin) * inner, out_len * inner,
                y.begin() + o * out_len * inner);
  return make_result<Scalar>(Op::kSlice, std::move(out), std::move(y), {a.node()},
                             [outer, inner, len, out_len, begin](detail::Node<Scalar>& self) {
                               auto* g = input_grad(self, 0);
                               if (!g) return;
                               for (Index o = 0; o < outer; ++o)
                                 for (Index t = 0; t < out_len * inner; ++t)
                                   (*g)[(o * len + begin) * inner + t] += self.grad[o * out_len * inner + t];
                             });
}

template <typename Scalar>
Tensor<Scalar> softmax_lastdim(const Tensor<Scalar>& a) {
  if (a.rank() < 1) throw DimensionError("softmax_lastdim: rank-0 input");
  const Index n = a.shape().back();
  const Index rows = a.numel() / n;
  const auto& x = a.node()->value;
  std::vector<Scalar> y(x.size());
  for (Index r = 0; r < rows; ++r) {
    const Scalar* xr = x.data() + r * n;
    Scalar* yr = y.data() + r * n;
    const Scalar mx = *std::max_element(xr, xr + n);
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) total += (yr[i] = std::exp(xr[i] - mx));
    for (Index i = 0; i < n; ++i) yr[i] /= total;
  }
  return make_result<Scalar>(Op::kSoftmax, a.shape(), std::move(y), {a.node()},
                             [rows, n](detail::Node<Scalar>& self) {
                               auto* g = input_grad(self, 0);
                               if (!g) return;
                               for (Index r = 0; r < rows; ++r) {
                                 const Scalar* yr = self.value.data() + r * n;
                                 const Scalar* dy = self.grad.data() + r * n;
                                 Scalar dot = 0;
                                 for (Index i = 0; i < n; ++i) dot += dy[i] * yr[i];
                                 for (Index i = 0; i < n; ++i) (*g)[r * n + i] += yr[i] * (dy[i] - dot);
                               }
                             });
}

namespace {

struct ConvGeometry {
  Index cin, h, w, cout, kh, kw, stride, pad, oh, ow;
};

// Output extent along one axis. Floor division is allowed only when the
// trailing rows it drops are all padding.
Index conv_extent(Index in, Index k, Index stride, Index pad, const char* axis) {
  const Index span = in + 2 * pad - k;
  if (span < 0) throw DimensionError(std::string("conv2d: kernel larger than padded ") + axis);
  const Index rem = span % stride;
  if (rem > pad)
    throw DimensionError(std::string("conv2d: non-integral output ") + axis + " (in=" +
                         std::to_string(in) + ", k=" + std::to_string(k) + ", stride=" +
                         std::to_string(stride) + ", pad=" + std::to_string(pad) + ")");
  return span / stride + 1;
}

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
  const Index plane = g.oh * g.ow;
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        Scalar* dst = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (Index oi = 0; oi < g.oh; ++oi) {
          const Index ii = oi * g.stride - g.pad + ki;
          Scalar* row = dst + oi * g.ow;
          if (ii < 0 || ii >= g.h) {
            std::fill_n(row, g.ow, Scalar(0));
            continue;
          }
          const Scalar* src = x + (c * g.h + ii) * g.w;
          for (Index oj = 0; oj < g.ow; ++oj) {
            const Index jj = oj * g.stride - g.pad + kj;
            row[oj] = (jj < 0 || jj >= g.w) ? Scalar(0) : src[jj];
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* col, const ConvGeometry& g, Scalar* dx) {
  const Index plane = g.oh * g.ow;
  for (Index c = 0; c < g.cin; ++c)
    for (Index ki = 0; ki < g.kh; ++ki)
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Scalar* src = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (Index oi = 0; oi < g.oh; ++oi) {
          const Index ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.h) continue;
          Scalar* dst = dx + (c * g.h + ii) * g.w;
          for (Index oj = 0; oj < g.ow; ++oj) {
            const Index jj = oj * g.stride - g.pad + kj;
            if (jj >= 0 && jj < g.w) dst[jj] += src[oi * g.ow + oj];
          }
        }
      }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias,
                      Index stride, Index padding) {
  require_rank(x.shape(), 3, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  if (stride < 1 || padding < 0) throw UsageError("conv2d: stride >= 1 and padding >= 0 required");
  ConvGeometry g{};
  g.cin = x.shape()[0];
  g.h = x.shape()[1];
  g.w = x.shape()[2];
  g.cout = w.shape()[0];
  g.kh = w.shape()[2];
  g.kw = w.shape()[3];
  g.stride = stride;
  g.pad = padding;
  if (w.shape()[1] != g.cin)
    throw DimensionError("conv2d: weight expects " + std::to_string(w.shape()[1]) +
                         " input channels, got " + std::to_string(g.cin));
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw DimensionError("conv2d: kernel sizes must be odd");
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != g.cout))
    throw DimensionError("conv2d: bias must have shape [Cout]");
  g.oh = conv_extent(g.h, g.kh, stride, padding, "height");
  g.ow = conv_extent(g.w, g.kw, stride, padding, "width");

  const Index K = g.cin * g.kh * g.kw;
  const Index P = g.oh * g.ow;
  auto col = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(K * P));
  im2col(x.node()->value.data(), g, col->data());
  std::vector<Scalar> y(static_cast<std::size_t>(g.cout * P));
  MapRM<Scalar> out(y.data(), g.cout, P);
  out.noalias() = CMapRM<Scalar>(w.node()->value.data(), g.cout, K) * CMapRM<Scalar>(col->data(), K, P);
  std::vector<NodePtr<Scalar>> inputs{x.node(), w.node()};
  if (bias.defined()) {
    const auto& b = bias.node()->value;
    for (Index c = 0; c < g.cout; ++c) out.row(c).array() += b[c];
    inputs.push_back(bias.node());
  }
  const bool has_bias = bias.defined();
  return make_result<Scalar>(
      Op::kConv2d, {g.cout, g.oh, g.ow}, std::move(y), std::move(inputs),
      [g, K, P, col, has_bias](detail::Node<Scalar>& self) {
        CMapRM<Scalar> dout(self.grad.data(), g.cout, P);
        CMapRM<Scalar> cols(col->data(), K, P);
        if (auto* gw = input_grad(self, 1))
          MapRM<Scalar>(gw->data(), g.cout, K).noalias() += dout * cols.transpose();
        if (has_bias) {
          if (auto* gb = input_grad(self, 2))
            for (Index c = 0; c < g.cout; ++c) (*gb)[c] += dout.row(c).sum();
        }
        if (auto* gx = input_grad(self, 0)) {
          std::vector<Scalar> dcol(static_cast<std::size_t>(K * P));
          MapRM<Scalar>(dcol.data(), K, P).noalias() =
              CMapRM<Scalar>(self.inputs[1]->value.data(), g.cout, K).transpose() * dout;
          col2im(dcol.data(), g, gx->data());
        }
      });
}

namespace {

struct ResizeTap {
  Index i0, i1;
  double w1;
};

std::vector<ResizeTap> resize_taps(Index in, Index out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  require_rank(x.shape(), 3, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw UsageError("bilinear_resize: output size must be >= 1");
  const Index c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  auto rows = resize_taps(h, out_h);
  auto cols = resize_taps(w, out_w);
  const auto& v = x.node()->value;
  std::vector<Scalar> y(static_cast<std::size_t>(c * out_h * out_w));
  for (Index ch = 0; ch < c; ++ch) {
    const Scalar* src = v.data() + ch * h * w;
    Scalar* dst = y.data() + ch * out_h * out_w;
    for (Index oi = 0; oi < out_h; ++oi) {
      const auto& r = rows[oi];
      const Scalar wr1 = static_cast<Scalar>(r.w1), wr0 = Scalar(1) - wr1;
      for (Index oj = 0; oj < out_w; ++oj) {
        const auto& q = cols[oj];
        const Scalar wc1 = static_cast<Scalar>(q.w1), wc0 = Scalar(1) - wc1;
        dst[oi * out_w + oj] = wr0 * (wc0 * src[r.i0 * w + q.i0] + wc1 * src[r.i0 * w + q.i1]) +
                               wr1 * (wc0 * src[r.i1 * w + q.i0] + wc1 * src[r.i1 * w + q.i1]);
      }
    }
  }
  return make_result<Scalar>(
      Op::kBilinearResize, {c, out_h, out_w}, std::move(y), {x.node()},
      [c, h, w, out_h, out_w, rows = std::move(rows), cols = std::move(cols)](detail::Node<Scalar>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (Index ch = 0; ch < c; ++ch) {
          Scalar* dst = g->data() + ch * h * w;
          const Scalar* dy = self.grad.data() + ch * out_h * out_w;
          for (Index oi = 0; oi < out_h; ++oi) {
            const auto& r = rows[oi];
            const Scalar wr1 = static_cast<Scalar>(r.w1), wr0 = Scalar(1) - wr1;
            for (Index oj = 0; oj < out_w; ++oj) {
              const auto& q = cols[oj];
              const Scalar wc1 = static_cast<Scalar>(q.w1), wc0 = Scalar(1) - wc1;
              const Scalar gv = dy[oi * out_w + oj];
              dst[r.i0 * w + q.i0] += gv * wr0 * wc0;
              dst[r.i0 * w + q.i1] += gv * wr0 * wc1;
              dst[r.i1 * w + q.i0] += gv * wr1 * wc0;
              dst[r.i1 * w + q.i1] += gv * wr1 * wc1;
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::span<const Index> rows) {
  if (a.rank() < 1) throw DimensionError("gather_rows: rank-0 input");
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const Index m = a.shape()[0];
  const Index inner = a.numel() / m;
  for (Index r : rows)
    if (r < 0 || r >= m) throw DimensionError("gather_rows: index " + std::to_string(r) + " out of range");
  Shape out = a.shape();
  out[0] = static_cast<Index>(rows.size());
  const auto& x = a.node()->value;
  std::vector<Scalar> y(static_cast<std::size_t>(out[0] * inner));
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(x.begin() + rows[k] * inner, inner, y.begin() + static_cast<Index>(k) * inner);
  return make_result<Scalar>(Op::kGatherRows, std::move(out), std::move(y), {a.node()},
                             [idx = std::vector<Index>(rows.begin(), rows.end()), inner](detail::Node<Scalar>& self) {
                               auto* g = input_grad(self, 0);
                               if (!g) return;
                               for (std::size_t k = 0; k < idx.size(); ++k)
                                 for (Index t = 0; t < inner; ++t)
                                   (*g)[idx[k] * inner + t] += self.grad[static_cast<Index>(k) * inner + t];
                             });
}

template <typename Scalar>
Tensor<Scalar> max_groups(const Tensor<Scalar>& a, Index group) {
  require_rank(a.shape(), 2, "max_groups");
  if (group < 1 || a.shape()[0] % group != 0)
    throw DimensionError("max_groups: row count " + std::to_string(a.shape()[0]) +
                         " not divisible by group " + std::to_string(group));
  const Index k = a.shape()[0] / group;
  const Index c = a.shape()[1];
  const auto& x = a.node()->value;
  std::vector<Scalar> y(static_cast<std::size_t>(k * c));
  std::vector<Index> arg(static_cast<std::size_t>(k * c));
  for (Index r = 0; r < k; ++r)
    for (Index ch = 0; ch < c; ++ch) {
      Index best = r * group;
      for (Index t = 1; t < group; ++t) {
        const Index cand = r * group + t;
        if (x[cand * c + ch] > x[best * c + ch]) best = cand;
      }
      y[r * c + ch] = x[best * c + ch];
      arg[r * c + ch] = best * c + ch;
    }
  return make_result<Scalar>(Op::kMaxGroups, {k, c}, std::move(y), {a.node()},
                             [arg = std::move(arg)](detail::Node<Scalar>& self) {
                               if (auto* g = input_grad(self, 0))
                                 for (std::size_t i = 0; i < arg.size(); ++i) (*g)[arg[i]] += self.grad[i];
                             });
}

// --- explicit instantiations ----------------------------------------------

#define E360_INSTANTIATE(S)                                                                  \
  template class Tensor<S>;                                                                  \
  template class ComputationTape<S>;                                                         \
  template void backward<S>(const Tensor<S>&, bool);                                         \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> transpose<S>(const Tensor<S>&);                                         \
  template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                    \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> neg<S>(const Tensor<S>&);                                               \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                          \
  template Tensor<S> add_scalar<S>(const Tensor<S>&, S);                                     \
  template Tensor<S> exp<S>(const Tensor<S>&);                                               \
  template Tensor<S> abs<S>(const Tensor<S>&);                                               \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                                           \
  template Tensor<S> relu<S>(const Tensor<S>&);                                              \
  template Tensor<S> berhu<S>(const Tensor<S>&, S);                                          \
  template Tensor<S> sum<S>(const Tensor<S>&, Index);                                        \
  template Tensor<S> sum_all<S>(const Tensor<S>&);                                           \
  template Tensor<S> mean_all<S>(const Tensor<S>&);                                          \
  template Tensor<S> concat<S>(const std::vector<Tensor<S>>&, Index);                        \
  template Tensor<S> expand<S>(const Tensor<S>&, Shape);                                     \
  template Tensor<S> slice<S>(const Tensor<S>&, Index, Index, Index);                        \
  template Tensor<S> softmax_lastdim<S>(const Tensor<S>&);                                   \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index); \
  template Tensor<S> bilinear_resize<S>(const Tensor<S>&, Index, Index);                     \
  template Tensor<S> gather_rows<S>(const Tensor<S>&, std::span<const Index>);               \
  template Tensor<S> max_groups<S>(const Tensor<S>&, Index);

E360_INSTANTIATE(float)
E360_INSTANTIATE(double)

#undef E360_INSTANTIATE

}  // namespace e360
