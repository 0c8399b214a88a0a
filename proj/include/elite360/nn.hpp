#pragma once

// Small learnable layers and seeded weight initialization.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "elite360/tensor.hpp"

namespace e360 {

// Reproducible uniform draws. The mapping from engine output to [0, 1) is
// spelled out so results do not depend on the standard library's
// distribution implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<Scalar> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Scalar>(rng.uniform(-bound, bound));
  return Tensor<Scalar>::from_vector(std::move(shape), std::move(v), true);
}

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
using ParamList = std::vector<NamedTensor<Scalar>>;

template <typename Scalar>
Index parameter_count(const ParamList<Scalar>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// y = x W + b with W [in, out].
template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;  // may be undefined

  static Linear make(Index in, Index out, bool with_bias, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = uniform_tensor<Scalar>({in, out}, bound, rng);
    if (with_bias) l.bias = uniform_tensor<Scalar>({out}, bound, rng);
    return l;
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    Tensor<Scalar> y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }

  void collect(const std::string& prefix, ParamList<Scalar>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

// Square-kernel convolution. Weights are drawn He-uniform (bound
// sqrt(6 / fan_in)) since every conv here feeds a ReLU; biases start at 0.
template <typename Scalar>
struct Conv2d {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  Index stride = 1;
  Index padding = 1;

  static Conv2d make(Index cin, Index cout, Index kernel, Index stride, Rng& rng) {
    const double fan_in = static_cast<double>(cin * kernel * kernel);
    Conv2d c;
    c.weight = uniform_tensor<Scalar>({cout, cin, kernel, kernel}, std::sqrt(6.0 / fan_in), rng);
    c.bias = Tensor<Scalar>::zeros({cout}, true);
    c.stride = stride;
    c.padding = kernel / 2;
    return c;
  }

  Index out_channels() const { return weight.dim(0); }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return conv2d(x, weight, bias, stride, padding); }

  void collect(const std::string& prefix, ParamList<Scalar>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace e360
