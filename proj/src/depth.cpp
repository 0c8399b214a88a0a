#include "elite360/depth.hpp"

#include <cmath>
#include <string>

#include "elite360/errors.hpp"

namespace e360 {

template <typename Scalar>
DepthDecoder<Scalar>::DepthDecoder(const std::vector<Index>& skip_widths, Index fused_width, double max_depth,
                                   Rng& rng)
    : max_depth_(max_depth) {
  if (skip_widths.size() < 2) throw ConfigError("decoder needs at least two encoder scales");
  if (!(max_depth > 0)) throw ConfigError("max_depth must be positive");
  // skip_widths.back() belongs to the deepest scale, which the fused map replaces.
  const Index n_skips = static_cast<Index>(skip_widths.size()) - 1;
  Index in = fused_width;
  for (Index j = 0; j <= n_skips; ++j) {
    const Index level = n_skips - 1 - j;
    const Index skip = level >= 0 ? skip_widths[static_cast<std::size_t>(level)] : 0;
    const Index out = level >= 0 ? skip : skip_widths[0];
    blocks_.push_back(Conv2d<Scalar>::make(in + skip, out, 3, 1, rng));
    in = out;
  }
  head_ = Conv2d<Scalar>::make(in, 1, 3, 1, rng);
}

template <typename Scalar>
Tensor<Scalar> DepthDecoder<Scalar>::operator()(const Tensor<Scalar>& fused,
                                                const ErpFeaturePyramid<Scalar>& pyramid) const {
  const Index n_skips = static_cast<Index>(pyramid.levels.size()) - 1;
  if (n_skips + 1 != static_cast<Index>(blocks_.size()))
    throw ConfigError("decoder built for " + std::to_string(blocks_.size() - 1) + " skip scales, pyramid has " +
                      std::to_string(n_skips));
  if (fused.rank() != 3) throw DimensionError("decoder expects fused features [d, h, w]");
  Tensor<Scalar> h = fused;
  for (Index j = 0; j <= n_skips; ++j) {
    h = bilinear_resize(h, h.dim(1) * 2, h.dim(2) * 2);
    const Index level = n_skips - 1 - j;
    if (level >= 0) {
      const auto& skip = pyramid.levels[static_cast<std::size_t>(level)];
      if (skip.dim(1) != h.dim(1) || skip.dim(2) != h.dim(2))
        throw ConfigError("missing skip at scale " + std::to_string(pyramid.scales[static_cast<std::size_t>(level)]));
      h = concat<Scalar>({h, skip}, 0);
    }
    h = relu(blocks_[static_cast<std::size_t>(j)](h));
  }
  const Tensor<Scalar> d = scale(sigmoid(head_(h)), static_cast<Scalar>(max_depth_));
  return reshape(d, {d.dim(1), d.dim(2)});
}

template <typename Scalar>
void DepthDecoder<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  for (std::size_t j = 0; j < blocks_.size(); ++j) blocks_[j].collect(prefix + ".up" + std::to_string(j), out);
  head_.collect(prefix + ".head", out);
}

std::vector<Index> valid_indices(const ValidMask& mask) {
  std::vector<Index> idx;
  for (Index i = 0; i < mask.rows(); ++i)
    for (Index j = 0; j < mask.cols(); ++j)
      if (mask(i, j)) idx.push_back(i * mask.cols() + j);
  return idx;
}

namespace {

template <typename Scalar>
Tensor<Scalar> as_map(const Tensor<Scalar>& pred, const DepthMap& gt, const ValidMask& mask) {
  Tensor<Scalar> p = pred;
  if (p.rank() == 3 && p.dim(0) == 1) p = reshape(p, {p.dim(1), p.dim(2)});
  if (p.rank() != 2 || p.dim(0) != gt.rows() || p.dim(1) != gt.cols())
    throw DimensionError("prediction " + shape_string(pred.shape()) + " does not match ground truth " +
                         std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()));
  if (mask.rows() != gt.rows() || mask.cols() != gt.cols()) throw DimensionError("mask shape differs from depth");
  return p;
}

// Mean BerHu of rows `idx` of (values - target), values [M, 1].
template <typename Scalar>
Tensor<Scalar> masked_berhu(const Tensor<Scalar>& values, const std::vector<Index>& idx,
                            const std::vector<Scalar>& target, double c) {
  const Index n = static_cast<Index>(idx.size());
  const auto picked = gather_rows(values, std::span<const Index>(idx));
  const auto t = Tensor<Scalar>::from_vector({n, 1}, target);
  return mean_all(berhu(sub(picked, t), static_cast<Scalar>(c)));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> berhu_loss(const Tensor<Scalar>& pred, const DepthMap& gt, const ValidMask& mask, double c) {
  const auto p = as_map(pred, gt, mask);
  const auto idx = valid_indices(mask);
  if (idx.empty()) throw UsageError("berhu_loss: mask has no valid pixel");
  std::vector<Scalar> target;
  target.reserve(idx.size());
  for (Index k : idx) target.push_back(static_cast<Scalar>(gt(k / gt.cols(), k % gt.cols())));
  return masked_berhu(reshape(p, {p.numel(), 1}), idx, target, c);
}

template <typename Scalar>
Tensor<Scalar> gradient_loss(const Tensor<Scalar>& pred, const DepthMap& gt, const ValidMask& mask, double c) {
  const auto p = as_map(pred, gt, mask);
  const Index H = p.dim(0), W = p.dim(1);
  Tensor<Scalar> total;
  auto accumulate = [&](const Tensor<Scalar>& term) { total = total.defined() ? add(total, term) : term; };

  if (W > 1) {
    std::vector<Index> idx;
    std::vector<Scalar> target;
    for (Index i = 0; i < H; ++i)
      for (Index j = 0; j + 1 < W; ++j)
        if (mask(i, j) && mask(i, j + 1)) {
          idx.push_back(i * (W - 1) + j);
          target.push_back(static_cast<Scalar>(static_cast<double>(gt(i, j + 1)) - gt(i, j)));
        }
    if (!idx.empty()) {
      const auto dx = sub(slice(p, 1, 1, W), slice(p, 1, 0, W - 1));
      accumulate(masked_berhu(reshape(dx, {H * (W - 1), 1}), idx, target, c));
    }
  }
  if (H > 1) {
    std::vector<Index> idx;
    std::vector<Scalar> target;
    for (Index i = 0; i + 1 < H; ++i)
      for (Index j = 0; j < W; ++j)
        if (mask(i, j) && mask(i + 1, j)) {
          idx.push_back(i * W + j);
          target.push_back(static_cast<Scalar>(static_cast<double>(gt(i + 1, j)) - gt(i, j)));
        }
    if (!idx.empty()) {
      const auto dy = sub(slice(p, 0, 1, H), slice(p, 0, 0, H - 1));
      accumulate(masked_berhu(reshape(dy, {(H - 1) * W, 1}), idx, target, c));
    }
  }
  if (!total.defined()) throw UsageError("gradient_loss: no stencil has two valid taps");
  return total;
}

template <typename Scalar>
LossTerms<Scalar> total_loss(const Tensor<Scalar>& pred, const DepthMap& gt, const ValidMask& mask, double c) {
  LossTerms<Scalar> t;
  t.berhu = berhu_loss(pred, gt, mask, c);
  t.grad = gradient_loss(pred, gt, mask, c);
  t.total = add(t.berhu, t.grad);
  return t;
}

MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, const ValidMask& mask, double alpha) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || mask.rows() != gt.rows() || mask.cols() != gt.cols())
    throw DimensionError("metrics: prediction, ground truth and mask shapes differ");
  MetricsReport m;
  double sq = 0;
  const double a1 = alpha, a2 = alpha * alpha, a3 = alpha * alpha * alpha;
  for (Index i = 0; i < gt.rows(); ++i)
    for (Index j = 0; j < gt.cols(); ++j) {
      if (!mask(i, j)) continue;
      const double g = gt(i, j), p = pred(i, j);
      if (!(g > 0)) {
        ++m.skipped_nonpositive;
        continue;
      }
      const double diff = p - g;
      m.abs_rel += std::abs(diff) / g;
      m.sq_rel += diff * diff / g;
      sq += diff * diff;
      const double ratio = std::max(p / g, g / p);
      if (ratio < a1) m.d1 += 1;
      if (ratio < a2) m.d2 += 1;
      if (ratio < a3) m.d3 += 1;
      ++m.valid_px;
    }
  if (m.valid_px == 0) throw UsageError("metrics: no valid pixel with positive ground truth");
  const double n = static_cast<double>(m.valid_px);
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(sq / n);
  m.d1 /= n;
  m.d2 /= n;
  m.d3 /= n;
  return m;
}

nlohmann::ordered_json metrics_to_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["abs_rel"] = m.abs_rel;
  j["sq_rel"] = m.sq_rel;
  j["rmse"] = m.rmse;
  j["d1"] = m.d1;
  j["d2"] = m.d2;
  j["d3"] = m.d3;
  j["valid_px"] = m.valid_px;
  return j;
}

template <typename Scalar>
Adam<Scalar>::Adam(std::vector<Tensor<Scalar>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

template <typename Scalar>
void Adam<Scalar>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto values = p.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = g[i];
      m[i] = options_.beta1 * m[i] + (1 - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1 - options_.beta2) * gi * gi;
      const double update = options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      values[i] = static_cast<Scalar>(values[i] - update);
    }
  }
  zero_grad();
}

template <typename Scalar>
void Adam<Scalar>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

#define E360_DEPTH_INSTANTIATE(S)                                                                             \
  template class DepthDecoder<S>;                                                                             \
  template class Adam<S>;                                                                                     \
  template Tensor<S> berhu_loss(const Tensor<S>&, const DepthMap&, const ValidMask&, double);                 \
  template Tensor<S> gradient_loss(const Tensor<S>&, const DepthMap&, const ValidMask&, double);              \
  template LossTerms<S> total_loss(const Tensor<S>&, const DepthMap&, const ValidMask&, double);

E360_DEPTH_INSTANTIATE(float)
E360_DEPTH_INSTANTIATE(double)

}  // namespace e360
