#include "elite360/encoders.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "elite360/errors.hpp"
#include "elite360/runtime.hpp"

namespace e360 {

std::vector<Index> default_encoder_widths(Index channels, int stages) {
  if (stages < 1 || stages > 4) throw ConfigError("encoder stages must lie in [1, 4]");
  const std::vector<Index> tail = {channels / 4, channels / 2, channels, channels};
  std::vector<Index> widths = {std::max<Index>(1, channels / 4)};
  for (int k = 4 - stages; k < 4; ++k) widths.push_back(std::max<Index>(1, tail[static_cast<std::size_t>(k)]));
  return widths;
}

template <typename Scalar>
ErpEncoder<Scalar>::ErpEncoder(const ErpEncoderConfig& config, Rng& rng) : config_(config) {
  if (config_.widths.size() != static_cast<std::size_t>(config_.stages) + 1)
    throw ConfigError("encoder_widths needs " + std::to_string(config_.stages + 1) + " entries, got " +
                      std::to_string(config_.widths.size()));
  for (Index w : config_.widths)
    if (w < 1) throw ConfigError("encoder widths must be positive");
  stem_ = Conv2d<Scalar>::make(config_.in_channels, config_.widths[0], 3, 2, rng);
  for (int s = 0; s < config_.stages; ++s) {
    const Index cin = config_.widths[static_cast<std::size_t>(s)];
    const Index cout = config_.widths[static_cast<std::size_t>(s) + 1];
    auto down = Conv2d<Scalar>::make(cin, cout, 3, 2, rng);
    auto refine = Conv2d<Scalar>::make(cout, cout, 3, 1, rng);
    stages_.emplace_back(std::move(down), std::move(refine));
  }
}

template <typename Scalar>
ErpFeaturePyramid<Scalar> ErpEncoder<Scalar>::operator()(const Tensor<Scalar>& x) const {
  if (x.rank() != 3 || x.dim(0) != config_.in_channels)
    throw DimensionError("erp encoder expects [" + std::to_string(config_.in_channels) + ", H, W], got " +
                         shape_string(x.shape()));
  const Index smax = config_.deepest_scale();
  if (x.dim(1) % smax != 0 || x.dim(2) % smax != 0)
    throw UsageError("input " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                     " is not divisible by the deepest scale " + std::to_string(smax));
  ErpFeaturePyramid<Scalar> out;
  Tensor<Scalar> h = relu(stem_(x));
  out.levels.push_back(h);
  out.scales.push_back(2);
  for (const auto& [down, refine] : stages_) {
    h = relu(refine(relu(down(h))));
    out.levels.push_back(h);
    out.scales.push_back(out.scales.back() * 2);
  }
  return out;
}

template <typename Scalar>
void ErpEncoder<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  stem_.collect(prefix + ".stem", out);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    stages_[s].first.collect(prefix + ".stage" + std::to_string(s) + ".down", out);
    stages_[s].second.collect(prefix + ".stage" + std::to_string(s) + ".refine", out);
  }
}

Index erp_encoder_parameter_count(const ErpEncoderConfig& config) {
  auto conv = [](Index cin, Index cout) { return cout * cin * 9 + cout; };
  Index n = conv(config.in_channels, config.widths.at(0));
  for (int s = 0; s < config.stages; ++s) {
    const Index cin = config.widths.at(static_cast<std::size_t>(s));
    const Index cout = config.widths.at(static_cast<std::size_t>(s) + 1);
    n += conv(cin, cout) + conv(cout, cout);
  }
  return n;
}

std::vector<Index> farthest_point_sample(const PointCoords& points, Index k) {
  const Index m = points.rows();
  if (k < 1 || k > m)
    throw UsageError("farthest_point_sample: k = " + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  std::vector<Index> chosen;
  chosen.reserve(static_cast<std::size_t>(k));
  std::vector<double> nearest(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
  std::vector<bool> taken(static_cast<std::size_t>(m), false);
  Index current = 0;
  for (Index round = 0; round < k; ++round) {
    chosen.push_back(current);
    taken[static_cast<std::size_t>(current)] = true;
    if (round + 1 == k) break;
    Index best = -1;
    double best_d = -1;
    for (Index i = 0; i < m; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      const double d = (points.row(i) - points.row(current)).squaredNorm();
      double& n = nearest[static_cast<std::size_t>(i)];
      n = std::min(n, d);
      if (n > best_d) {
        best_d = n;
        best = i;
      }
    }
    current = best;
  }
  return chosen;
}

std::vector<Index> knn_indices(const PointCoords& points, std::span<const Index> centers, Index k) {
  const Index m = points.rows();
  if (k < 1 || k > m) throw UsageError("knn: k = " + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  std::vector<Index> out(centers.size() * static_cast<std::size_t>(k));
  parallel_for(static_cast<Index>(centers.size()), [&](Index begin, Index end) {
    std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(m));
    for (Index c = begin; c < end; ++c) {
      const auto q = points.row(centers[static_cast<std::size_t>(c)]);
      for (Index i = 0; i < m; ++i) d[static_cast<std::size_t>(i)] = {(points.row(i) - q).squaredNorm(), i};
      std::partial_sort(d.begin(), d.begin() + k, d.end());
      for (Index n = 0; n < k; ++n) out[static_cast<std::size_t>(c * k + n)] = d[static_cast<std::size_t>(n)].second;
    }
  });
  return out;
}

template <typename Scalar>
PointFeatureSet<Scalar> transition_down(const PointFeatureSet<Scalar>& in, Index k_out, const Linear<Scalar>& mlp,
                                        const TransitionOptions& options) {
  if (in.features.rank() != 2 || in.features.dim(0) != in.size())
    throw DimensionError("transition_down: features must be [N, C] with N = " + std::to_string(in.size()));
  if (k_out > in.size()) throw UsageError("transition_down: cannot sample more points than the input holds");
  if (options.knn > in.size()) throw UsageError("transition_down: knn exceeds the input size");

  const std::vector<Index> centers = farthest_point_sample(in.coords, k_out);
  const std::vector<Index> nbr = knn_indices(in.coords, centers, options.knn);

  std::vector<Scalar> rel(nbr.size() * 3, Scalar(0));
  if (!options.zero_positions)
    for (std::size_t r = 0; r < nbr.size(); ++r) {
      const Index c = centers[r / static_cast<std::size_t>(options.knn)];
      for (int a = 0; a < 3; ++a)
        rel[r * 3 + static_cast<std::size_t>(a)] = static_cast<Scalar>(in.coords(nbr[r], a) - in.coords(c, a));
    }
  const auto rel_t = Tensor<Scalar>::from_vector({static_cast<Index>(nbr.size()), 3}, std::move(rel));
  const auto grouped = concat<Scalar>({rel_t, gather_rows(in.features, std::span<const Index>(nbr))}, 1);
  Tensor<Scalar> h = mlp(grouped);
  if (options.relu) h = relu(h);

  PointFeatureSet<Scalar> out;
  out.features = max_groups(h, options.knn);
  out.coords.resize(k_out, 3);
  out.source.resize(static_cast<std::size_t>(k_out));
  for (Index i = 0; i < k_out; ++i) {
    const Index c = centers[static_cast<std::size_t>(i)];
    out.coords.row(i) = in.coords.row(c);
    out.source[static_cast<std::size_t>(i)] = in.source.empty() ? c : in.source[static_cast<std::size_t>(c)];
  }
  return out;
}

template <typename Scalar>
PointEncoder<Scalar>::PointEncoder(const PointEncoderConfig& config, Rng& rng) : config_(config) {
  if (config_.channels < 1) throw ConfigError("point encoder channels must be positive");
  if (config_.blocks < 0) throw ConfigError("point encoder blocks must be nonnegative");
  if (config_.ratio < 1) throw ConfigError("point encoder ratio must be positive");
  embed_ = Linear<Scalar>::make(6, config_.channels, true, rng);
  for (int b = 0; b < config_.blocks; ++b)
    blocks_.push_back(Linear<Scalar>::make(3 + config_.channels, config_.channels, true, rng));
}

template <typename Scalar>
Index PointEncoder<Scalar>::output_size(Index m) const {
  Index n = m;
  for (int b = 0; b < config_.blocks; ++b) {
    if (n % config_.ratio != 0 || n / config_.ratio < 1)
      throw ConfigError(std::to_string(config_.blocks) + " transition blocks with ratio " +
                        std::to_string(config_.ratio) + " do not divide " + std::to_string(m) + " points");
    n /= config_.ratio;
  }
  return n;
}

template <typename Scalar>
PointFeatureSet<Scalar> PointEncoder<Scalar>::operator()(const IcosapPointSet<Scalar>& points) const {
  const Index m = points.size();
  if (m != icosap_face_count(points.level))
    throw DimensionError("point set of level " + std::to_string(points.level) + " has " + std::to_string(m) +
                         " rows");
  output_size(m);

  PointFeatureSet<Scalar> pf;
  pf.coords = points.coords().template cast<double>();
  pf.source.resize(static_cast<std::size_t>(m));
  std::iota(pf.source.begin(), pf.source.end(), Index{0});
  std::vector<Scalar> raw(points.points.data(), points.points.data() + m * 6);
  if (config_.zero_positions)
    for (Index r = 0; r < m; ++r)
      for (int a = 0; a < 3; ++a) raw[static_cast<std::size_t>(r * 6 + a)] = Scalar(0);
  const auto input = Tensor<Scalar>::from_vector({m, 6}, std::move(raw));
  pf.features = relu(embed_(input));

  TransitionOptions opts;
  opts.knn = config_.knn;
  opts.zero_positions = config_.zero_positions;
  for (const auto& block : blocks_) pf = transition_down(pf, pf.size() / config_.ratio, block, opts);
  return pf;
}

template <typename Scalar>
void PointEncoder<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  embed_.collect(prefix + ".embed", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(prefix + ".td" + std::to_string(b), out);
}

template class ErpEncoder<float>;
template class ErpEncoder<double>;
template class PointEncoder<float>;
template class PointEncoder<double>;
template PointFeatureSet<float> transition_down(const PointFeatureSet<float>&, Index, const Linear<float>&,
                                                const TransitionOptions&);
template PointFeatureSet<double> transition_down(const PointFeatureSet<double>&, Index, const Linear<double>&,
                                                 const TransitionOptions&);

}  // namespace e360
