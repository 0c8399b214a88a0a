#pragma once

// Decoder, depth losses, evaluation metrics and the Adam optimizer.

#include <string>
#include <vector>

#include "json.hpp"

#include "elite360/encoders.hpp"
#include "elite360/image.hpp"
#include "elite360/nn.hpp"
#include "elite360/tensor.hpp"

namespace e360 {

using DepthMap = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// --- decoder ---------------------------------------------------------------

// Up-sample blocks from the fused s_max map back to full resolution. Block k
// doubles the resolution, concatenates the encoder map at the new scale
// (none at full resolution), then applies conv3x3 + ReLU. A conv3x3 head
// produces one channel that is squashed by sigmoid and scaled by max_depth.
template <typename Scalar>
class DepthDecoder {
 public:
  DepthDecoder() = default;
  // `skip_widths[k]` is the encoder width at scale 2^(k+1); `fused_width` the
  // channel count of F^GL.
  DepthDecoder(const std::vector<Index>& skip_widths, Index fused_width, double max_depth, Rng& rng);

  // fused is [d, h, w]; returns [H, W].
  Tensor<Scalar> operator()(const Tensor<Scalar>& fused, const ErpFeaturePyramid<Scalar>& pyramid) const;
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;

  double max_depth() const { return max_depth_; }
  Conv2d<Scalar>& head() { return head_; }

 private:
  std::vector<Conv2d<Scalar>> blocks_;
  Conv2d<Scalar> head_;
  double max_depth_ = 10.0;
};

// --- losses ----------------------------------------------------------------

inline constexpr double kBerhuThreshold = 0.2;

// Flat indices of valid mask entries in row-major order.
std::vector<Index> valid_indices(const ValidMask& mask);

// Mean BerHu of (pred - gt) over valid pixels. pred is [H, W] (or [1, H, W]).
template <typename Scalar>
Tensor<Scalar> berhu_loss(const Tensor<Scalar>& pred, const DepthMap& gt, const ValidMask& mask,
                          double c = kBerhuThreshold);

// Mean BerHu of forward-difference residuals, horizontal plus vertical, over
// stencils whose two taps are valid. A direction with no valid stencil adds
// nothing; both empty is an error.
template <typename Scalar>
Tensor<Scalar> gradient_loss(const Tensor<Scalar>& pred, const DepthMap& gt, const ValidMask& mask,
                             double c = kBerhuThreshold);

template <typename Scalar>
struct LossTerms {
  Tensor<Scalar> total, berhu, grad;
};

template <typename Scalar>
LossTerms<Scalar> total_loss(const Tensor<Scalar>& pred, const DepthMap& gt, const ValidMask& mask,
                             double c = kBerhuThreshold);

// --- metrics ---------------------------------------------------------------

struct MetricsReport {
  double abs_rel = 0, sq_rel = 0, rmse = 0;
  double d1 = 0, d2 = 0, d3 = 0;
  Index valid_px = 0;
  // Masked pixels skipped because their ground truth was not positive.
  Index skipped_nonpositive = 0;
};

// Statistics over mask pixels with positive ground truth, accumulated in
// double in row-major order.
MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, const ValidMask& mask,
                              double alpha = 1.25);

nlohmann::ordered_json metrics_to_json(const MetricsReport& m);

// --- optimizer ---------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Tensor<Scalar>> params, AdamOptions options = {});

  // Applies one update from the parameters' accumulated gradients, then
  // clears them. Parameters without a gradient are left alone.
  void step();
  void zero_grad();
  long steps_taken() const { return t_; }

 private:
  std::vector<Tensor<Scalar>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions options_;
  long t_ = 0;
};

}  // namespace e360
