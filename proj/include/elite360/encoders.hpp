#pragma once

// ERP convolutional encoder and the ICOSAP point encoder.

#include <Eigen/Core>

#include <vector>

#include "elite360/icosap.hpp"
#include "elite360/nn.hpp"
#include "elite360/tensor.hpp"

namespace e360 {

using PointCoords = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// --- ERP encoder -----------------------------------------------------------

struct ErpEncoderConfig {
  Index in_channels = 3;
  // One entry for the stem followed by one per stage.
  std::vector<Index> widths;
  int stages = 4;

  Index deepest_scale() const { return Index{2} << stages; }
};

// Stem width C/4, then stage widths taken from the tail of
// (C/4, C/2, C, C); never narrower than 1.
std::vector<Index> default_encoder_widths(Index channels, int stages);

template <typename Scalar>
struct ErpFeaturePyramid {
  // levels[k] has shape [widths[k], H / scales[k], W / scales[k]].
  std::vector<Tensor<Scalar>> levels;
  std::vector<Index> scales;

  const Tensor<Scalar>& deepest() const { return levels.back(); }
};

template <typename Scalar>
class ErpEncoder {
 public:
  ErpEncoder() = default;
  ErpEncoder(const ErpEncoderConfig& config, Rng& rng);

  const ErpEncoderConfig& config() const { return config_; }
  // x is [in_channels, H, W]; H and W must be divisible by the deepest scale.
  ErpFeaturePyramid<Scalar> operator()(const Tensor<Scalar>& x) const;
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;

  Conv2d<Scalar>& stem() { return stem_; }
  std::vector<std::pair<Conv2d<Scalar>, Conv2d<Scalar>>>& stages() { return stages_; }

 private:
  ErpEncoderConfig config_;
  Conv2d<Scalar> stem_;
  std::vector<std::pair<Conv2d<Scalar>, Conv2d<Scalar>>> stages_;
};

// Number of learnable scalars in an encoder with these settings.
Index erp_encoder_parameter_count(const ErpEncoderConfig& config);

// --- point sampling --------------------------------------------------------

// Greedy farthest point sampling from index 0. Each pick maximizes the
// squared distance to the chosen set; ties go to the lowest index.
std::vector<Index> farthest_point_sample(const PointCoords& points, Index k);

// For each center, the k nearest points (squared distance, ties to the
// lowest index). The center itself is included. Result is centers x k,
// row-major.
std::vector<Index> knn_indices(const PointCoords& points, std::span<const Index> centers, Index k);

// --- point encoder ---------------------------------------------------------

template <typename Scalar>
struct PointFeatureSet {
  PointCoords coords;            // N x 3
  Tensor<Scalar> features;       // [N, C]
  std::vector<Index> source;     // row indices into the original point set

  Index size() const { return coords.rows(); }
};

struct TransitionOptions {
  Index knn = 8;
  bool relu = true;
  // Zero the relative-position channels fed to the shared MLP.
  bool zero_positions = false;
};

// FPS down to k_out centers, gather each center's neighbors, apply `mlp` to
// (relative position ++ feature) and max-pool over the neighborhood.
template <typename Scalar>
PointFeatureSet<Scalar> transition_down(const PointFeatureSet<Scalar>& in, Index k_out, const Linear<Scalar>& mlp,
                                        const TransitionOptions& options = {});

struct PointEncoderConfig {
  Index channels = 32;
  int blocks = 3;
  Index knn = 8;
  Index ratio = 4;
  bool zero_positions = false;
};

template <typename Scalar>
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(const PointEncoderConfig& config, Rng& rng);

  const PointEncoderConfig& config() const { return config_; }
  // Output size for an input of m points; throws ConfigError if the blocks
  // do not divide m evenly.
  Index output_size(Index m) const;
  PointFeatureSet<Scalar> operator()(const IcosapPointSet<Scalar>& points) const;
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;

  Linear<Scalar>& embed() { return embed_; }
  std::vector<Linear<Scalar>>& blocks() { return blocks_; }

 private:
  PointEncoderConfig config_;
  Linear<Scalar> embed_;
  std::vector<Linear<Scalar>> blocks_;
};

}  // namespace e360
