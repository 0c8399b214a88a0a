#pragma once

// Bi-projection fusion of the deepest ERP features with point features:
// semantic attention, distance attention and a per-channel gate.
//
// Pixel features are flattened to rows: F^E is [P, C] with P = h * w in
// row-major pixel order, point features are [N, C].

#include <string>

#include "elite360/encoders.hpp"
#include "elite360/nn.hpp"
#include "elite360/tensor.hpp"

namespace e360 {

template <typename Scalar>
struct B2FWeights {
  Tensor<Scalar> sq, sk, sv;     // [C, d]
  Tensor<Scalar> sp;             // [3, d]
  Tensor<Scalar> dq, dk, dv;     // [C, d]
  Tensor<Scalar> gate_sa, gate_da;  // [2d, d]

  static B2FWeights make(Index channels, Index d, Rng& rng);
  Index channels() const { return sq.dim(0); }
  Index width() const { return sq.dim(1); }
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;
};

template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> output;     // [P, d]
  Tensor<Scalar> attention;  // [P, N]
};

template <typename Scalar>
AttentionResult<Scalar> semantic_affinity_attention(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi,
                                                    const B2FWeights<Scalar>& w);

// exp(-|dir_p - x_n|) per axis, projected by W^SP: [P, N, d].
template <typename Scalar>
Tensor<Scalar> spatial_distance_embedding(const Tensor<Scalar>& erp_dirs, const Tensor<Scalar>& point_coords,
                                          const Tensor<Scalar>& wsp);
// The unprojected [P, N, 3] factor of the above.
template <typename Scalar>
Tensor<Scalar> spatial_proximity(const Tensor<Scalar>& erp_dirs, const Tensor<Scalar>& point_coords);

// exp(-|Q_p - K_n|) per channel: [P, N, d].
template <typename Scalar>
Tensor<Scalar> semantic_distance_embedding(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi,
                                           const Tensor<Scalar>& wq, const Tensor<Scalar>& wk);

template <typename Scalar>
AttentionResult<Scalar> distance_affinity_attention(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi,
                                                    const Tensor<Scalar>& erp_dirs,
                                                    const Tensor<Scalar>& point_coords,
                                                    const B2FWeights<Scalar>& w);

template <typename Scalar>
struct GateResult {
  Tensor<Scalar> output;
  Tensor<Scalar> g_sa, g_da;
};

template <typename Scalar>
GateResult<Scalar> gated_fusion(const Tensor<Scalar>& fsa, const Tensor<Scalar>& fda, const Tensor<Scalar>& gate_sa,
                                const Tensor<Scalar>& gate_da);

template <typename Scalar>
Tensor<Scalar> b2f_forward(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi, const Tensor<Scalar>& erp_dirs,
                           const Tensor<Scalar>& point_coords, const B2FWeights<Scalar>& w);

// --- fusion variants for ablation ------------------------------------------

enum class FusionMode { kB2F, kIdentity, kAdd, kConcat };

FusionMode parse_fusion_mode(const std::string& name);
std::string fusion_mode_name(FusionMode mode);

// For each pixel direction, the row of the closest point coordinate.
std::vector<Index> nearest_point_rows(const PointCoords& erp_dirs, const PointCoords& point_coords);

// Owns whichever weights the chosen mode needs and maps F^E [P, C] plus
// point features to F^GL [P, d].
template <typename Scalar>
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(FusionMode mode, Index channels, Index d, Rng& rng);

  FusionMode mode() const { return mode_; }
  Index out_channels() const { return out_channels_; }
  Tensor<Scalar> operator()(const Tensor<Scalar>& fe, const PointFeatureSet<Scalar>& points,
                            const PointCoords& erp_dirs) const;
  void collect(const std::string& prefix, ParamList<Scalar>& out) const;

  B2FWeights<Scalar>& b2f() { return b2f_; }

 private:
  FusionMode mode_ = FusionMode::kB2F;
  Index out_channels_ = 0;
  B2FWeights<Scalar> b2f_;
  Linear<Scalar> mix_;
};

}  // namespace e360
