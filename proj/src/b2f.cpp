#include "elite360/b2f.hpp"

#include <cmath>
#include <limits>

#include "elite360/errors.hpp"

namespace e360 {
namespace {

template <typename Scalar>
void require_rows(const Tensor<Scalar>& t, Index cols, const char* what) {
  if (t.rank() != 2 || t.dim(1) != cols)
    throw DimensionError(std::string(what) + ": expected [*, " + std::to_string(cols) + "], got " +
                         shape_string(t.shape()));
}

template <typename Scalar>
Scalar inv_sqrt(Index d) {
  return static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d)));
}

template <typename Scalar>
Tensor<Scalar> to_tensor(const PointCoords& m) {
  return Tensor<Scalar>::from_matrix(m);
}

}  // namespace

template <typename Scalar>
B2FWeights<Scalar> B2FWeights<Scalar>::make(Index channels, Index d, Rng& rng) {
  const double bc = 1.0 / std::sqrt(static_cast<double>(channels));
  const double b3 = 1.0 / std::sqrt(3.0);
  const double bg = 1.0 / std::sqrt(static_cast<double>(2 * d));
  B2FWeights w;
  w.sq = uniform_tensor<Scalar>({channels, d}, bc, rng);
  w.sk = uniform_tensor<Scalar>({channels, d}, bc, rng);
  w.sv = uniform_tensor<Scalar>({channels, d}, bc, rng);
  w.sp = uniform_tensor<Scalar>({3, d}, b3, rng);
  w.dq = uniform_tensor<Scalar>({channels, d}, bc, rng);
  w.dk = uniform_tensor<Scalar>({channels, d}, bc, rng);
  w.dv = uniform_tensor<Scalar>({channels, d}, bc, rng);
  w.gate_sa = uniform_tensor<Scalar>({2 * d, d}, bg, rng);
  w.gate_da = uniform_tensor<Scalar>({2 * d, d}, bg, rng);
  return w;
}

template <typename Scalar>
void B2FWeights<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  out.push_back({prefix + ".sq", sq});
  out.push_back({prefix + ".sk", sk});
  out.push_back({prefix + ".sv", sv});
  out.push_back({prefix + ".sp", sp});
  out.push_back({prefix + ".dq", dq});
  out.push_back({prefix + ".dk", dk});
  out.push_back({prefix + ".dv", dv});
  out.push_back({prefix + ".gate_sa", gate_sa});
  out.push_back({prefix + ".gate_da", gate_da});
}

template <typename Scalar>
AttentionResult<Scalar> semantic_affinity_attention(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi,
                                                    const B2FWeights<Scalar>& w) {
  require_rows(fe, w.channels(), "semantic attention F^E");
  require_rows(fi, w.channels(), "semantic attention F^I");
  const Tensor<Scalar> q = matmul(fe, w.sq);
  const Tensor<Scalar> k = matmul(fi, w.sk);
  const Tensor<Scalar> v = matmul(fi, w.sv);
  AttentionResult<Scalar> r;
  r.attention = softmax_lastdim(scale(matmul(q, transpose(k)), inv_sqrt<Scalar>(w.width())));
  r.output = matmul(r.attention, v);
  return r;
}

template <typename Scalar>
Tensor<Scalar> spatial_proximity(const Tensor<Scalar>& erp_dirs, const Tensor<Scalar>& point_coords) {
  require_rows(erp_dirs, 3, "ERP directions");
  require_rows(point_coords, 3, "point coordinates");
  const Index P = erp_dirs.dim(0), N = point_coords.dim(0);
  const auto dirs = expand(reshape(erp_dirs, {P, 1, 3}), {P, N, 3});
  // [N, 3] broadcasts as a trailing suffix of [P, N, 3].
  return exp(neg(abs(sub(dirs, point_coords))));
}

template <typename Scalar>
Tensor<Scalar> spatial_distance_embedding(const Tensor<Scalar>& erp_dirs, const Tensor<Scalar>& point_coords,
                                          const Tensor<Scalar>& wsp) {
  if (wsp.rank() != 2 || wsp.dim(0) != 3) throw DimensionError("W^SP must be [3, d], got " + shape_string(wsp.shape()));
  const Tensor<Scalar> prox = spatial_proximity(erp_dirs, point_coords);
  const Index P = prox.dim(0), N = prox.dim(1);
  return reshape(matmul(reshape(prox, {P * N, 3}), wsp), {P, N, wsp.dim(1)});
}

template <typename Scalar>
Tensor<Scalar> semantic_distance_embedding(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi,
                                           const Tensor<Scalar>& wq, const Tensor<Scalar>& wk) {
  require_rows(fe, wq.dim(0), "distance attention F^E");
  require_rows(fi, wk.dim(0), "distance attention F^I");
  const Tensor<Scalar> q = matmul(fe, wq);
  const Tensor<Scalar> k = matmul(fi, wk);
  const Index P = q.dim(0), N = k.dim(0), d = q.dim(1);
  const auto qx = expand(reshape(q, {P, 1, d}), {P, N, d});
  return exp(neg(abs(sub(qx, k))));
}

template <typename Scalar>
AttentionResult<Scalar> distance_affinity_attention(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi,
                                                    const Tensor<Scalar>& erp_dirs,
                                                    const Tensor<Scalar>& point_coords,
                                                    const B2FWeights<Scalar>& w) {
  require_rows(fe, w.channels(), "distance attention F^E");
  require_rows(fi, w.channels(), "distance attention F^I");
  if (erp_dirs.dim(0) != fe.dim(0)) throw DimensionError("one ERP direction per pixel required");
  if (point_coords.dim(0) != fi.dim(0)) throw DimensionError("one coordinate per point required");
  const auto dis_sp = spatial_distance_embedding(erp_dirs, point_coords, w.sp);
  const auto dis_se = semantic_distance_embedding(fe, fi, w.dq, w.dk);
  AttentionResult<Scalar> r;
  r.attention = softmax_lastdim(scale(sum(add(dis_sp, dis_se), -1), inv_sqrt<Scalar>(w.width())));
  r.output = matmul(r.attention, matmul(fi, w.dv));
  return r;
}

template <typename Scalar>
GateResult<Scalar> gated_fusion(const Tensor<Scalar>& fsa, const Tensor<Scalar>& fda, const Tensor<Scalar>& gate_sa,
                                const Tensor<Scalar>& gate_da) {
  if (fsa.shape() != fda.shape() || fsa.rank() != 2)
    throw DimensionError("gated fusion: F^SA " + shape_string(fsa.shape()) + " vs F^DA " + shape_string(fda.shape()));
  const Index d = fsa.dim(1);
  for (const auto* g : {&gate_sa, &gate_da})
    if (g->rank() != 2 || g->dim(0) != 2 * d || g->dim(1) != d)
      throw DimensionError("gate projection must be [2d, d], got " + shape_string(g->shape()));
  const auto both = concat<Scalar>({fsa, fda}, 1);
  GateResult<Scalar> r;
  r.g_sa = sigmoid(matmul(both, gate_sa));
  r.g_da = sigmoid(matmul(both, gate_da));
  r.output = add(mul(r.g_sa, fsa), mul(r.g_da, fda));
  return r;
}

template <typename Scalar>
Tensor<Scalar> b2f_forward(const Tensor<Scalar>& fe, const Tensor<Scalar>& fi, const Tensor<Scalar>& erp_dirs,
                           const Tensor<Scalar>& point_coords, const B2FWeights<Scalar>& w) {
  const auto sa = semantic_affinity_attention(fe, fi, w);
  const auto da = distance_affinity_attention(fe, fi, erp_dirs, point_coords, w);
  return gated_fusion(sa.output, da.output, w.gate_sa, w.gate_da).output;
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "b2f") return FusionMode::kB2F;
  if (name == "identity") return FusionMode::kIdentity;
  if (name == "add") return FusionMode::kAdd;
  if (name == "concat") return FusionMode::kConcat;
  throw ConfigError("unknown fusion mode '" + name + "' (expected b2f, identity, add or concat)");
}

std::string fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kB2F: return "b2f";
    case FusionMode::kIdentity: return "identity";
    case FusionMode::kAdd: return "add";
    case FusionMode::kConcat: return "concat";
  }
  return "b2f";
}

std::vector<Index> nearest_point_rows(const PointCoords& erp_dirs, const PointCoords& point_coords) {
  std::vector<Index> rows(static_cast<std::size_t>(erp_dirs.rows()));
  for (Index p = 0; p < erp_dirs.rows(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (Index n = 0; n < point_coords.rows(); ++n) {
      const double d = (erp_dirs.row(p) - point_coords.row(n)).squaredNorm();
      if (d < best) {
        best = d;
        rows[static_cast<std::size_t>(p)] = n;
      }
    }
  }
  return rows;
}

template <typename Scalar>
FusionBlock<Scalar>::FusionBlock(FusionMode mode, Index channels, Index d, Rng& rng) : mode_(mode) {
  switch (mode) {
    case FusionMode::kB2F:
      b2f_ = B2FWeights<Scalar>::make(channels, d, rng);
      out_channels_ = d;
      break;
    case FusionMode::kIdentity:
      out_channels_ = channels;
      break;
    case FusionMode::kAdd:
      mix_ = Linear<Scalar>::make(channels, channels, false, rng);
      out_channels_ = channels;
      break;
    case FusionMode::kConcat:
      mix_ = Linear<Scalar>::make(2 * channels, d, false, rng);
      out_channels_ = d;
      break;
  }
}

template <typename Scalar>
Tensor<Scalar> FusionBlock<Scalar>::operator()(const Tensor<Scalar>& fe, const PointFeatureSet<Scalar>& points,
                                               const PointCoords& erp_dirs) const {
  if (erp_dirs.rows() != fe.dim(0)) throw DimensionError("fusion: one ERP direction per pixel required");
  switch (mode_) {
    case FusionMode::kB2F:
      return b2f_forward(fe, points.features, to_tensor<Scalar>(erp_dirs), to_tensor<Scalar>(points.coords), b2f_);
    case FusionMode::kIdentity:
      return fe;
    case FusionMode::kAdd:
    case FusionMode::kConcat: {
      const auto rows = nearest_point_rows(erp_dirs, points.coords);
      const auto near = gather_rows(points.features, std::span<const Index>(rows));
      if (mode_ == FusionMode::kAdd) return add(fe, mix_(near));
      return mix_(concat<Scalar>({fe, near}, 1));
    }
  }
  return fe;
}

template <typename Scalar>
void FusionBlock<Scalar>::collect(const std::string& prefix, ParamList<Scalar>& out) const {
  if (mode_ == FusionMode::kB2F) b2f_.collect(prefix, out);
  if (mode_ == FusionMode::kAdd || mode_ == FusionMode::kConcat) mix_.collect(prefix + ".mix", out);
}

#define E360_B2F_INSTANTIATE(S)                                                                                \
  template struct B2FWeights<S>;                                                                               \
  template class FusionBlock<S>;                                                                               \
  template AttentionResult<S> semantic_affinity_attention(const Tensor<S>&, const Tensor<S>&,                  \
                                                          const B2FWeights<S>&);                               \
  template Tensor<S> spatial_proximity(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> spatial_distance_embedding(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);         \
  template Tensor<S> semantic_distance_embedding(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,         \
                                                 const Tensor<S>&);                                            \
  template AttentionResult<S> distance_affinity_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                                          const Tensor<S>&, const B2FWeights<S>&);             \
  template GateResult<S> gated_fusion(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);  \
  template Tensor<S> b2f_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,       \
                                 const B2FWeights<S>&);

E360_B2F_INSTANTIATE(float)
E360_B2F_INSTANTIATE(double)

}  // namespace e360
