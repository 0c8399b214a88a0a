#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "elite360/encoders.hpp"
#include "elite360/gradcheck.hpp"
#include "elite360/verify/oracles.hpp"

using namespace e360;

namespace {

PointCoords random_points(Index m, Rng& rng) {
  PointCoords p(m, 3);
  for (Index i = 0; i < m; ++i)
    for (int a = 0; a < 3; ++a) p(i, a) = rng.uniform(-1, 1);
  return p;
}

ImageF noise_erp(Index h, std::uint64_t seed) {
  Rng rng(seed);
  ImageF img(3, h, 2 * h);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

template <typename S>
IcosapPointSet<S> level_points(int level, std::uint64_t seed) {
  const auto f = face_center_point_set(build_icosap_mesh(level), noise_erp(32, seed));
  IcosapPointSet<S> out;
  out.level = f.level;
  out.points = f.points.template cast<S>();
  return out;
}

}  // namespace

TEST_CASE("ERP encoder pyramid shapes") {
  Rng rng(1);
  ErpEncoderConfig cfg;
  cfg.widths = default_encoder_widths(32, 4);
  CHECK(cfg.widths == std::vector<Index>{8, 8, 16, 32, 32});
  const ErpEncoder<float> enc(cfg, rng);
  const auto pyr = enc(noise_erp(64, 2).to_tensor());
  REQUIRE(pyr.levels.size() == 5);
  CHECK(pyr.scales == std::vector<Index>{2, 4, 8, 16, 32});
  CHECK(pyr.deepest().shape() == Shape{32, 2, 4});
  CHECK(pyr.levels[0].shape() == Shape{8, 32, 64});
  CHECK_THROWS_AS(enc(TensorF::zeros({3, 48, 96})), UsageError);
}

TEST_CASE("a zero image with zero biases gives zero features") {
  Rng rng(3);
  ErpEncoderConfig cfg;
  cfg.widths = default_encoder_widths(16, 3);
  cfg.stages = 3;
  const ErpEncoder<float> enc(cfg, rng);
  const auto pyr = enc(TensorF::zeros({3, 32, 64}));
  for (const auto& level : pyr.levels)
    for (float v : level.values()) CHECK(v == 0.0f);
}

TEST_CASE("ERP encoder parameter count") {
  ErpEncoderConfig cfg;
  cfg.widths = default_encoder_widths(64, 4);
  // 16*3*9+16, then (16,16), (16,32), (32,64), (64,64) stages of two convs.
  CHECK(erp_encoder_parameter_count(cfg) == 148256);
  Rng rng(0);
  const ErpEncoder<float> enc(cfg, rng);
  ParamList<float> params;
  enc.collect("erp", params);
  CHECK(parameter_count(params) == 148256);
}

TEST_CASE("farthest point sampling closed forms") {
  SUBCASE("points on a line") {
    PointCoords p(4, 3);
    p << 0, 0, 0, 1, 0, 0, 3, 0, 0, 10, 0, 0;
    CHECK(farthest_point_sample(p, 4) == std::vector<Index>{0, 3, 2, 1});
  }
  SUBCASE("square corners: diagonal first, then the lower-index tie") {
    PointCoords p(4, 3);
    p << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
    CHECK(farthest_point_sample(p, 3) == std::vector<Index>{0, 2, 1});
  }
  PointCoords p(3, 3);
  p.setZero();
  CHECK_THROWS_AS(farthest_point_sample(p, 4), UsageError);
}

TEST_CASE("sampling matches the brute-force oracles") {
  Rng rng(17);
  const auto p = random_points(200, rng);
  const Eigen::MatrixX3d pc = p;
  CHECK(farthest_point_sample(p, 40) == oracle::farthest_point_sample(pc, 40));
  const std::vector<Index> centers = {0, 7, 99, 199};
  const auto nbr = knn_indices(p, std::span<const Index>(centers), 6);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const auto want = oracle::knn(pc, pc.row(centers[c]).transpose(), 6);
    const std::vector<Index> got(nbr.begin() + static_cast<long>(c * 6), nbr.begin() + static_cast<long>(c * 6 + 6));
    CHECK(got == want);
    CHECK(got[0] == centers[c]);
  }
}

TEST_CASE("transition with knn = 1 and an identity MLP permutes the input") {
  Rng rng(8);
  const Index m = 12, c = 4;
  PointFeatureSet<double> in;
  in.coords = random_points(m, rng);
  std::vector<double> f(static_cast<std::size_t>(m * c));
  for (auto& v : f) v = rng.uniform(0.1, 1.0);
  in.features = TensorD::from_vector({m, c}, f);
  in.source.resize(m);
  std::iota(in.source.begin(), in.source.end(), Index{0});
  Linear<double> mlp;
  std::vector<double> w(static_cast<std::size_t>((3 + c) * c), 0.0);
  for (Index k = 0; k < c; ++k) w[static_cast<std::size_t>((3 + k) * c + k)] = 1.0;
  mlp.weight = TensorD::from_vector({3 + c, c}, w);
  TransitionOptions opts;
  opts.knn = 1;
  const auto out = transition_down(in, m, mlp, opts);
  const auto order = farthest_point_sample(in.coords, m);
  REQUIRE(out.size() == m);
  for (Index r = 0; r < m; ++r) {
    const Index src = order[static_cast<std::size_t>(r)];
    CHECK(out.source[static_cast<std::size_t>(r)] == src);
    CHECK((out.coords.row(r) - in.coords.row(src)).norm() == 0.0);
    for (Index k = 0; k < c; ++k) CHECK(out.features[r * c + k] == in.features[src * c + k]);
  }
}

TEST_CASE("constant features and zeroed positions stay constant") {
  Rng rng(9);
  PointFeatureSet<double> in;
  in.coords = random_points(16, rng);
  in.features = TensorD::full({16, 5}, 0.4);
  in.source.resize(16);
  const auto mlp = Linear<double>::make(8, 5, true, rng);
  TransitionOptions opts;
  opts.knn = 4;
  opts.zero_positions = true;
  const auto out = transition_down(in, 4, mlp, opts);
  for (Index r = 1; r < 4; ++r)
    for (Index k = 0; k < 5; ++k) CHECK(out.features[r * 5 + k] == doctest::Approx(out.features[k]));
}

TEST_CASE("point encoder output sizes") {
  const auto pts = level_points<float>(4, 5);
  REQUIRE(pts.size() == 5120);
  const std::pair<int, Index> cases[] = {{3, 80}, {2, 320}, {4, 20}};
  for (auto [blocks, want] : cases) {
    Rng rng(static_cast<std::uint64_t>(blocks));
    PointEncoderConfig cfg;
    cfg.blocks = blocks;
    const PointEncoder<float> enc(cfg, rng);
    CHECK(enc.output_size(5120) == want);
    const auto out = enc(pts);
    CHECK(out.size() == want);
    CHECK(out.features.shape() == Shape{want, 32});
    // Sampled centers are a subset of the original face centers.
    std::set<Index> uniq(out.source.begin(), out.source.end());
    CHECK(static_cast<Index>(uniq.size()) == want);
    for (Index r = 0; r < want; ++r) {
      const Index s = out.source[static_cast<std::size_t>(r)];
      CHECK((out.coords.row(r) - pts.coords().row(s).cast<double>()).norm() < 1e-12);
    }
  }
  Rng rng(0);
  PointEncoderConfig cfg;
  cfg.blocks = 3;
  const PointEncoder<float> enc(cfg, rng);
  CHECK_THROWS_AS(enc.output_size(20), ConfigError);
}

TEST_CASE("zeroed positions and a flat color give identical point features") {
  Rng rng(4);
  auto pts = level_points<float>(2, 1);
  pts.points.rightCols<3>().setConstant(0.5f);
  PointEncoderConfig cfg;
  cfg.blocks = 2;
  cfg.zero_positions = true;
  const PointEncoder<float> enc(cfg, rng);
  const auto out = enc(pts);
  for (Index r = 1; r < out.size(); ++r)
    for (Index k = 0; k < 32; ++k) CHECK(out.features[r * 32 + k] == doctest::Approx(out.features[k]));
}

TEST_CASE("point encoder gradients on a 20-point toy") {
  Rng rng(6);
  PointEncoderConfig cfg;
  cfg.channels = 4;
  cfg.blocks = 1;
  cfg.knn = 3;
  const PointEncoder<double> enc(cfg, rng);
  ParamList<double> params;
  enc.collect("points", params);
  std::vector<TensorD> leaves;
  for (auto& p : params) leaves.push_back(p.tensor);
  const auto pts = level_points<double>(0, 3);
  std::vector<double> wv(5 * 4);
  for (auto& v : wv) v = rng.uniform(-1, 1);
  const auto weights = TensorD::from_vector({5, 4}, wv);
  const auto r = finite_diff_gradcheck([&] { return sum_all(mul(enc(pts).features, weights)); }, leaves);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-4);
}
