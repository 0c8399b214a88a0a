#include <cmath>

#include "doctest.h"
#include "elite360/depth.hpp"
#include "elite360/verify/oracles.hpp"

using namespace e360;

namespace {

DepthMap random_depth(Index h, Index w, Rng& rng, double lo = 0.5, double hi = 5.0) {
  DepthMap d(h, w);
  for (Index i = 0; i < d.size(); ++i) d.data()[i] = static_cast<float>(rng.uniform(lo, hi));
  return d;
}

ValidMask random_mask(Index h, Index w, Rng& rng, double keep = 0.8) {
  ValidMask m(h, w);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < keep;
  return m;
}

TensorD as_tensor(const DepthMap& d) {
  return TensorD::from_vector({d.rows(), d.cols()}, std::vector<double>(d.data(), d.data() + d.size()), true);
}

oracle::Mat as_mat(const DepthMap& d) { return d.cast<double>().matrix(); }

ValidMask all_valid(Index h, Index w) { return ValidMask::Constant(h, w, true); }

}  // namespace

TEST_CASE("decoder output shape and range") {
  Rng rng(1);
  ErpFeaturePyramid<float> pyr;
  const std::vector<Index> widths = {4, 4, 8};
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const Index s = Index{2} << k;
    pyr.levels.push_back(TensorF::full({widths[k], 16 / s, 32 / s}, 0.1f));
    pyr.scales.push_back(s);
  }
  const DepthDecoder<float> dec(widths, 8, 10.0, rng);
  const auto out = dec(TensorF::full({8, 2, 4}, 0.2f), pyr);
  CHECK(out.shape() == Shape{16, 32});
  for (float v : out.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 10.0f);
  }
}

TEST_CASE("decoder head saturates to max_depth") {
  Rng rng(2);
  ErpFeaturePyramid<float> pyr;
  pyr.levels = {TensorF::full({2, 4, 8}, 1.0f), TensorF::full({2, 2, 4}, 1.0f)};
  pyr.scales = {2, 4};
  DepthDecoder<float> dec({2, 2}, 2, 7.5, rng);
  ParamList<float> params;
  dec.collect("d", params);
  CHECK(params.back().name == "d.head.bias");
  dec.head().bias.mutable_values()[0] = 100.0f;
  const auto hi = dec(TensorF::full({2, 2, 4}, 1.0f), pyr);
  CHECK(hi.shape() == Shape{8, 16});
  for (float v : hi.values()) CHECK(v == doctest::Approx(7.5f));
  dec.head().bias.mutable_values()[0] = -100.0f;
  const auto lo = dec(TensorF::full({2, 2, 4}, 1.0f), pyr);
  for (float v : lo.values()) CHECK(v < 1e-30f);
}

TEST_CASE("BerHu closed forms") {
  CHECK(oracle::berhu(0.1, 0.2) == doctest::Approx(0.1));
  CHECK(oracle::berhu(0.5, 0.2) == doctest::Approx(0.725));
  DepthMap gt(1, 2), pred(1, 2);
  gt << 1.0f, 1.0f;
  pred << 1.5f, 0.0f;
  ValidMask mask(1, 2);
  mask << true, false;
  CHECK(berhu_loss(as_tensor(pred), gt, mask).item() == doctest::Approx(0.725).epsilon(1e-6));
}

TEST_CASE("BerHu branches meet at the threshold") {
  const double c = kBerhuThreshold;
  for (double sign : {1.0, -1.0}) {
    for (double eps : {-1e-9, 0.0, 1e-9}) {
      auto x = TensorD::from_vector({1}, {sign * (c + eps)}, true);
      const auto y = berhu(x, c);
      CHECK(y.item() == doctest::Approx(c).epsilon(1e-8));
      backward(sum_all(y));
      CHECK(x.grad()[0] == doctest::Approx(sign).epsilon(1e-7));
    }
  }
}

TEST_CASE("gradient loss on a ramp") {
  DepthMap gt(3, 4), pred = DepthMap::Zero(3, 4);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j) gt(i, j) = static_cast<float>(j);
  // Every horizontal residual is -1: (1 + 0.04) / 0.4; vertical ones are 0.
  CHECK(gradient_loss(as_tensor(pred), gt, all_valid(3, 4)).item() == doctest::Approx(2.6));
  const DepthMap flat = DepthMap::Constant(3, 4, 2.0f);
  CHECK(gradient_loss(as_tensor(DepthMap::Constant(3, 4, 5.0f)), flat, all_valid(3, 4)).item() == 0.0);
  ValidMask lonely = ValidMask::Constant(3, 4, false);
  lonely(0, 0) = lonely(2, 2) = true;
  CHECK_THROWS_AS(gradient_loss(as_tensor(pred), gt, lonely), UsageError);
}

TEST_CASE("losses match the scalar-loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto pred = random_depth(8, 16, rng), gt = random_depth(8, 16, rng);
    const auto mask = random_mask(8, 16, rng);
    const auto t = total_loss(as_tensor(pred), gt, mask);
    const double b = oracle::depth_loss(as_mat(pred), as_mat(gt), mask, kBerhuThreshold);
    const double g = oracle::gradient_loss(as_mat(pred), as_mat(gt), mask, kBerhuThreshold);
    CHECK(std::abs(t.berhu.item() - b) < 1e-9);
    CHECK(std::abs(t.grad.item() - g) < 1e-9);
    CHECK(std::abs(t.total.item() - (b + g)) < 1e-9);
  }
}

TEST_CASE("invalid pixels do not affect the loss") {
  Rng rng(4);
  const auto gt = random_depth(6, 10, rng);
  auto pred = random_depth(6, 10, rng);
  const auto mask = random_mask(6, 10, rng, 0.6);
  const double before = total_loss(as_tensor(pred), gt, mask).total.item();
  for (Index i = 0; i < pred.size(); ++i)
    if (!mask.data()[i]) pred.data()[i] = 1e3f;
  CHECK(total_loss(as_tensor(pred), gt, mask).total.item() == before);
  CHECK_THROWS_AS(berhu_loss(as_tensor(pred), gt, ValidMask::Constant(6, 10, false)), UsageError);
}

TEST_CASE("metrics closed forms") {
  Rng rng(5);
  const auto gt = random_depth(4, 8, rng);
  const DepthMap pred = 2.0f * gt;
  const auto m = compute_metrics(pred, gt, all_valid(4, 8));
  CHECK(m.abs_rel == doctest::Approx(1.0));
  CHECK(m.d1 == 0.0);
  CHECK(m.d2 == 0.0);
  // Ratio 2 exceeds 1.25^3 = 1.953125 as well.
  CHECK(m.d3 == 0.0);
  const auto near = compute_metrics(DepthMap(1.9f * gt), gt, all_valid(4, 8));
  CHECK(near.d2 == 0.0);
  CHECK(near.d3 == 1.0);
  CHECK(m.valid_px == 32);
  const auto same = compute_metrics(gt, gt, all_valid(4, 8));
  CHECK(same.rmse == 0.0);
  CHECK(same.d1 == 1.0);

  DepthMap with_zero = gt;
  with_zero(0, 0) = 0.0f;
  const auto skipped = compute_metrics(gt, with_zero, all_valid(4, 8));
  CHECK(skipped.valid_px == 31);
  CHECK(skipped.skipped_nonpositive == 1);

  const auto j = metrics_to_json(m);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"abs_rel", "sq_rel", "rmse", "d1", "d2", "d3", "valid_px"});
  CHECK_THROWS_AS(compute_metrics(gt, gt, ValidMask::Constant(4, 8, false)), UsageError);
}

TEST_CASE("metrics match the scalar-loop oracle") {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const auto pred = random_depth(8, 16, rng), gt = random_depth(8, 16, rng);
    const auto mask = random_mask(8, 16, rng);
    const auto m = compute_metrics(pred, gt, mask);
    const auto o = oracle::metrics(as_mat(pred), as_mat(gt), mask, 1.25);
    CHECK(std::abs(m.abs_rel - o.abs_rel) < 1e-9);
    CHECK(std::abs(m.sq_rel - o.sq_rel) < 1e-9);
    CHECK(std::abs(m.rmse - o.rmse) < 1e-9);
    CHECK(std::abs(m.d1 - o.d1) < 1e-9);
    CHECK(std::abs(m.d2 - o.d2) < 1e-9);
    CHECK(std::abs(m.d3 - o.d3) < 1e-9);
    CHECK(m.valid_px == o.valid);
    CHECK(m.d1 <= m.d2);
    CHECK(m.d2 <= m.d3);
  }
}

TEST_CASE("Adam") {
  SUBCASE("a zero gradient leaves parameters alone") {
    auto p = TensorD::from_vector({3}, {1, 2, 3}, true);
    Adam<double> opt({p});
    p.zero_grad();
    opt.step();
    CHECK(p[0] == 1.0);
    CHECK(p[2] == 3.0);
  }
  SUBCASE("the first step moves each coordinate by about lr") {
    auto p = TensorD::from_vector({3}, {1, 2, 3}, true);
    AdamOptions o;
    o.lr = 0.01;
    Adam<double> opt({p}, o);
    backward(sum_all(mul(TensorD::from_vector({3}, {5, -0.1, 300}), p)));
    opt.step();
    CHECK(p[0] == doctest::Approx(1 - 0.01).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(2 + 0.01).epsilon(1e-6));
    CHECK(p[2] == doctest::Approx(3 - 0.01).epsilon(1e-6));
    CHECK(opt.steps_taken() == 1);
    // step() clears the gradients it used.
    for (double g : p.grad()) CHECK(g == 0.0);
  }
  SUBCASE("a quadratic bowl descends") {
    auto p = TensorD::from_vector({2}, {3, -2}, true);
    AdamOptions o;
    o.lr = 0.05;
    Adam<double> opt({p}, o);
    double prev = 1e9;
    for (int k = 0; k < 200; ++k) {
      const auto loss = sum_all(mul(p, p));
      if (k < 40) CHECK(loss.item() < prev);
      prev = loss.item();
      backward(loss);
      opt.step();
    }
    CHECK(prev < 0.01 * 13.0);
  }
}
