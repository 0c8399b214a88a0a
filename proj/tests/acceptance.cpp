// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "elite360/b2f.hpp"
#include "elite360/depth.hpp"
#include "elite360/encoders.hpp"
#include "elite360/icosap.hpp"
#include "elite360/model.hpp"
#include "elite360/scene.hpp"
#include "elite360/sphere.hpp"
#include "elite360/verify/audit.hpp"
#include "elite360/verify/oracles.hpp"

using namespace e360;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << " [failed: " << what << "]";
    }
  }
};

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from_vector(std::move(shape), std::move(v));
}

TensorD unit_rows(Index n, Rng& rng) {
  PointCoords p(n, 3);
  for (Index i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) p(i, a) = rng.uniform(-1, 1);
    p.row(i).normalize();
  }
  return TensorD::from_matrix(p);
}

ImageF noise_erp(Index h, std::uint64_t seed) {
  Rng rng(seed);
  ImageF img(3, h, 2 * h);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "e360_acceptance" / name;
  fs::remove_all(dir);
  return dir;
}

// --- criteria ------------------------------------------------------------------

void icosahedron_counts(Outcome& o) {
  const auto t0 = Clock::now();
  const std::pair<Index, Index> want[] = {{20, 12}, {80, 42}, {320, 162}};
  for (int l = 0; l <= 5; ++l) {
    const auto mesh = build_icosap_mesh(l);
    if (l < 3)
      o.require(mesh.face_count() == want[l].first && mesh.vertex_count() == want[l].second,
                "counts at l=" + std::to_string(l));
    o.require(mesh.euler_characteristic() == 2, "Euler characteristic at l=" + std::to_string(l));
  }
  const auto set = face_center_point_set(build_icosap_mesh(4), noise_erp(64, 1));
  o.require(set.size() == 5120, "l=4 rows");
  const double secs = seconds_since(t0);
  o.require(secs < 5.0, "runtime");
  o.detail << "l4 rows " << set.size() << ", " << secs << " s";
}

void point_encoder_sizes(Outcome& o) {
  const auto f = face_center_point_set(build_icosap_mesh(4), noise_erp(64, 2));
  const std::pair<int, Index> cases[] = {{3, 80}, {2, 320}, {4, 20}};
  for (auto [blocks, want] : cases) {
    Rng rng(static_cast<std::uint64_t>(blocks));
    PointEncoderConfig cfg;
    cfg.blocks = blocks;
    const PointEncoder<float> enc(cfg, rng);
    const Index n = enc(f).size();
    o.require(n == want, "blocks " + std::to_string(blocks));
    o.detail << "blocks " << blocks << " -> N " << n << "; ";
  }
}

void geometry_round_trip(Outcome& o) {
  const auto t0 = Clock::now();
  double pix = 0;
  for (Index i = 0; i < 64; ++i)
    for (Index j = 0; j < 128; ++j) {
      const auto p = dir_to_pixel(pixel_to_dir(i, j, 64, 128), 64, 128);
      pix = std::max({pix, std::abs(p.row - i), std::abs(p.col - j)});
    }
  std::mt19937_64 eng(2024);
  std::normal_distribution<double> n01;
  double ang = 0;
  for (int k = 0; k < 10000; ++k) {
    SphereDir d(n01(eng), n01(eng), n01(eng));
    d.normalize();
    const auto p = dir_to_pixel(d, 64, 128);
    const auto back = pixel_coord_to_dir(p.row, p.col, 64, 128);
    ang = std::max(ang, std::atan2(d.cross(back).norm(), d.dot(back)));
  }
  const double secs = seconds_since(t0);
  o.require(pix < 1e-9, "pixel round trip");
  o.require(ang < 1e-9, "direction round trip");
  o.require(secs < 2.0, "runtime");
  o.detail << "pixel err " << pix << ", angle err " << ang << " rad, " << secs << " s";
}

void gradient_audits(Outcome& o) {
  const auto t0 = Clock::now();
  audit::Options opts;  // seeds 0..4, tolerance 1e-4, double precision
  const auto r = audit::run("all", opts);
  const double secs = seconds_since(t0);
  double worst = 0;
  for (const auto& c : r.checks) {
    if (c.tolerance == opts.tolerance) worst = std::max(worst, c.max_error);
    o.require(c.passed, c.name);
  }
  o.require(secs < 60.0, "runtime");
  o.detail << r.checks.size() << " checks, worst rel err " << worst << ", " << secs << " s";
}

void oracle_equivalence(Outcome& o) {
  Rng rng(55);
  // Fusion on h = 2, w = 3, N = 5, C = d = 8.
  const auto fe = random_tensor({6, 8}, rng), fi = random_tensor({5, 8}, rng);
  const auto dirs = TensorD::from_matrix(erp_direction_grid(2, 3));
  const auto coords = unit_rows(5, rng);
  const auto w = B2FWeights<double>::make(8, 8, rng);
  const oracle::FusionWeights ow{w.sq.matrix(), w.sk.matrix(), w.sv.matrix(), w.sp.matrix(), w.dq.matrix(),
                                 w.dk.matrix(), w.dv.matrix(), w.gate_sa.matrix(), w.gate_da.matrix()};
  const oracle::Mat want = oracle::gated_fusion(
      oracle::semantic_attention(fe.matrix(), fi.matrix(), ow),
      oracle::distance_attention(fe.matrix(), fi.matrix(), dirs.matrix(), coords.matrix(), ow), ow);
  const double fusion_err = (b2f_forward(fe, fi, dirs, coords, w).matrix() - want).cwiseAbs().maxCoeff();
  o.require(fusion_err < 1e-6, "fusion");

  const auto a = random_tensor({17, 23}, rng), b = random_tensor({23, 11}, rng);
  const double mm_err = (matmul(a, b).matrix() - oracle::matmul(a.matrix(), b.matrix())).cwiseAbs().maxCoeff();
  o.require(mm_err < 1e-5, "matmul");

  double conv_err = 0;
  for (Index stride : {1, 2}) {
    const auto x = random_tensor({3, 16, 16}, rng), k = random_tensor({5, 3, 3, 3}, rng), bias = random_tensor({5}, rng);
    Index oh = 0, ow2 = 0;
    const auto ref = oracle::conv2d({x.values().begin(), x.values().end()}, 3, 16, 16,
                                    {k.values().begin(), k.values().end()}, 5, 3, 3,
                                    {bias.values().begin(), bias.values().end()}, stride, 1, oh, ow2);
    const auto got = conv2d(x, k, bias, stride, 1);
    if (got.numel() != static_cast<Index>(ref.size())) conv_err = 1e9;
    else
      for (Index i = 0; i < got.numel(); ++i) conv_err = std::max(conv_err, std::abs(got[i] - ref[static_cast<std::size_t>(i)]));
  }
  o.require(conv_err < 1e-5, "conv2d");

  double metric_err = 0, loss_err = 0;
  for (int trial = 0; trial < 5; ++trial) {
    DepthMap pred(16, 32), gt(16, 32);
    ValidMask mask(16, 32);
    for (Index i = 0; i < pred.size(); ++i) {
      pred.data()[i] = static_cast<float>(rng.uniform(0.5, 8));
      gt.data()[i] = static_cast<float>(rng.uniform(0.5, 8));
      mask.data()[i] = rng.uniform() < 0.85;
    }
    const oracle::Mat pm = pred.cast<double>().matrix(), gm = gt.cast<double>().matrix();
    const auto m = compute_metrics(pred, gt, mask);
    const auto r = oracle::metrics(pm, gm, mask, 1.25);
    for (double e : {m.abs_rel - r.abs_rel, m.sq_rel - r.sq_rel, m.rmse - r.rmse, m.d1 - r.d1, m.d2 - r.d2,
                     m.d3 - r.d3, static_cast<double>(m.valid_px - r.valid)})
      metric_err = std::max(metric_err, std::abs(e));
    const auto pt = TensorD::from_vector({16, 32}, std::vector<double>(pm.data(), pm.data() + pm.size()));
    const auto t = total_loss(pt, gt, mask);
    loss_err = std::max(loss_err, std::abs(t.berhu.item() - oracle::depth_loss(pm, gm, mask, kBerhuThreshold)));
    loss_err = std::max(loss_err, std::abs(t.grad.item() - oracle::gradient_loss(pm, gm, mask, kBerhuThreshold)));
  }
  o.require(metric_err < 1e-9, "metrics");
  o.require(loss_err < 1e-9, "losses");
  o.detail << "fusion " << fusion_err << ", matmul " << mm_err << ", conv " << conv_err << ", metrics " << metric_err
           << ", losses " << loss_err;
}

void analytic_invariants(Outcome& o) {
  Rng rng(77);
  const Index h = 4, w = 8, n = 20, c = 16;
  const auto fe = random_tensor({h * w, c}, rng, -3, 3), fi = random_tensor({n, c}, rng, -3, 3);
  const auto dirs = TensorD::from_matrix(erp_direction_grid(h, w));
  const auto coords = unit_rows(n, rng);
  const auto wt = B2FWeights<double>::make(c, c, rng);

  double row_err = 0;
  for (const auto& a : {semantic_affinity_attention(fe, fi, wt).attention,
                        distance_affinity_attention(fe, fi, dirs, coords, wt).attention})
    for (Index p = 0; p < h * w; ++p) {
      double s = 0;
      for (Index k = 0; k < n; ++k) s += a[p * n + k];
      row_err = std::max(row_err, std::abs(s - 1));
    }
  o.require(row_err <= 1e-6, "attention rows");

  bool in_range = true;
  for (const auto& e : {spatial_proximity(dirs, coords), semantic_distance_embedding(fe, fi, wt.dq, wt.dk)})
    for (Index i = 0; i < e.numel(); ++i) in_range = in_range && e[i] > 0 && e[i] <= 1;
  o.require(in_range, "embedding range");

  const auto sa = semantic_affinity_attention(fe, fi, wt).output;
  const auto da = distance_affinity_attention(fe, fi, dirs, coords, wt).output;
  const auto g = gated_fusion(sa, da, random_tensor({2 * c, c}, rng, -20, 20), random_tensor({2 * c, c}, rng, -20, 20));
  bool gates_ok = true;
  for (const auto& t : {g.g_sa, g.g_da})
    for (Index i = 0; i < t.numel(); ++i) gates_ok = gates_ok && t[i] >= 0 && t[i] <= 1;
  o.require(gates_ok, "gate range");

  // Value and slope on both sides of |x| = c.
  const double thr = kBerhuThreshold;
  double berhu_err = 0;
  for (double sign : {1.0, -1.0}) {
    auto lo = [&](double x) { return std::abs(x); };
    auto hi = [&](double x) { return (x * x + thr * thr) / (2 * thr); };
    const double x = sign * thr;
    berhu_err = std::max(berhu_err, std::abs(lo(x) - hi(x)));
    berhu_err = std::max(berhu_err, std::abs(sign - x / thr));
    auto xt = TensorD::from_vector({1}, {x}, true);
    const auto y = berhu(xt, thr);
    backward(sum_all(y));
    berhu_err = std::max({berhu_err, std::abs(y.item() - thr), std::abs(xt.grad()[0] - sign)});
    auto xa = TensorD::from_vector({1}, {x * (1 + 1e-7)}, true);
    backward(sum_all(berhu(xa, thr)));
    berhu_err = std::max(berhu_err, std::abs(xa.grad()[0] - sign) - 1e-6);
  }
  o.require(berhu_err < 1e-9, "BerHu branches");

  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  const auto base = b2f_forward(fe, fi, dirs, coords, wt);
  const auto permuted = b2f_forward(fe, gather_rows(fi, std::span<const Index>(perm)), dirs,
                                    gather_rows(coords, std::span<const Index>(perm)), wt);
  const double perm_err = (base.matrix() - permuted.matrix()).cwiseAbs().maxCoeff();
  o.require(perm_err <= 1e-6, "permutation invariance");
  o.detail << "row sum err " << row_err << ", berhu err " << berhu_err << ", permutation err " << perm_err;
}

void box_depth(Outcome& o) {
  const BoxScene scene;
  const auto frame = synth_box_scene(scene, 64, 128);
  double worst = 0;
  for (Index i = 0; i < 64; ++i)
    for (Index j = 0; j < 128; ++j)
      worst = std::max(worst, std::abs(frame.depth(i, j) - oracle::ray_march_box_depth(pixel_to_dir(i, j, 64, 128),
                                                                                      scene.half_extents)));
  o.require(worst < 1e-4, "ray march");
  o.detail << "max |depth - ray march| " << worst << " m";
}

TrainConfig desk_config(const fs::path& out) {
  TrainConfig c;
  c.model.height = 64;
  c.model.width = 128;
  c.model.channels = 32;
  c.model.level = 3;
  c.model.blocks = 3;  // 1280 points -> 20
  c.model.seed = 0;
  c.model.max_depth = 10.0;
  c.steps = 5000;
  c.lr = 1e-4;
  c.log_every = 1000;
  c.out = out;
  return c;
}

void overfit(Outcome& o) {
  const auto cfg_a = desk_config(scratch("overfit_a"));
  const auto cfg_b = desk_config(scratch("overfit_b"));
  const auto t0 = Clock::now();
  const auto a = train_overfit(cfg_a);
  const double secs = seconds_since(t0);
  const auto b = train_overfit(cfg_b);
  const double rmse_cap = 0.05 * cfg_a.model.max_depth;
  o.require(a.metrics.d1 >= 0.95, "d1");
  o.require(a.metrics.rmse <= rmse_cap, "rmse");
  o.require(a.steps <= 5000, "step budget");
  o.require(secs < 15 * 60, "runtime");
  const bool same_pred = a.prediction.rows() == b.prediction.rows() &&
                         std::equal(a.prediction.data(), a.prediction.data() + a.prediction.size(),
                                    b.prediction.data(), [](float x, float y) {
                                      return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
                                    });
  bool same_files = true;
  for (const char* f : {"weights.e36w", "metrics.json", "pred.pfm", "log.csv"})
    same_files = same_files && slurp(cfg_a.out / f) == slurp(cfg_b.out / f);
  o.require(same_pred && same_files, "bit-identical rerun");
  o.detail << "d1 " << a.metrics.d1 << ", rmse " << a.metrics.rmse << " m (cap " << rmse_cap << "), abs_rel "
           << a.metrics.abs_rel << ", " << a.steps << " steps in " << secs << " s, rerun identical "
           << (same_pred && same_files ? "yes" : "no");
}

void ablation(Outcome& o) {
  std::vector<std::string> key_sets;
  for (const char* mode : {"b2f", "add", "concat"}) {
    auto cfg = desk_config(scratch(std::string("ablation_") + mode));
    cfg.model.fusion = parse_fusion_mode(mode);
    cfg.steps = 500;
    cfg.log_every = 0;
    double first = 0, last = 0;
    bool finite = true;
    try {
      const auto r = train_overfit(cfg);
      first = r.first_loss;
      last = r.final_loss;
      finite = std::isfinite(first) && std::isfinite(last);
      // Every logged loss must be finite.
      std::ifstream log(cfg.out / "log.csv");
      std::string line;
      std::getline(log, line);
      while (std::getline(log, line)) {
        std::istringstream ss(line);
        std::string step, total;
        std::getline(ss, step, ',');
        std::getline(ss, total, ',');
        finite = finite && std::isfinite(std::stod(total));
      }
    } catch (const NumericError& e) {
      finite = false;
      o.detail << mode << " diverged: " << e.what() << "; ";
    }
    o.require(finite && last < first, std::string(mode) + " training");
    const auto j = nlohmann::json::parse(slurp(cfg.out / "metrics.json"));
    std::string keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys += it.key() + ",";
    key_sets.push_back(keys);
    o.detail << mode << ": loss " << first << " -> " << last << ", d1 " << j.value("d1", -1.0) << ", rmse "
             << j.value("rmse", -1.0) << "; ";
  }
  o.require(std::all_of(key_sets.begin(), key_sets.end(), [&](const std::string& k) { return k == key_sets[0]; }),
            "metric keys");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"icosahedron counts", icosahedron_counts},
      {"point encoder sizes", point_encoder_sizes},
      {"geometry round trip", geometry_round_trip},
      {"gradient audits", gradient_audits},
      {"oracle equivalence", oracle_equivalence},
      {"analytic invariants", analytic_invariants},
      {"box-scene depth", box_depth},
      {"overfit desk config", overfit},
      {"fusion ablation", ablation},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      criteria[k].second(o);
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.passed) ++failures;
    std::printf("%s %zu %s: %s\n", o.passed ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
