#include "elite360/verify/audit.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "elite360/b2f.hpp"
#include "elite360/errors.hpp"
#include "elite360/gradcheck.hpp"
#include "elite360/model.hpp"
#include "elite360/nn.hpp"
#include "elite360/verify/oracles.hpp"

namespace e360::audit {

bool Report::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

nlohmann::ordered_json Report::to_json() const {
  nlohmann::ordered_json j;
  j["scope"] = scope;
  j["passed"] = passed();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["passed"] = c.passed;
    e["max_error"] = c.max_error;
    e["tolerance"] = c.tolerance;
    if (!c.detail.empty()) e["detail"] = c.detail;
    arr.push_back(e);
  }
  j["checks"] = arr;
  return j;
}

Op parse_op(const std::string& name) {
  for (int k = 1; k < static_cast<int>(Op::kCount); ++k)
    if (op_name(static_cast<Op>(k)) == name) return static_cast<Op>(k);
  throw UsageError("unknown primitive '" + name + "'");
}

namespace {

TensorD rand_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from_vector(std::move(shape), std::move(v), true);
}

// Values bounded away from zero, for kinked primitives.
TensorD rand_away_from_zero(Shape shape, Rng& rng, double gap = 0.05) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) {
    const double u = rng.uniform(-1.0, 1.0);
    x = (u < 0 ? -1.0 : 1.0) * (gap + std::abs(u));
  }
  return TensorD::from_vector(std::move(shape), std::move(v), true);
}

// Random weighting so every output coordinate matters to the scalar; a plain
// sum would hide errors in shift-invariant maps such as softmax.
std::function<TensorD()> weighted(std::function<TensorD()> f, Rng& rng) {
  const TensorD probe = f();
  std::vector<double> w(static_cast<std::size_t>(probe.numel()));
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  const TensorD weights = TensorD::from_vector(probe.shape(), std::move(w));
  return [f = std::move(f), weights] { return sum_all(mul(f(), weights)); };
}

struct Case {
  std::string name;
  // Builds leaves from the rng and returns the (unweighted) function.
  std::function<std::function<TensorD()>(Rng&, std::vector<TensorD>&)> build;
};

Check run_gradcheck_case(const Case& c, const Options& options) {
  Check check;
  check.name = c.name;
  check.tolerance = options.tolerance;
  check.passed = true;
  GradcheckOptions go;
  go.tolerance = options.tolerance;
  for (std::uint64_t seed : options.seeds) {
    Rng rng(seed * 7919 + 17);
    std::vector<TensorD> leaves;
    auto f = weighted(c.build(rng, leaves), rng);
    const auto r = finite_diff_gradcheck(f, leaves, go);
    check.max_error = std::max(check.max_error, r.max_rel_error);
    if (!r.passed) {
      check.passed = false;
      std::ostringstream os;
      os << "seed " << seed << ": worst leaf " << r.worst_leaf << " index " << r.worst_index;
      if (!r.nonfinite.empty()) os << ", " << r.nonfinite.size() << " non-finite probes";
      check.detail = os.str();
    }
  }
  return check;
}

std::vector<Case> tensor_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, auto build) { cases.push_back({std::move(name), build}); };
  add_case("matmul", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 4}, r), rand_leaf({4, 2}, r)};
    return [L] { return matmul(L[0], L[1]); };
  });
  add_case("transpose", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 4}, r)};
    return [L] { return transpose(L[0]); };
  });
  add_case("reshape", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 4}, r)};
    return [L] { return reshape(L[0], {2, 6}); };
  });
  add_case("add", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 4}, r), rand_leaf({4}, r)};
    return [L] { return add(L[0], L[1]); };
  });
  add_case("sub", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3, 4}, r), rand_leaf({3, 4}, r)};
    return [L] { return sub(L[0], L[1]); };
  });
  add_case("mul", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 4}, r), rand_leaf({3, 4}, r)};
    return [L] { return mul(L[0], L[1]); };
  });
  add_case("mul_broadcast", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 4}, r), rand_leaf({4}, r)};
    return [L] { return mul(L[0], L[1]); };
  });
  add_case("neg", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({5}, r)};
    return [L] { return neg(L[0]); };
  });
  add_case("scale", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({5}, r)};
    return [L] { return scale(L[0], -1.7); };
  });
  add_case("add_scalar", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({5}, r)};
    return [L] { return add_scalar(L[0], 0.3); };
  });
  add_case("exp", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3}, r)};
    return [L] { return exp(L[0]); };
  });
  add_case("abs", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_away_from_zero({2, 3}, r)};
    return [L] { return abs(L[0]); };
  });
  add_case("sigmoid", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3}, r, -3, 3)};
    return [L] { return sigmoid(L[0]); };
  });
  add_case("relu", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_away_from_zero({2, 3}, r)};
    return [L] { return relu(L[0]); };
  });
  add_case("berhu", [](Rng& r, std::vector<TensorD>& L) {
    // Magnitudes on both sides of c = 0.2, none at the kink at 0.
    L = {rand_away_from_zero({3, 4}, r, 0.02)};
    return [L] { return berhu(L[0], 0.2); };
  });
  add_case("sum_axis0", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3, 4}, r)};
    return [L] { return sum(L[0], 0); };
  });
  add_case("sum_lastaxis", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3, 4}, r)};
    return [L] { return sum(L[0], -1); };
  });
  add_case("sum_all", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3}, r)};
    return [L] { return scale(sum_all(L[0]), 1.0); };
  });
  add_case("mean_all", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3}, r)};
    return [L] { return mean_all(L[0]); };
  });
  add_case("concat", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3}, r), rand_leaf({2, 2}, r)};
    return [L] { return concat<double>({L[0], L[1]}, 1); };
  });
  add_case("expand", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 1, 4}, r)};
    return [L] { return expand(L[0], {3, 5, 4}); };
  });
  add_case("slice", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 5}, r)};
    return [L] { return slice(L[0], 1, 1, 4); };
  });
  add_case("softmax", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({3, 5}, r, -2, 2)};
    return [L] { return softmax_lastdim(L[0]); };
  });
  add_case("conv2d_stride1", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 5, 6}, r), rand_leaf({3, 2, 3, 3}, r), rand_leaf({3}, r)};
    return [L] { return conv2d(L[0], L[1], L[2], 1, 1); };
  });
  add_case("conv2d_stride2", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 6, 8}, r), rand_leaf({3, 2, 3, 3}, r)};
    return [L] { return conv2d(L[0], L[1], 2, 1); };
  });
  add_case("bilinear_up", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({2, 3, 4}, r)};
    return [L] { return bilinear_resize(L[0], 6, 8); };
  });
  add_case("bilinear_down", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({1, 6, 7}, r)};
    return [L] { return bilinear_resize(L[0], 4, 3); };
  });
  add_case("gather_rows", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({4, 3}, r)};
    return [L] {
      static const std::vector<Index> rows = {2, 0, 2, 3};
      return gather_rows(L[0], std::span<const Index>(rows));
    };
  });
  add_case("max_groups", [](Rng& r, std::vector<TensorD>& L) {
    L = {rand_leaf({6, 3}, r)};
    return [L] { return max_groups(L[0], 3); };
  });
  return cases;
}

// --- fusion toys --------------------------------------------------------

struct FusionToy {
  TensorD fe, fi, dirs, coords;
  B2FWeights<double> w;
};

TensorD rand_unit_rows(Index n, Rng& rng, double radius = 1.0) {
  std::vector<double> v;
  for (Index i = 0; i < n; ++i) {
    Eigen::Vector3d d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    d = d.normalized() * radius;
    v.insert(v.end(), {d.x(), d.y(), d.z()});
  }
  return TensorD::from_vector({n, 3}, std::move(v), true);
}

FusionToy make_toy(Index P, Index N, Index C, Index d, Rng& rng) {
  FusionToy t;
  t.fe = rand_leaf({P, C}, rng);
  t.fi = rand_leaf({N, C}, rng);
  t.dirs = rand_unit_rows(P, rng);
  t.coords = rand_unit_rows(N, rng, 0.85);
  t.w = B2FWeights<double>::make(C, d, rng);
  return t;
}

std::vector<TensorD> weight_leaves(const B2FWeights<double>& w) {
  return {w.sq, w.sk, w.sv, w.sp, w.dq, w.dk, w.dv, w.gate_sa, w.gate_da};
}

oracle::Mat as_mat(const TensorD& t) { return t.matrix(); }

oracle::FusionWeights as_oracle(const B2FWeights<double>& w) {
  return {as_mat(w.sq), as_mat(w.sk), as_mat(w.sv),      as_mat(w.sp),     as_mat(w.dq),
          as_mat(w.dk), as_mat(w.dv), as_mat(w.gate_sa), as_mat(w.gate_da)};
}

std::vector<Case> b2f_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, auto build) { cases.push_back({std::move(name), build}); };
  add_case("semantic_attention", [](Rng& r, std::vector<TensorD>& L) {
    auto t = make_toy(4, 3, 4, 4, r);
    L = {t.fe, t.fi, t.w.sq, t.w.sk, t.w.sv};
    return [t] { return semantic_affinity_attention(t.fe, t.fi, t.w).output; };
  });
  add_case("spatial_distance_embedding", [](Rng& r, std::vector<TensorD>& L) {
    auto t = make_toy(4, 3, 4, 4, r);
    L = {t.dirs, t.coords, t.w.sp};
    return [t] { return spatial_distance_embedding(t.dirs, t.coords, t.w.sp); };
  });
  add_case("semantic_distance_embedding", [](Rng& r, std::vector<TensorD>& L) {
    auto t = make_toy(4, 3, 4, 4, r);
    L = {t.fe, t.fi, t.w.dq, t.w.dk};
    return [t] { return semantic_distance_embedding(t.fe, t.fi, t.w.dq, t.w.dk); };
  });
  add_case("distance_attention", [](Rng& r, std::vector<TensorD>& L) {
    auto t = make_toy(4, 3, 4, 4, r);
    L = {t.fe, t.fi, t.dirs, t.coords, t.w.sp, t.w.dq, t.w.dk, t.w.dv};
    return [t] { return distance_affinity_attention(t.fe, t.fi, t.dirs, t.coords, t.w).output; };
  });
  add_case("gated_fusion", [](Rng& r, std::vector<TensorD>& L) {
    auto t = make_toy(4, 3, 4, 4, r);
    auto fsa = rand_leaf({4, 4}, r), fda = rand_leaf({4, 4}, r);
    L = {fsa, fda, t.w.gate_sa, t.w.gate_da};
    return [t, fsa, fda] { return gated_fusion(fsa, fda, t.w.gate_sa, t.w.gate_da).output; };
  });
  add_case("b2f_forward", [](Rng& r, std::vector<TensorD>& L) {
    // 2 x 2 pixels, N = 3, C = d = 4.
    auto t = make_toy(4, 3, 4, 4, r);
    L = weight_leaves(t.w);
    L.push_back(t.fe);
    L.push_back(t.fi);
    return [t] { return b2f_forward(t.fe, t.fi, t.dirs, t.coords, t.w); };
  });
  return cases;
}

Check oracle_check(const std::string& name, const oracle::Mat& got, const oracle::Mat& want, double tol) {
  Check c;
  c.name = name;
  c.tolerance = tol;
  if (got.rows() != want.rows() || got.cols() != want.cols()) {
    c.detail = "shape mismatch";
    c.max_error = INFINITY;
    return c;
  }
  c.max_error = (got - want).cwiseAbs().maxCoeff();
  c.passed = c.max_error <= tol;
  return c;
}

void merge_max(std::vector<Check>& into, const Check& c) {
  for (auto& e : into)
    if (e.name == c.name) {
      e.max_error = std::max(e.max_error, c.max_error);
      e.passed = e.passed && c.passed;
      return;
    }
  into.push_back(c);
}

}  // namespace

Report tensor_scope(const Options& options) {
  Report r;
  r.scope = "tensor";
  for (const auto& c : tensor_cases()) r.checks.push_back(run_gradcheck_case(c, options));
  return r;
}

Report b2f_scope(const Options& options) {
  Report r;
  r.scope = "b2f";
  for (const auto& c : b2f_cases()) r.checks.push_back(run_gradcheck_case(c, options));
  std::vector<Check> eq;
  for (std::uint64_t seed : options.seeds) {
    Rng rng(seed * 104729 + 3);
    // h = 2, w = 3, N = 5, C = d = 8.
    auto t = make_toy(6, 5, 8, 8, rng);
    const auto ow = as_oracle(t.w);
    const auto sa = semantic_affinity_attention(t.fe, t.fi, t.w).output;
    const auto da = distance_affinity_attention(t.fe, t.fi, t.dirs, t.coords, t.w).output;
    const auto fused = b2f_forward(t.fe, t.fi, t.dirs, t.coords, t.w);
    const auto osa = oracle::semantic_attention(as_mat(t.fe), as_mat(t.fi), ow);
    const auto oda = oracle::distance_attention(as_mat(t.fe), as_mat(t.fi), as_mat(t.dirs), as_mat(t.coords), ow);
    const double tol = options.oracle_tolerance;
    merge_max(eq, oracle_check("loop_semantic_attention", as_mat(sa), osa, tol));
    merge_max(eq, oracle_check("loop_distance_attention", as_mat(da), oda, tol));
    merge_max(eq, oracle_check("loop_b2f_forward", as_mat(fused), oracle::gated_fusion(osa, oda, ow), tol));
  }
  r.checks.insert(r.checks.end(), eq.begin(), eq.end());
  return r;
}

Report model_scope(const Options& options) {
  Report r;
  r.scope = "model";
  Check check;
  check.name = "model_16x32";
  check.tolerance = options.tolerance;
  check.passed = true;
  for (std::uint64_t seed : options.seeds) {
    ModelConfig mc;
    mc.height = 16;
    mc.width = 32;
    mc.channels = 4;
    mc.stages = 3;
    mc.level = 1;
    mc.blocks = 2;
    mc.knn = 3;
    mc.seed = seed;
    Elite360Model<double> model(mc);
    BoxScene scene;
    const auto frame = synth_box_scene(scene, mc.height, mc.width);
    const auto mesh = build_icosap_mesh(mc.level);
    Image<double> rgb(3, mc.height, mc.width);
    for (std::size_t k = 0; k < rgb.data().size(); ++k) rgb.data()[k] = frame.rgb.data()[k];
    const auto points = face_center_point_set(mesh, rgb);
    const auto input = rgb.to_tensor<double>();
    // Conv biases start at zero; with all-zero inputs that parks
    // pre-activations exactly on the ReLU kink, where central differences
    // disagree with any one-sided derivative. Draw them randomly instead.
    Rng bias_rng(seed + 1000);
    std::vector<TensorD> leaves;
    for (const auto& p : model.parameters()) {
      if (p.name.ends_with(".bias"))
        for (auto& v : TensorD(p.tensor).mutable_values()) v = bias_rng.uniform(-0.1, 0.1);
      leaves.push_back(p.tensor);
    }
    auto f = [&] { return total_loss(model(input, points), frame.depth, frame.mask).total; };
    GradcheckOptions go;
    go.tolerance = options.tolerance;
    const auto g = finite_diff_gradcheck(f, leaves, go);
    check.max_error = std::max(check.max_error, g.max_rel_error);
    if (!g.passed) {
      check.passed = false;
      std::ostringstream os;
      os << "seed " << seed << ": worst leaf " << model.parameters()[static_cast<std::size_t>(std::max<Index>(0, g.worst_leaf))].name
         << " index " << g.worst_index;
      check.detail = os.str();
    }
  }
  r.checks.push_back(check);
  return r;
}

Report run(const std::string& scope, const Options& options) {
  if (scope == "tensor") return tensor_scope(options);
  if (scope == "b2f") return b2f_scope(options);
  if (scope == "model") return model_scope(options);
  if (scope == "all") {
    Report all;
    all.scope = "all";
    for (auto* fn : {&tensor_scope, &b2f_scope, &model_scope}) {
      const Report part = fn(options);
      all.checks.insert(all.checks.end(), part.checks.begin(), part.checks.end());
    }
    return all;
  }
  throw UsageError("unknown audit scope '" + scope + "' (expected tensor, b2f, model or all)");
}

}  // namespace e360::audit
