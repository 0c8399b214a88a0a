#include "elite360/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "elite360/errors.hpp"

namespace e360 {
namespace {

// f() or NaN when a primitive rejected a non-finite value.
double evaluate(const std::function<TensorD()>& f) {
  try {
    const TensorD y = f();
    if (y.numel() != 1) throw UsageError("gradcheck: function must return a scalar");
    return y.item();
  } catch (const NumericError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

GradcheckReport finite_diff_gradcheck(const std::function<TensorD()>& f,
                                      std::vector<TensorD> leaves,
                                      const GradcheckOptions& options) {
  GradcheckReport report;
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad() || leaf.op() != Op::kLeaf)
      throw UsageError("gradcheck: every probed tensor must be a requires_grad leaf");
    leaf.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  try {
    const TensorD y = f();
    if (y.numel() != 1) throw UsageError("gradcheck: function must return a scalar");
    backward(y);
  } catch (const NumericError&) {
    report.nonfinite.emplace_back(-1, -1);
    report.passed = false;
    return report;
  }
  for (const auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().size() != static_cast<std::size_t>(leaf.numel()))
      analytic.back().assign(static_cast<std::size_t>(leaf.numel()), 0.0);
  }

  const double h = options.step;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = evaluate(f);
      values[i] = saved - h;
      const double fm = evaluate(f);
      values[i] = saved;
      ++report.coordinates_checked;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.nonfinite.emplace_back(static_cast<Index>(l), static_cast<Index>(i));
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[l][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = err;
        report.worst_leaf = static_cast<Index>(l);
        report.worst_index = static_cast<Index>(i);
      }
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  report.passed = report.nonfinite.empty() && report.max_rel_error <= options.tolerance;
  return report;
}

GradcheckReport finite_diff_gradcheck(const std::function<TensorD(const TensorD&)>& f,
                                      const TensorD& x, const GradcheckOptions& options) {
  TensorD leaf = x.detach(true);
  return finite_diff_gradcheck([&f, &leaf] { return f(leaf); }, {leaf}, options);
}

}  // namespace e360
