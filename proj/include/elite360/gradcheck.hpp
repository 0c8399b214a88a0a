#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "elite360/tensor.hpp"

namespace e360 {

struct GradcheckReport {
  std::string label;
  bool passed = false;
  double max_rel_error = 0.0;
  // Leaf / flat coordinate where max_rel_error was observed.
  Index worst_leaf = -1;
  Index worst_index = -1;
  Index coordinates_checked = 0;
  // (leaf, flat index) pairs where a probe evaluation was non-finite.
  std::vector<std::pair<Index, Index>> nonfinite;
};

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
};

// Compares reverse-mode gradients of a scalar-valued `f` against central
// differences, probing every coordinate of every leaf in `leaves`. `f` must
// rebuild its graph from the current leaf values on each call.
GradcheckReport finite_diff_gradcheck(const std::function<TensorD()>& f,
                                      std::vector<TensorD> leaves,
                                      const GradcheckOptions& options = {});

// Single-input form: x is copied into a fresh leaf passed to f.
GradcheckReport finite_diff_gradcheck(const std::function<TensorD(const TensorD&)>& f,
                                      const TensorD& x, const GradcheckOptions& options = {});

}  // namespace e360
