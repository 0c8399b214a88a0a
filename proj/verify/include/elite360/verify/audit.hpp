#pragma once

// Gradient and oracle-equivalence audits run by tests, the acceptance
// binary and `elite360 audit`.

#include <cstdint>
#include <string>
#include <vector>

#include "elite360/tensor.hpp"
#include "json.hpp"

namespace e360::audit {

struct Check {
  std::string name;
  bool passed = false;
  double max_error = 0;
  double tolerance = 0;
  std::string detail;
};

struct Report {
  std::string scope;
  std::vector<Check> checks;

  bool passed() const;
  nlohmann::ordered_json to_json() const;
};

struct Options {
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  double tolerance = 1e-4;
  double oracle_tolerance = 1e-6;
};

// Central-difference check of every primitive in the tensor catalog.
Report tensor_scope(const Options& options = {});
// Gradient checks of each fusion stage plus batched-vs-loop equivalence.
Report b2f_scope(const Options& options = {});
// Full model on a 16 x 32 toy input.
Report model_scope(const Options& options = {});

// Dispatch by name: "tensor", "b2f", "model" or "all".
Report run(const std::string& scope, const Options& options = {});

// Fault-injection name for set_gradient_fault; throws UsageError if unknown.
Op parse_op(const std::string& name);

}  // namespace e360::audit
