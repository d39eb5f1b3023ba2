#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "coloc/tape.hpp"

namespace coloc {

struct CheckResult {
  std::string name;
  double max_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct SelfCheckReport {
  std::vector<CheckResult> checks;

  bool all_pass() const;
  std::vector<std::string> failures() const;
};

// Test fixture: corrupts the backward rule of one op so the gradient
// suite demonstrably catches a broken derivative.
struct FaultSpec {
  OpKind op = OpKind::Leaf;
  double factor = 2.0;
};

OpKind op_kind_from_string(const std::string& name);

// Runs the gradient-check suite (every differentiable op plus the full
// pipeline loss, central differences, eps 1e-5, tol 1e-4) and the
// oracle-equivalence suite (brute-force reimplementations of
// max_image_score, hardest-mining triplet, and softmax n-pair; 100
// random instances each, tol 1e-10). One report line per check.
SelfCheckReport run_selfcheck(std::ostream& os, const std::optional<FaultSpec>& fault = std::nullopt);

}  // namespace coloc
