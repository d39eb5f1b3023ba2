#pragma once

#include <functional>
#include <vector>

#include "coloc/tape.hpp"
#include "coloc/tensor.hpp"

namespace coloc {

// Builds a scalar loss on `tape` from leaf handles bound to the checked
// parameters, in the same order they were passed to grad_check.
using LossBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_param = -1;   // index into params
  int worst_entry = -1;   // flat index inside that tensor
  double analytic = 0.0;  // at the worst entry
  double numeric = 0.0;
  long long entries_checked = 0;

  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central finite differences against tape gradients.
// rel err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// `stride` checks every stride-th entry of each tensor (1 = all entries).
GradCheckReport grad_check(const LossBuilder& build, const std::vector<Tensor*>& params, double eps = 1e-5, int stride = 1);

}  // namespace coloc
