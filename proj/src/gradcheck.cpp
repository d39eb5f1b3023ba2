#include "coloc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "coloc/errors.hpp"

namespace coloc {

namespace {

double eval_loss(const LossBuilder& build, const std::vector<Tensor*>& params) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const Tensor* p : params) {
    Tensor t = *p;
    t.requires_grad = true;
    leaves.push_back(tape.leaf(t));
  }
  Tensor loss = build(tape, leaves);
  if (loss.size() != 1) throw ShapeError("grad_check loss must be scalar, got " + shape_to_string(loss.shape()));
  return loss.data()[0];
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, const std::vector<Tensor*>& params, double eps, int stride) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw ConfigError("grad_check eps must be in (0, 1e-3], got " + std::to_string(eps));
  if (stride < 1) throw ConfigError("grad_check stride must be >= 1");

  // Analytic pass.
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(params.size());
    for (const Tensor* p : params) {
      Tensor t = *p;
      t.requires_grad = true;
      leaves.push_back(tape.leaf(t));
    }
    Tensor loss = build(tape, leaves);
    if (loss.size() != 1) throw ShapeError("grad_check loss must be scalar, got " + shape_to_string(loss.shape()));
    tape.backward(loss);
    for (const Tensor& l : leaves) analytic.push_back(tape.has_grad(l) ? tape.grad(l) : Tensor::zeros(l.shape()));
  }

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (int i = 0; i < p.size(); i += stride) {
      const double orig = p.data()[i];
      p.data()[i] = orig + eps;
      const double up = eval_loss(build, params);
      p.data()[i] = orig - eps;
      const double down = eval_loss(build, params);
      p.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double ana = analytic[pi].data()[i];
      const double rel = std::abs(ana - numeric) / std::max({std::abs(ana), std::abs(numeric), 1e-8});
      ++rep.entries_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = static_cast<int>(pi);
        rep.worst_entry = i;
        rep.analytic = ana;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace coloc
