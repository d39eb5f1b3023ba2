#include "coloc/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>

#include "coloc/coloc_space.hpp"
#include "coloc/encoders.hpp"
#include "coloc/errors.hpp"
#include "coloc/gradcheck.hpp"
#include "coloc/losses.hpp"
#include "coloc/rng.hpp"

namespace coloc {

bool SelfCheckReport::all_pass() const {
  for (const CheckResult& c : checks)
    if (!c.pass) return false;
  return true;
}

std::vector<std::string> SelfCheckReport::failures() const {
  std::vector<std::string> out;
  for (const CheckResult& c : checks)
    if (!c.pass) out.push_back(c.name);
  return out;
}

OpKind op_kind_from_string(const std::string& name) {
  static constexpr OpKind kAll[] = {
      OpKind::MatMul, OpKind::Transpose, OpKind::Reshape, OpKind::SliceRow,       OpKind::Element,    OpKind::StackRows,
      OpKind::StackScalars, OpKind::Im2Col, OpKind::AddRowVec, OpKind::Add,       OpKind::Sub,        OpKind::Mul,
      OpKind::Relu, OpKind::Tanh, OpKind::Sigmoid, OpKind::Exp,                   OpKind::Log,        OpKind::Neg,
      OpKind::Sum, OpKind::MaxOverSpatial, OpKind::MeanMasked, OpKind::LogSumExp,
  };
  for (OpKind k : kAll)
    if (name == op_name(k)) return k;
  throw ConfigError("unknown op '" + name + "'");
}

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kOracleTol = 1e-10;

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values in [0.1, 1.1] with random sign: stays clear of the relu kink
// under finite-difference perturbation.
Tensor rand_off_kink(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.1);
  return t;
}

// Scalar probe: sum of value * fixed weights. A misrouted gradient entry
// shows up because every output position carries a distinct weight.
Tensor probe(Tape& t, const Tensor& value, Rng& rng) {
  Tensor w(value.shape());
  for (double& x : w.values()) x = rng.uniform(0.5, 1.5);
  return t.sum(t.mul(value, t.constant(w)));
}

void emit(SelfCheckReport& rep, std::ostream& os, const std::string& name, double err, double tol) {
  const bool pass = err < tol;
  rep.checks.push_back({name, err, tol, pass});
  os << (pass ? "ok   " : "FAIL ") << std::left << std::setw(30) << name << std::right << " max_err=" << std::scientific << std::setprecision(3)
     << err << "  tol=" << std::setprecision(0) << tol << std::defaultfloat << "\n";
}

LossBuilder armed(LossBuilder inner, const std::optional<FaultSpec>& fault) {
  if (!fault) return inner;
  const FaultSpec f = *fault;
  return [inner = std::move(inner), f](Tape& t, const std::vector<Tensor>& xs) {
    t.inject_backward_fault(f.op, f.factor);
    return inner(t, xs);
  };
}

void grad_case(SelfCheckReport& rep, std::ostream& os, const std::optional<FaultSpec>& fault, const std::string& name, const LossBuilder& build,
               std::vector<Tensor> params, int stride = 1) {
  std::vector<Tensor*> ptrs;
  ptrs.reserve(params.size());
  for (Tensor& p : params) ptrs.push_back(&p);
  const GradCheckReport r = grad_check(armed(build, fault), ptrs, kGradEps, stride);
  emit(rep, os, "grad/" + name, r.max_rel_err, kGradTol);
}

// ---- per-op gradient checks -------------------------------------------

void check_ops(SelfCheckReport& rep, std::ostream& os, const std::optional<FaultSpec>& fault) {
  {
    Rng rng(101);
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {4, 2});
    grad_case(rep, os, fault, "matmul",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(102);
                return probe(t, t.matmul(xs[0], xs[1]), r);
              },
              {a, b});
  }
  {
    Rng rng(103);
    Tensor x = rand_tensor(rng, {3, 4});
    grad_case(rep, os, fault, "transpose",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(104);
                return probe(t, t.transpose(xs[0]), r);
              },
              {x});
    grad_case(rep, os, fault, "reshape",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(105);
                return probe(t, t.reshape(xs[0], {2, 6}), r);
              },
              {x});
  }
  {
    Rng rng(106);
    Tensor m = rand_tensor(rng, {4, 3});
    grad_case(rep, os, fault, "slice_row",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(107);
                return probe(t, t.slice_row(xs[0], 2), r);
              },
              {m});
    grad_case(rep, os, fault, "element",
              [](Tape& t, const std::vector<Tensor>& xs) { return t.scale(t.element(xs[0], 1, 2), 1.7); }, {m});
  }
  {
    Rng rng(108);
    Tensor r0 = rand_tensor(rng, {4}), r1 = rand_tensor(rng, {4}), r2 = rand_tensor(rng, {4});
    grad_case(rep, os, fault, "stack_rows",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(109);
                return probe(t, t.stack_rows({xs[0], xs[1], xs[2]}), r);
              },
              {r0, r1, r2});
  }
  {
    Rng rng(110);
    Tensor m = rand_tensor(rng, {3, 3});
    grad_case(rep, os, fault, "stack_scalars",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(111);
                std::vector<Tensor> ss = {t.element(xs[0], 0, 0), t.element(xs[0], 1, 2), t.element(xs[0], 2, 1)};
                return probe(t, t.stack_scalars(ss), r);
              },
              {m});
  }
  {
    Rng rng(112);
    Tensor x = rand_tensor(rng, {5, 5, 2});
    grad_case(rep, os, fault, "im2col",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(113);
                return probe(t, t.im2col(xs[0], 2, 1), r);
              },
              {x});
  }
  {
    Rng rng(114);
    Tensor m = rand_tensor(rng, {3, 4}), v = rand_tensor(rng, {4});
    grad_case(rep, os, fault, "add_rowvec",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(115);
                return probe(t, t.add_rowvec(xs[0], xs[1]), r);
              },
              {m, v});
  }
  {
    Rng rng(116);
    Tensor a = rand_tensor(rng, {2, 3}), b = rand_tensor(rng, {2, 3}), s = rand_tensor(rng, {1});
    // each binary op, with and without scalar broadcast
    grad_case(rep, os, fault, "add",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(117);
                return t.add(probe(t, t.add(xs[0], xs[1]), r), probe(t, t.add(xs[0], xs[2]), r));
              },
              {a, b, s});
    grad_case(rep, os, fault, "sub",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(118);
                return t.add(probe(t, t.sub(xs[0], xs[1]), r), probe(t, t.sub(xs[2], xs[1]), r));
              },
              {a, b, s});
    grad_case(rep, os, fault, "mul",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(119);
                return t.add(probe(t, t.mul(xs[0], xs[1]), r), probe(t, t.mul(xs[0], xs[2]), r));
              },
              {a, b, s});
  }
  {
    Rng rng(120);
    Tensor x = rand_off_kink(rng, {2, 5});
    grad_case(rep, os, fault, "relu",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(121);
                return probe(t, t.relu(xs[0]), r);
              },
              {x});
  }
  {
    Rng rng(122);
    Tensor x = rand_tensor(rng, {2, 4});
    grad_case(rep, os, fault, "tanh",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(123);
                return probe(t, t.tanh(xs[0]), r);
              },
              {x});
    grad_case(rep, os, fault, "sigmoid",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(124);
                return probe(t, t.sigmoid(xs[0]), r);
              },
              {x});
    grad_case(rep, os, fault, "exp",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(125);
                return probe(t, t.exp(xs[0]), r);
              },
              {x});
    grad_case(rep, os, fault, "neg",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(126);
                return probe(t, t.neg(xs[0]), r);
              },
              {x});
    grad_case(rep, os, fault, "sum", [](Tape& t, const std::vector<Tensor>& xs) { return t.scale(t.sum(xs[0]), 0.7); }, {x});
  }
  {
    Rng rng(127);
    Tensor x = rand_tensor(rng, {2, 4}, 0.2, 2.0);
    grad_case(rep, os, fault, "log",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(128);
                return probe(t, t.log(xs[0]), r);
              },
              {x});
  }
  {
    Rng rng(129);
    Tensor x = rand_tensor(rng, {3, 3, 2});
    // widen each slice's top-2 gap so perturbation cannot flip the argmax
    for (int d = 0; d < 2; ++d) {
      int best = 0;
      for (int i = 1; i < 9; ++i)
        if (x.values()[static_cast<std::size_t>(i * 2 + d)] > x.values()[static_cast<std::size_t>(best * 2 + d)]) best = i;
      x.values()[static_cast<std::size_t>(best * 2 + d)] += 0.25;
    }
    grad_case(rep, os, fault, "max_over_spatial",
              [](Tape& t, const std::vector<Tensor>& xs) {
                Rng r(130);
                return probe(t, t.max_over_spatial(xs[0]), r);
              },
              {x});
  }
  {
    Rng rng(131);
    Tensor x = rand_tensor(rng, {6});
    grad_case(rep, os, fault, "mean_masked",
              [](Tape& t, const std::vector<Tensor>& xs) {
                return t.scale(t.mean_masked(xs[0], t.constant(Tensor::from({6}, {1, 0, 1, 1, 0, 1}))), 1.3);
              },
              {x});
    grad_case(rep, os, fault, "log_sum_exp", [](Tape& t, const std::vector<Tensor>& xs) { return t.scale(t.log_sum_exp(xs[0]), 0.9); }, {x});
  }
}

// ---- full-pipeline gradient checks ------------------------------------

ModelConfig pipeline_config() {
  ModelConfig cfg;
  cfg.image.input_h = 12;
  cfg.image.input_w = 12;
  cfg.image.input_channels = 3;
  cfg.image.convs = {{3, 4, 4, 2}, {4, 6, 3, 2}};
  cfg.image.embed_dim = 6;
  cfg.text.vocab_size = 10;
  cfg.text.embed_dim = 4;
  cfg.text.hidden_dim = 6;
  cfg.text.max_len = 5;
  cfg.validate();
  return cfg;
}

ModelParams params_from_handles(const ModelParams& like, const std::vector<Tensor>& xs) {
  ModelParams p = like;
  auto named = p.named_tensors();
  if (named.size() != xs.size()) throw ConfigError("parameter handle count mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) *named[i].second = xs[i];
  return p;
}

void check_pipeline(SelfCheckReport& rep, std::ostream& os, const std::optional<FaultSpec>& fault) {
  const ModelConfig cfg = pipeline_config();
  ModelParams base = init_params(cfg, 7);
  Rng rng(132);
  const std::vector<Tensor> images = {rand_tensor(rng, {12, 12, 3}, 0.0, 1.0), rand_tensor(rng, {12, 12, 3}, 0.0, 1.0)};
  const std::vector<std::vector<int>> tokens = {{1, 3, 5}, {2, 7, 4, 9}};

  auto scores = [=](Tape& t, const std::vector<Tensor>& xs) {
    const ModelParams bound = params_from_handles(base, xs);
    std::vector<FeatureGrid> grids;
    std::vector<TokenMatrix> mats;
    for (int i = 0; i < 2; ++i) {
      grids.push_back(encode_image(t, images[static_cast<std::size_t>(i)], bound, cfg.image));
      mats.push_back(encode_tokens(t, tokens[static_cast<std::size_t>(i)], {}, ParseMode::Word, bound, cfg.text));
    }
    ScoreMatrix sm;
    sm.b = 2;
    sm.image_ids = {0, 1};
    sm.caption_ids = {0, 1};
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        LocalizationSpace space = build_localization_space(t, grids[static_cast<std::size_t>(i)], mats[static_cast<std::size_t>(j)]);
        sm.scores.push_back(max_image_score(t, space));
      }
    return sm;
  };

  std::vector<Tensor> params;
  for (auto& [name, p] : base.named_tensors()) params.push_back(*p);

  grad_case(rep, os, fault, "pipeline_npair",
            [=](Tape& t, const std::vector<Tensor>& xs) { return npair_loss(t, scores(t, xs)); }, params);
  grad_case(rep, os, fault, "pipeline_triplet",
            [=](Tape& t, const std::vector<Tensor>& xs) {
              TripletConfig tc;
              // 0.02 keeps every hinge argument at least 0.025 from the relu
              // kink for this seed AND leaves one hinge inactive; with all
              // four active the loss collapses to s01+s10-s00-s11, whose
              // gradient wrt shared biases cancels exactly and finite
              // differences see nothing but roundoff
              tc.margin = 0.02;
              return triplet_loss(t, scores(t, xs), tc);
            },
            params);
}

// ---- oracle equivalence ------------------------------------------------

void check_oracles(SelfCheckReport& rep, std::ostream& os) {
  constexpr int kTrials = 100;
  {
    // max_image_score vs a direct triple loop over the raw volume
    Rng rng(201);
    double max_err = 0.0;
    for (int trial = 0; trial < kTrials; ++trial) {
      const int rows = rng.range(2, 4), cols = rng.range(2, 4), L = rng.range(2, 5);
      const int max_len = rng.range(1, 5), n_valid = rng.range(1, max_len);
      Tensor gvals = rand_tensor(rng, {rows, cols, L}, -2.0, 2.0);
      Tensor tvals = rand_tensor(rng, {max_len, L}, -2.0, 2.0);
      Tensor mask = Tensor::zeros({max_len});
      for (int d = 0; d < n_valid; ++d) mask.at(d) = 1.0;

      Tape t;
      FeatureGrid fg;
      fg.rows = rows;
      fg.cols = cols;
      fg.embed_dim = L;
      fg.values = t.constant(gvals);
      TokenMatrix tm;
      tm.max_len = max_len;
      tm.embed_dim = L;
      tm.n_valid = n_valid;
      tm.values = t.constant(tvals);
      tm.valid_mask = mask;
      const double got = max_image_score(t, build_localization_space(t, fg, tm)).item();

      double want = 0.0;
      for (int d = 0; d < n_valid; ++d) {
        double best = -std::numeric_limits<double>::infinity();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) {
            double dot = 0.0;
            for (int l = 0; l < L; ++l) dot += gvals.at(r, c, l) * tvals.at(d, l);
            best = std::max(best, dot);
          }
        want += best;
      }
      want /= n_valid;
      max_err = std::max(max_err, std::abs(got - want));
    }
    emit(rep, os, "oracle/max_image_score", max_err, kOracleTol);
  }
  {
    // triplet vs exhaustive mining: max over impostors of the hinge
    Rng rng(202);
    double max_err = 0.0;
    for (int trial = 0; trial < kTrials; ++trial) {
      const int b = rng.range(2, 6);
      Tensor s = rand_tensor(rng, {b, b}, -2.0, 2.0);
      TripletConfig tc;
      tc.margin = rng.uniform(0.0, 0.5);

      Tape t;
      const double got = triplet_loss(t, ScoreMatrix::from_values(t, s), tc).item();

      double want = 0.0;
      for (int j = 0; j < b; ++j) {
        double worst_cap = 0.0, worst_img = 0.0;
        for (int k = 0; k < b; ++k) {
          if (k == j) continue;
          worst_cap = std::max(worst_cap, std::max(0.0, s.at(j, k) - s.at(j, j) + tc.margin));
          worst_img = std::max(worst_img, std::max(0.0, s.at(k, j) - s.at(j, j) + tc.margin));
        }
        want += worst_cap + worst_img;
      }
      want /= b;
      max_err = std::max(max_err, std::abs(got - want));
    }
    emit(rep, os, "oracle/triplet_mining", max_err, kOracleTol);
  }
  {
    // n-pair vs the naive softmax cross-entropy form
    Rng rng(203);
    double max_err = 0.0;
    for (int trial = 0; trial < kTrials; ++trial) {
      const int b = rng.range(2, 6);
      Tensor s = rand_tensor(rng, {b, b}, -2.0, 2.0);

      Tape t;
      const double got = npair_loss(t, ScoreMatrix::from_values(t, s)).item();

      double want = 0.0;
      for (int j = 0; j < b; ++j) {
        double row = 0.0, col = 0.0;
        for (int k = 0; k < b; ++k) {
          row += std::exp(s.at(j, k));
          col += std::exp(s.at(k, j));
        }
        want += -std::log(std::exp(s.at(j, j)) / row) - std::log(std::exp(s.at(j, j)) / col);
      }
      want /= b;
      max_err = std::max(max_err, std::abs(got - want));
    }
    emit(rep, os, "oracle/npair_softmax", max_err, kOracleTol);
  }
}

}  // namespace

SelfCheckReport run_selfcheck(std::ostream& os, const std::optional<FaultSpec>& fault) {
  SelfCheckReport rep;
  check_ops(rep, os, fault);
  check_pipeline(rep, os, fault);
  check_oracles(rep, os);
  os << (rep.all_pass() ? "selfcheck: all checks passed\n" : "selfcheck: FAILURES above\n");
  return rep;
}

}  // namespace coloc
