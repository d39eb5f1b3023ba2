#pragma once

#include <string>
#include <vector>

#include "coloc/coloc_space.hpp"
#include "coloc/corpus.hpp"
#include "coloc/encoders.hpp"
#include "coloc/rng.hpp"

namespace coloc {

enum class LossKind { NPair, Triplet };
enum class Mining { Hardest, Random };

LossKind loss_kind_from_string(const std::string& s);
const char* to_string(LossKind k);
Mining mining_from_string(const std::string& s);
const char* to_string(Mining m);

struct BatchEntry {
  int image_id = -1;
  int caption_id = -1;
  Tensor image;             // [H x W x 3]
  std::vector<int> tokens;  // caption token ids
};

// B positive pairs over B distinct images; every off-diagonal pairing
// doubles as an impostor, so no extra negatives are materialized.
struct Batch {
  std::vector<BatchEntry> entries;
  int size() const { return static_cast<int>(entries.size()); }
};

// Samples b distinct images from the pool (all images if pool is empty)
// and one uniformly chosen caption per image.
Batch build_batch(const Corpus& corpus, int b, Rng& rng, const std::vector<int>& pool = {});

// All B*B pair scores, kept as live tape handles so a loss can be built
// on top of any subset of them.
struct ScoreMatrix {
  int b = 0;
  std::vector<Tensor> scores;  // row-major: scores[i*b + j] = S(I_i, T_j)
  std::vector<int> image_ids;
  std::vector<int> caption_ids;

  const Tensor& score(int i, int j) const;
  double value(int i, int j) const { return score(i, j).item(); }

  // Wraps a plain [B x B] matrix so losses can be exercised directly.
  static ScoreMatrix from_values(Tape& tape, const Tensor& values);
};

ScoreMatrix score_matrix(Tape& tape, const Batch& batch, const ModelParams& bound, const ModelConfig& cfg);

struct TripletConfig {
  double margin = 0.2;  // eta
  Mining mining = Mining::Hardest;
};

// Per anchor, hinge on the positive-vs-impostor gap in both directions;
// the impostor is the hardest in batch (or uniform random with
// Mining::Random, which needs an rng). No gradient flows through the
// impostor selection.
Tensor triplet_loss(Tape& tape, const ScoreMatrix& scores, const TripletConfig& cfg, Rng* rng = nullptr);

// Softmax ranking loss over every in-batch impostor at once, both
// directions, stabilized with log_sum_exp.
Tensor npair_loss(Tape& tape, const ScoreMatrix& scores);

}  // namespace coloc
