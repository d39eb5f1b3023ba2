#include "coloc/losses.hpp"

#include "coloc/errors.hpp"

namespace coloc {

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "npair") return LossKind::NPair;
  if (s == "triplet") return LossKind::Triplet;
  throw ConfigError("unknown loss '" + s + "' (expected npair or triplet)");
}

const char* to_string(LossKind k) { return k == LossKind::NPair ? "npair" : "triplet"; }

Mining mining_from_string(const std::string& s) {
  if (s == "hardest") return Mining::Hardest;
  if (s == "random") return Mining::Random;
  throw ConfigError("unknown mining strategy '" + s + "' (expected hardest or random)");
}

const char* to_string(Mining m) { return m == Mining::Hardest ? "hardest" : "random"; }

Batch build_batch(const Corpus& corpus, int b, Rng& rng, const std::vector<int>& pool) {
  std::vector<int> ids = pool;
  if (ids.empty()) {
    ids.resize(corpus.images.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  }
  if (b < 1) throw ConfigError("batch size must be positive");
  if (static_cast<int>(ids.size()) < b) {
    throw DataError("corpus pool has " + std::to_string(ids.size()) + " images, batch needs " + std::to_string(b));
  }
  Batch batch;
  for (int k : rng.sample_without_replacement(static_cast<int>(ids.size()), b)) {
    const CorpusRecord& rec = corpus.record(ids[static_cast<std::size_t>(k)]);
    if (rec.caption_ids.empty()) throw DataError("image " + std::to_string(rec.image_id) + " has no captions");
    const int cap_id = rec.caption_ids[static_cast<std::size_t>(rng.below(static_cast<int>(rec.caption_ids.size())))];
    BatchEntry e;
    e.image_id = rec.image_id;
    e.caption_id = cap_id;
    e.image = rec.image;
    e.tokens = corpus.caption(cap_id).tokens;
    batch.entries.push_back(std::move(e));
  }
  return batch;
}

const Tensor& ScoreMatrix::score(int i, int j) const {
  if (i < 0 || i >= b || j < 0 || j >= b) throw IndexError("score (" + std::to_string(i) + "," + std::to_string(j) + ") outside " + std::to_string(b) + "x" +
                                                           std::to_string(b) + " matrix");
  return scores[static_cast<std::size_t>(i) * static_cast<std::size_t>(b) + static_cast<std::size_t>(j)];
}

ScoreMatrix ScoreMatrix::from_values(Tape& tape, const Tensor& values) {
  if (values.rank() != 2 || values.dim(0) != values.dim(1)) throw ShapeError("score matrix must be square, got " + shape_to_string(values.shape()));
  ScoreMatrix m;
  m.b = values.dim(0);
  Tensor reg = values.node != kNoNode ? values : tape.leaf(values);
  for (int i = 0; i < m.b; ++i) {
    m.image_ids.push_back(i);
    m.caption_ids.push_back(i);
    for (int j = 0; j < m.b; ++j) m.scores.push_back(tape.element(reg, i, j));
  }
  return m;
}

ScoreMatrix score_matrix(Tape& tape, const Batch& batch, const ModelParams& bound, const ModelConfig& cfg) {
  const int b = batch.size();
  if (b < 1) throw ConfigError("empty batch");

  std::vector<FeatureGrid> grids;
  std::vector<TokenMatrix> toks;
  grids.reserve(static_cast<std::size_t>(b));
  toks.reserve(static_cast<std::size_t>(b));
  for (const BatchEntry& e : batch.entries) {
    grids.push_back(encode_image(tape, e.image, bound, cfg.image));
    toks.push_back(encode_tokens(tape, e.tokens, {}, ParseMode::Word, bound, cfg.text));
  }

  ScoreMatrix m;
  m.b = b;
  m.scores.reserve(static_cast<std::size_t>(b) * static_cast<std::size_t>(b));
  for (const BatchEntry& e : batch.entries) {
    m.image_ids.push_back(e.image_id);
    m.caption_ids.push_back(e.caption_id);
  }
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      LocalizationSpace space =
          build_localization_space(tape, grids[static_cast<std::size_t>(i)], toks[static_cast<std::size_t>(j)], m.image_ids[static_cast<std::size_t>(i)],
                                   m.caption_ids[static_cast<std::size_t>(j)]);
      m.scores.push_back(max_image_score(tape, space));
    }
  }
  return m;
}

namespace {

// First index i != j maximizing pick(i); gradient-free selection.
template <typename F>
int hardest_impostor(int b, int j, F&& pick) {
  int best = -1;
  double best_v = 0.0;
  for (int i = 0; i < b; ++i) {
    if (i == j) continue;
    const double v = pick(i);
    if (best < 0 || v > best_v) {
      best = i;
      best_v = v;
    }
  }
  return best;
}

int random_impostor(int b, int j, Rng& rng) {
  const int r = rng.below(b - 1);
  return r >= j ? r + 1 : r;
}

}  // namespace

Tensor triplet_loss(Tape& tape, const ScoreMatrix& scores, const TripletConfig& cfg, Rng* rng) {
  if (scores.b < 2) throw ConfigError("triplet loss needs a batch of at least 2, got " + std::to_string(scores.b));
  if (cfg.margin < 0.0) throw ConfigError("triplet margin must be nonnegative");
  if (cfg.mining == Mining::Random && rng == nullptr) throw ConfigError("random mining needs an rng");

  const int b = scores.b;
  Tensor total = tape.constant(0.0);
  for (int j = 0; j < b; ++j) {
    const Tensor& pos = scores.score(j, j);
    // image anchor j against its hardest impostor caption
    const int imp_c = cfg.mining == Mining::Hardest ? hardest_impostor(b, j, [&](int i) { return scores.value(j, i); }) : random_impostor(b, j, *rng);
    Tensor l1 = tape.relu(tape.add_scalar(tape.sub(scores.score(j, imp_c), pos), cfg.margin));
    // caption anchor j against its hardest impostor image
    const int imp_i = cfg.mining == Mining::Hardest ? hardest_impostor(b, j, [&](int i) { return scores.value(i, j); }) : random_impostor(b, j, *rng);
    Tensor l2 = tape.relu(tape.add_scalar(tape.sub(scores.score(imp_i, j), pos), cfg.margin));
    total = tape.add(total, tape.add(l1, l2));
  }
  return tape.scale(total, 1.0 / b);
}

Tensor npair_loss(Tape& tape, const ScoreMatrix& scores) {
  if (scores.b < 2) throw ConfigError("n-pair loss needs a batch of at least 2, got " + std::to_string(scores.b));
  const int b = scores.b;
  Tensor total = tape.constant(0.0);
  for (int j = 0; j < b; ++j) {
    const Tensor& pos = scores.score(j, j);
    std::vector<Tensor> row, col;
    row.reserve(static_cast<std::size_t>(b));
    col.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      row.push_back(scores.score(j, i));  // image anchor: all captions
      col.push_back(scores.score(i, j));  // caption anchor: all images
    }
    // -log softmax of the positive within its row/column
    Tensor l1 = tape.sub(tape.log_sum_exp(tape.stack_scalars(row)), pos);
    Tensor l2 = tape.sub(tape.log_sum_exp(tape.stack_scalars(col)), pos);
    total = tape.add(total, tape.add(l1, l2));
  }
  return tape.scale(total, 1.0 / b);
}

}  // namespace coloc
