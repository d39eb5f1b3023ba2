#include "coloc/eval.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

#include "coloc/errors.hpp"

namespace coloc {

namespace {

Tensor detach(const Tensor& t) { return Tensor(t.shape(), t.values()); }

}  // namespace

EncodedImage snapshot_image(const ModelParams& params, const ModelConfig& cfg, const CorpusRecord& rec) {
  Tape tape;
  ModelParams bound = bind_params(tape, params, false);
  FeatureGrid g = encode_image(tape, rec.image, bound, cfg.image);
  EncodedImage out;
  out.image_id = rec.image_id;
  out.rows = g.rows;
  out.cols = g.cols;
  out.embed_dim = g.embed_dim;
  out.source_h = g.source_h;
  out.source_w = g.source_w;
  out.values = detach(g.values);
  return out;
}

EncodedCaption snapshot_caption(const ModelParams& params, const ModelConfig& cfg, const GroundedCaption& cap, ParseMode mode) {
  Tape tape;
  ModelParams bound = bind_params(tape, params, false);
  std::vector<PhraseSpan> spans;
  spans.reserve(cap.spans.size());
  for (const CaptionSpan& s : cap.spans) spans.push_back({s.start, s.end});
  TokenMatrix tm = encode_tokens(tape, cap.tokens, spans, mode, bound, cfg.text);
  EncodedCaption out;
  out.caption_id = cap.caption_id;
  out.image_id = cap.image_id;
  out.max_len = tm.max_len;
  out.embed_dim = tm.embed_dim;
  out.n_valid = tm.n_valid;
  out.values = detach(tm.values);
  out.valid_mask = tm.valid_mask;
  out.span_rows = tm.span_rows;
  return out;
}

LocalizationSpace pair_space(Tape& tape, const EncodedImage& img, const EncodedCaption& cap) {
  FeatureGrid g;
  g.rows = img.rows;
  g.cols = img.cols;
  g.embed_dim = img.embed_dim;
  g.source_h = img.source_h;
  g.source_w = img.source_w;
  g.values = tape.constant(img.values);
  TokenMatrix t;
  t.max_len = cap.max_len;
  t.embed_dim = cap.embed_dim;
  t.n_valid = cap.n_valid;
  t.values = tape.constant(cap.values);
  t.valid_mask = cap.valid_mask;
  t.span_rows = cap.span_rows;
  return build_localization_space(tape, g, t, img.image_id, cap.caption_id);
}

double pair_score(const EncodedImage& img, const EncodedCaption& cap) {
  Tape tape;
  LocalizationSpace space = pair_space(tape, img, cap);
  return max_image_score(tape, space).item();
}

double PointingResult::accuracy() const {
  if (total() == 0) throw DomainError("pointing accuracy over zero queries");
  return static_cast<double>(hits) / static_cast<double>(total());
}

PointingQuery pointing_query(const SaliencyMap& map, const std::vector<BoundingBox>& boxes) {
  if (boxes.empty()) throw DataError("pointing query has no ground-truth boxes");
  if (map.upsampled.size() == 0) throw ConfigError("pointing needs an upsampled saliency map");
  const Tensor& up = map.upsampled;
  const int h = up.dim(0), w = up.dim(1);
  int best = 0;
  const double* v = up.data();
  for (int i = 1; i < h * w; ++i) {
    if (v[i] > v[best]) best = i;  // strict: first occurrence wins ties
  }
  PointingQuery q;
  q.argmax_y = best / w;
  q.argmax_x = best % w;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (boxes[b].contains(q.argmax_x, q.argmax_y)) {
      q.hit = true;
      q.matched_box = static_cast<int>(b);
      break;
    }
  }
  return q;
}

PointingResult pointing_accuracy(const ModelParams& params, const ModelConfig& cfg, const Corpus& corpus, const std::vector<int>& image_ids,
                                 ParseMode mode) {
  PointingResult res;
  const int h = corpus.config.image_h, w = corpus.config.image_w;
  for (int image_id : image_ids) {
    const CorpusRecord& rec = corpus.record(image_id);
    EncodedImage eimg = snapshot_image(params, cfg, rec);
    for (int cap_id : rec.caption_ids) {
      const GroundedCaption& cap = corpus.caption(cap_id);
      if (cap.spans.empty()) continue;
      EncodedCaption ecap = snapshot_caption(params, cfg, cap, mode);
      Tape tape;
      LocalizationSpace space = pair_space(tape, eimg, ecap);
      for (std::size_t si = 0; si < cap.spans.size(); ++si) {
        const auto [r0, r1] = ecap.span_rows[si];
        SaliencyMap sal = (mode == ParseMode::Word) ? span_saliency_word_mode(space, PhraseSpan{r0, r1}) : token_saliency(space, r0);
        sal = upsample_map(sal, h, w);
        PointingQuery q = pointing_query(sal, cap.spans[si].boxes);
        q.caption_id = cap_id;
        q.span_index = static_cast<int>(si);
        (q.hit ? res.hits : res.misses)++;
        res.queries.push_back(q);
      }
    }
  }
  return res;
}

PointingResult center_baseline(const Corpus& corpus, const std::vector<int>& image_ids) {
  PointingResult res;
  const int cx = corpus.config.image_w / 2, cy = corpus.config.image_h / 2;
  for (int image_id : image_ids) {
    const CorpusRecord& rec = corpus.record(image_id);
    for (int cap_id : rec.caption_ids) {
      const GroundedCaption& cap = corpus.caption(cap_id);
      for (std::size_t si = 0; si < cap.spans.size(); ++si) {
        const std::vector<BoundingBox>& boxes = cap.spans[si].boxes;
        if (boxes.empty()) throw DataError("pointing query has no ground-truth boxes");
        PointingQuery q;
        q.caption_id = cap_id;
        q.span_index = static_cast<int>(si);
        q.argmax_x = cx;
        q.argmax_y = cy;
        for (std::size_t b = 0; b < boxes.size(); ++b) {
          if (boxes[b].contains(cx, cy)) {
            q.hit = true;
            q.matched_box = static_cast<int>(b);
            break;
          }
        }
        (q.hit ? res.hits : res.misses)++;
        res.queries.push_back(q);
      }
    }
  }
  return res;
}

PointingResult random_baseline(const Corpus& corpus, const std::vector<int>& image_ids, int trials, Rng& rng) {
  if (trials < 1) throw ConfigError("random baseline needs at least one trial");
  PointingResult res;
  const int h = corpus.config.image_h, w = corpus.config.image_w;
  for (int image_id : image_ids) {
    const CorpusRecord& rec = corpus.record(image_id);
    for (int cap_id : rec.caption_ids) {
      const GroundedCaption& cap = corpus.caption(cap_id);
      for (const CaptionSpan& span : cap.spans) {
        if (span.boxes.empty()) throw DataError("pointing query has no ground-truth boxes");
        for (int t = 0; t < trials; ++t) {
          const int x = rng.below(w), y = rng.below(h);
          bool hit = false;
          for (const BoundingBox& box : span.boxes) {
            if (box.contains(x, y)) {
              hit = true;
              break;
            }
          }
          (hit ? res.hits : res.misses)++;
        }
      }
    }
  }
  return res;
}

Direction direction_from_string(const std::string& s) {
  if (s == "caption-to-image" || s == "c2i") return Direction::CaptionToImage;
  if (s == "image-to-caption" || s == "i2c") return Direction::ImageToCaption;
  throw ConfigError("unknown retrieval direction '" + s + "' (want caption-to-image or image-to-caption)");
}

const char* to_string(Direction d) { return d == Direction::CaptionToImage ? "caption-to-image" : "image-to-caption"; }

RetrievalResult recall_at_k(const ModelParams& params, const ModelConfig& cfg, const Corpus& corpus, const std::vector<int>& fold_image_ids,
                            const std::vector<int>& ks, Direction dir) {
  if (fold_image_ids.empty()) throw ConfigError("retrieval fold is empty");
  if (ks.empty()) throw ConfigError("recall@K needs at least one K");
  int max_k = 0;
  for (int k : ks) {
    if (k < 1) throw ConfigError("recall@K needs K >= 1, got " + std::to_string(k));
    max_k = std::max(max_k, k);
  }

  std::vector<EncodedImage> images;
  std::vector<EncodedCaption> captions;
  images.reserve(fold_image_ids.size());
  for (int image_id : fold_image_ids) {
    const CorpusRecord& rec = corpus.record(image_id);
    images.push_back(snapshot_image(params, cfg, rec));
    for (int cap_id : rec.caption_ids) captions.push_back(snapshot_caption(params, cfg, corpus.caption(cap_id), ParseMode::Word));
  }

  const bool c2i = dir == Direction::CaptionToImage;
  const std::size_t n_queries = c2i ? captions.size() : images.size();
  const std::size_t n_cands = c2i ? images.size() : captions.size();
  if (static_cast<std::size_t>(max_k) > n_cands)
    throw ConfigError("recall@" + std::to_string(max_k) + " exceeds the candidate pool of " + std::to_string(n_cands));

  RetrievalResult out;
  out.direction = dir;
  out.ks = ks;
  out.ranks.reserve(n_queries);
  auto cand_id = [&](std::size_t c) { return c2i ? images[c].image_id : captions[c].caption_id; };
  for (std::size_t qi = 0; qi < n_queries; ++qi) {
    std::vector<double> scores(n_cands);
    for (std::size_t c = 0; c < n_cands; ++c) scores[c] = c2i ? pair_score(images[c], captions[qi]) : pair_score(images[qi], captions[c]);
    std::vector<std::size_t> order(n_cands);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return cand_id(a) < cand_id(b);
    });
    int rank = static_cast<int>(n_cands) + 1;
    for (std::size_t pos = 0; pos < n_cands; ++pos) {
      const std::size_t c = order[pos];
      const bool correct = c2i ? images[c].image_id == captions[qi].image_id : captions[c].image_id == images[qi].image_id;
      if (correct) {
        rank = static_cast<int>(pos) + 1;
        break;
      }
    }
    out.ranks.push_back(rank);
  }

  out.recalls.reserve(ks.size());
  for (int k : ks) {
    std::size_t n_hit = 0;
    for (int r : out.ranks)
      if (r <= k) ++n_hit;
    out.recalls.push_back(static_cast<double>(n_hit) / static_cast<double>(n_queries));
  }
  return out;
}

FoldedRecall recall_folds(const ModelParams& params, const ModelConfig& cfg, const Corpus& corpus, const std::vector<int>& pool_image_ids,
                          const std::vector<int>& ks, Direction dir, int n_folds, std::uint64_t seed) {
  if (n_folds < 1) throw ConfigError("retrieval needs at least one fold");
  if (pool_image_ids.size() < static_cast<std::size_t>(n_folds))
    throw ConfigError("cannot cut " + std::to_string(pool_image_ids.size()) + " images into " + std::to_string(n_folds) + " folds");

  std::vector<int> pool = pool_image_ids;
  Rng rng(mix_seed(seed, 0x666f6c64));  // fold stream
  rng.shuffle(pool);

  FoldedRecall out;
  out.ks = ks;
  out.mean_recalls.assign(ks.size(), 0.0);
  const std::size_t n = pool.size(), f = static_cast<std::size_t>(n_folds);
  std::size_t begin = 0;
  for (std::size_t i = 0; i < f; ++i) {
    const std::size_t len = n / f + (i < n % f ? 1 : 0);
    std::vector<int> fold(pool.begin() + static_cast<std::ptrdiff_t>(begin), pool.begin() + static_cast<std::ptrdiff_t>(begin + len));
    begin += len;
    out.per_fold.push_back(recall_at_k(params, cfg, corpus, fold, ks, dir));
    for (std::size_t j = 0; j < ks.size(); ++j) out.mean_recalls[j] += out.per_fold.back().recalls[j];
  }
  for (double& r : out.mean_recalls) r /= static_cast<double>(f);
  return out;
}

}  // namespace coloc
