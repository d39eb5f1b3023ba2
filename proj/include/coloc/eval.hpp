#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coloc/coloc_space.hpp"
#include "coloc/corpus.hpp"
#include "coloc/encoders.hpp"
#include "coloc/rng.hpp"

namespace coloc {

// Parameter-independent snapshots: each image and caption is encoded
// once, then any pair can be scored on a tiny throwaway tape using the
// same localization-space ops the training path uses.
struct EncodedImage {
  int image_id = -1;
  int rows = 0, cols = 0, embed_dim = 0;
  int source_h = 0, source_w = 0;
  Tensor values;  // [rows x cols x L], plain
};

struct EncodedCaption {
  int caption_id = -1;
  int image_id = -1;
  int max_len = 0, embed_dim = 0, n_valid = 0;
  Tensor values;      // [max_len x L], plain
  Tensor valid_mask;  // [max_len]
  std::vector<std::pair<int, int>> span_rows;  // per annotation span
};

EncodedImage snapshot_image(const ModelParams& params, const ModelConfig& cfg, const CorpusRecord& rec);
EncodedCaption snapshot_caption(const ModelParams& params, const ModelConfig& cfg, const GroundedCaption& cap, ParseMode mode);

LocalizationSpace pair_space(Tape& tape, const EncodedImage& img, const EncodedCaption& cap);
double pair_score(const EncodedImage& img, const EncodedCaption& cap);

struct PointingQuery {
  int caption_id = -1;
  int span_index = -1;
  int argmax_x = 0;
  int argmax_y = 0;
  bool hit = false;
  int matched_box = -1;  // index into the span's box list, -1 on miss
};

struct PointingResult {
  std::vector<PointingQuery> queries;  // empty for the random baseline
  long long hits = 0;
  long long misses = 0;

  long long total() const { return hits + misses; }
  double accuracy() const;
};

// Row-major argmax pixel of the upsampled map; Hit iff it lies in any box.
PointingQuery pointing_query(const SaliencyMap& map, const std::vector<BoundingBox>& boxes);

// One query per annotated span of every caption of the given images.
PointingResult pointing_accuracy(const ModelParams& params, const ModelConfig& cfg, const Corpus& corpus, const std::vector<int>& image_ids, ParseMode mode);

// Hit iff the image center pixel (floor(W/2), floor(H/2)) is in any box.
PointingResult center_baseline(const Corpus& corpus, const std::vector<int>& image_ids);

// Hit iff a uniformly random pixel lands in any box; `trials` pixels per
// query, each counted as one sample.
PointingResult random_baseline(const Corpus& corpus, const std::vector<int>& image_ids, int trials, Rng& rng);

enum class Direction { ImageToCaption, CaptionToImage };

Direction direction_from_string(const std::string& s);
const char* to_string(Direction d);

struct RetrievalResult {
  Direction direction = Direction::CaptionToImage;
  std::vector<int> ks;
  std::vector<double> recalls;    // aligned with ks
  std::vector<int> ranks;         // 1-based rank of first correct match, per query
};

// Queries on one side of the fold, candidates on the other; candidates
// are sorted by score descending with ties broken by ascending id.
// Caption->image counts only the source image as correct; image->caption
// counts any of the image's captions.
RetrievalResult recall_at_k(const ModelParams& params, const ModelConfig& cfg, const Corpus& corpus, const std::vector<int>& fold_image_ids,
                            const std::vector<int>& ks, Direction dir);

struct FoldedRecall {
  std::vector<int> ks;
  std::vector<double> mean_recalls;
  std::vector<RetrievalResult> per_fold;
};

// Partitions the pool into n_folds disjoint folds (deterministic in the
// seed) and averages recall_at_k over them.
FoldedRecall recall_folds(const ModelParams& params, const ModelConfig& cfg, const Corpus& corpus, const std::vector<int>& pool_image_ids,
                          const std::vector<int>& ks, Direction dir, int n_folds, std::uint64_t seed);

}  // namespace coloc
