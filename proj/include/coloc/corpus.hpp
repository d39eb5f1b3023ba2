#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coloc/rng.hpp"
#include "coloc/tensor.hpp"

namespace coloc {

// Half-open pixel box: x in [x0, x1), y in [y0, y1).
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  int area() const { return (x1 - x0) * (y1 - y0); }
  bool operator==(const BoundingBox&) const = default;
};

double box_iou(const BoundingBox& a, const BoundingBox& b);

enum class ShapeKind { Square, Circle, Triangle, Bar };

struct SceneObject {
  ShapeKind shape = ShapeKind::Square;
  int color = 0;  // palette index, doubles as the color word
  int size = 0;   // 0 small, 1 big
  BoundingBox box;
};

// Geometry source of truth: whether the object's shape covers pixel
// (x, y). The renderer paints exactly these pixels, so the tight pixel
// extent of an object always equals its stored box.
bool object_covers(const SceneObject& obj, int x, int y);

struct CaptionSpan {
  int start = 0;  // token interval, half-open
  int end = 0;
  std::vector<BoundingBox> boxes;  // every box this phrase grounds to
};

struct GroundedCaption {
  int caption_id = -1;
  int image_id = -1;
  std::vector<int> tokens;
  std::vector<CaptionSpan> spans;
};

struct CorpusRecord {
  int image_id = -1;
  Tensor image;  // [H x W x 3], values in [0,1]
  std::vector<SceneObject> objects;
  std::vector<int> caption_ids;  // into Corpus::captions
};

struct Vocabulary {
  std::vector<std::string> words;

  int size() const { return static_cast<int>(words.size()); }
  const std::string& word(int id) const;
  int id(const std::string& w) const;  // DataError if unknown

  static Vocabulary standard();
};

struct GenConfig {
  int image_h = 32;
  int image_w = 32;
  int min_objects = 1;
  int max_objects = 4;
  // chance that an image with >= 2 objects carries a duplicated
  // (shape, color) category, giving one phrase multiple boxes
  double dup_fraction = 0.25;
  int min_captions = 1;
  int max_captions = 3;
  double size_word_p = 0.3;  // chance a phrase mentions small/big
  bool color_words = true;   // false: phrases are bare shape words (length 1)
  double background_noise = 0.05;
  double max_iou = 0.1;
  int max_place_retries = 200;
  int max_caption_len = 12;
  int num_images = 1;

  void validate() const;
  // Analytic mean of distinct categories (== phrase spans) per caption.
  double expected_phrases_per_caption() const;
};

struct Corpus {
  int schema = 1;
  std::uint64_t seed = 0;
  GenConfig config;
  Vocabulary vocab;
  std::vector<CorpusRecord> images;      // image_id == index
  std::vector<GroundedCaption> captions;  // caption_id == index

  const GroundedCaption& caption(int id) const;
  const CorpusRecord& record(int image_id) const;
};

Corpus generate_corpus(const GenConfig& cfg, std::uint64_t seed);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

struct SplitIds {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

// Deterministic partition of image ids; every fraction must yield a
// non-empty part.
SplitIds split_corpus(const Corpus& corpus, double train_frac, double val_frac, double test_frac, std::uint64_t seed);

}  // namespace coloc
