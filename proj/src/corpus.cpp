#include "coloc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "coloc/checkpoint.hpp"
#include "coloc/errors.hpp"

namespace fs = std::filesystem;

namespace coloc {

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  const int iw = std::max(0, ix1 - ix0), ih = std::max(0, iy1 - iy0);
  const double inter = static_cast<double>(iw) * ih;
  const double uni = static_cast<double>(a.area()) + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

bool object_covers(const SceneObject& obj, int x, int y) {
  const BoundingBox& b = obj.box;
  if (!b.contains(x, y)) return false;
  const int lx = x - b.x0, ly = y - b.y0;
  const int w = b.x1 - b.x0, h = b.y1 - b.y0;
  switch (obj.shape) {
    case ShapeKind::Square:
    case ShapeKind::Bar:
      return true;  // filled rectangle
    case ShapeKind::Circle: {
      // odd side, inscribed disc; touches all four box edges
      const double r = (w - 1) / 2.0;
      const double dx = lx - r, dy = ly - r;
      return dx * dx + dy * dy <= r * r + 1e-9;
    }
    case ShapeKind::Triangle: {
      // apex at top center, full-width base at the bottom row
      const double cx = (w - 1) / 2.0;
      const double half = h > 1 ? cx * ly / (h - 1) : cx;
      return std::abs(lx - cx) <= half + 1e-9;
    }
  }
  return false;
}

namespace {

constexpr int kNumColors = 8;
constexpr int kNumShapes = 4;
constexpr int kColorBase = 0;
constexpr int kShapeBase = 8;
constexpr int kSizeBase = 12;

const double kPalette[kNumColors][3] = {
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}, {1, 0.5, 0},
};

// (w, h) per shape and size; tuned so <= 4 objects fit a 32x32 scene
// with pairwise IoU <= 0.1
void shape_dims(ShapeKind s, int size, int* w, int* h) {
  switch (s) {
    case ShapeKind::Square: *w = size ? 9 : 5; *h = *w; return;
    case ShapeKind::Circle: *w = size ? 9 : 5; *h = *w; return;
    case ShapeKind::Triangle: *w = size ? 11 : 7; *h = size ? 8 : 5; return;
    case ShapeKind::Bar: *w = size ? 14 : 10; *h = size ? 5 : 3; return;
  }
  *w = *h = 0;
}

}  // namespace

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw IndexError("word id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  return words[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& w) const {
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == w) return static_cast<int>(i);
  }
  throw DataError("word '" + w + "' not in vocabulary");
}

Vocabulary Vocabulary::standard() {
  Vocabulary v;
  v.words = {
      // colors (ids 0-7, aligned with the palette)
      "red", "green", "blue", "yellow", "magenta", "cyan", "white", "orange",
      // shapes (ids 8-11, aligned with ShapeKind)
      "square", "circle", "triangle", "bar",
      // sizes (ids 12-13)
      "small", "big",
      // glue
      "a", "the", "next", "to", "and", "is", "there", "scene", "with", "left", "right", "top", "bottom", "near", "above", "below", "beside", "shows",
      "image", "contains", "one", "two", "three", "four", "this", "has",
  };
  return v;
}

void GenConfig::validate() const {
  if (image_h < 16 || image_w < 16) throw ConfigError("scene size must be at least 16x16");
  if (min_objects < 1 || max_objects < min_objects || max_objects > 4) throw ConfigError("object count range must satisfy 1 <= min <= max <= 4");
  if (dup_fraction < 0.0 || dup_fraction > 1.0) throw ConfigError("dup_fraction must be in [0,1]");
  if (min_captions < 1 || max_captions < min_captions || max_captions > 5) throw ConfigError("captions per image must satisfy 1 <= min <= max <= 5");
  if (size_word_p < 0.0 || size_word_p > 1.0) throw ConfigError("size_word_p must be in [0,1]");
  if (background_noise < 0.0 || background_noise >= 0.5) throw ConfigError("background_noise must be in [0,0.5)");
  if (max_iou < 0.0 || max_iou >= 1.0) throw ConfigError("max_iou must be in [0,1)");
  if (max_place_retries < 1) throw ConfigError("max_place_retries must be positive");
  if (num_images < 1) throw ConfigError("num_images must be >= 1");
  const int phrase_min = color_words ? 2 : 1;
  const int worst = max_objects * (phrase_min + 1);  // intro + phrases + connectors
  if (max_caption_len < worst) {
    throw ConfigError("max_caption_len " + std::to_string(max_caption_len) + " cannot fit " + std::to_string(max_objects) + " phrases (needs " +
                      std::to_string(worst) + ")");
  }
}

double GenConfig::expected_phrases_per_caption() const {
  const int span = max_objects - min_objects + 1;
  double mean_objects = 0.0, p_multi = 0.0;
  for (int n = min_objects; n <= max_objects; ++n) {
    mean_objects += static_cast<double>(n) / span;
    if (n >= 2) p_multi += 1.0 / span;
  }
  return mean_objects - dup_fraction * p_multi;
}

const GroundedCaption& Corpus::caption(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= captions.size()) throw IndexError("caption id " + std::to_string(id) + " out of range");
  return captions[static_cast<std::size_t>(id)];
}

const CorpusRecord& Corpus::record(int image_id) const {
  if (image_id < 0 || static_cast<std::size_t>(image_id) >= images.size()) throw IndexError("image id " + std::to_string(image_id) + " out of range");
  return images[static_cast<std::size_t>(image_id)];
}

namespace {

// Distinct categories present in a scene, in first-appearance order.
struct Category {
  int key = 0;
  int shape = 0;
  int color = 0;                   // meaningful only when color_words
  std::vector<const SceneObject*> members;
};

std::vector<Category> group_categories(const std::vector<SceneObject>& objects, bool color_words) {
  std::vector<Category> cats;
  for (const SceneObject& o : objects) {
    const int key = color_words ? static_cast<int>(o.shape) * kNumColors + o.color : static_cast<int>(o.shape);
    auto it = std::find_if(cats.begin(), cats.end(), [&](const Category& c) { return c.key == key; });
    if (it == cats.end()) {
      cats.push_back({key, static_cast<int>(o.shape), o.color, {&o}});
    } else {
      it->members.push_back(&o);
    }
  }
  return cats;
}

GroundedCaption make_caption(const std::vector<SceneObject>& objects, const GenConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  const int id_a = vocab.id("a");
  const int id_the = vocab.id("the");
  const int id_next = vocab.id("next");
  const int id_to = vocab.id("to");
  const std::vector<int> conns = {vocab.id("and"), vocab.id("near"), vocab.id("above"), vocab.id("below"), vocab.id("beside")};

  std::vector<Category> cats = group_categories(objects, cfg.color_words);
  rng.shuffle(cats);
  const int k = static_cast<int>(cats.size());
  const int phrase_min = cfg.color_words ? 2 : 1;

  GroundedCaption cap;
  auto& toks = cap.tokens;
  const auto left = [&] { return cfg.max_caption_len - static_cast<int>(toks.size()); };

  toks.push_back(rng.bernoulli(0.5) ? id_a : id_the);
  for (int i = 0; i < k; ++i) {
    const Category& cat = cats[static_cast<std::size_t>(i)];
    const int rest_min = (k - 1 - i) * (1 + phrase_min);
    if (i > 0) {
      if (left() >= 2 + phrase_min + rest_min && rng.bernoulli(0.3)) {
        toks.push_back(id_next);
        toks.push_back(id_to);
      } else {
        toks.push_back(conns[static_cast<std::size_t>(rng.below(static_cast<int>(conns.size())))]);
      }
      if (left() >= 1 + phrase_min + rest_min && rng.bernoulli(0.5)) toks.push_back(rng.bernoulli(0.5) ? id_a : id_the);
    }
    CaptionSpan span;
    span.start = static_cast<int>(toks.size());
    // size words only for unambiguous single-object phrases
    if (cfg.color_words && cat.members.size() == 1 && left() >= phrase_min + 1 + rest_min && rng.bernoulli(cfg.size_word_p)) {
      toks.push_back(kSizeBase + cat.members.front()->size);
    }
    if (cfg.color_words) toks.push_back(kColorBase + cat.color);
    toks.push_back(kShapeBase + cat.shape);
    span.end = static_cast<int>(toks.size());
    for (const SceneObject* o : cat.members) span.boxes.push_back(o->box);
    cap.spans.push_back(std::move(span));
  }
  return cap;
}

CorpusRecord make_scene(const GenConfig& cfg, Rng& rng, int image_id) {
  CorpusRecord rec;
  rec.image_id = image_id;

  const int n_obj = rng.range(cfg.min_objects, cfg.max_objects);
  const bool want_dup = n_obj >= 2 && rng.bernoulli(cfg.dup_fraction);
  const int n_cats = want_dup ? n_obj - 1 : n_obj;
  const int cat_space = cfg.color_words ? kNumShapes * kNumColors : kNumShapes;
  if (n_cats > cat_space) throw DataError("cannot draw " + std::to_string(n_cats) + " distinct categories from " + std::to_string(cat_space));
  const std::vector<int> cat_ids = rng.sample_without_replacement(cat_space, n_cats);

  const auto make_object = [&](int cat) {
    SceneObject o;
    if (cfg.color_words) {
      o.shape = static_cast<ShapeKind>(cat / kNumColors);
      o.color = cat % kNumColors;
    } else {
      o.shape = static_cast<ShapeKind>(cat);
      o.color = rng.below(kNumColors);
    }
    o.size = rng.below(2);
    return o;
  };
  for (int i = 0; i < n_cats; ++i) rec.objects.push_back(make_object(cat_ids[static_cast<std::size_t>(i)]));
  if (want_dup) {
    SceneObject dup = make_object(cat_ids[0]);
    if (cfg.color_words) dup.color = rec.objects[0].color;  // same category key
    rec.objects.push_back(dup);
  }
  rng.shuffle(rec.objects);

  // Placement with bounded rejection sampling on pairwise IoU.
  for (std::size_t i = 0; i < rec.objects.size(); ++i) {
    SceneObject& o = rec.objects[i];
    int w = 0, h = 0;
    shape_dims(o.shape, o.size, &w, &h);
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_place_retries && !placed; ++attempt) {
      const int x0 = rng.below(cfg.image_w - w + 1);
      const int y0 = rng.below(cfg.image_h - h + 1);
      const BoundingBox box{x0, y0, x0 + w, y0 + h};
      placed = true;
      for (std::size_t j = 0; j < i; ++j) {
        if (box_iou(box, rec.objects[j].box) > cfg.max_iou) {
          placed = false;
          break;
        }
      }
      if (placed) o.box = box;
    }
    if (!placed) {
      throw DataError("scene " + std::to_string(image_id) + ": could not place object " + std::to_string(i) + " after " +
                      std::to_string(cfg.max_place_retries) + " retries");
    }
  }

  // Render: noisy dark background, then objects in list order.
  rec.image = Tensor({cfg.image_h, cfg.image_w, 3});
  for (int y = 0; y < cfg.image_h; ++y)
    for (int x = 0; x < cfg.image_w; ++x)
      for (int c = 0; c < 3; ++c) rec.image.at(y, x, c) = 0.08 + rng.uniform() * cfg.background_noise;
  for (const SceneObject& o : rec.objects) {
    const double jitter = 0.85 + 0.15 * rng.uniform();
    for (int y = o.box.y0; y < o.box.y1; ++y)
      for (int x = o.box.x0; x < o.box.x1; ++x) {
        if (!object_covers(o, x, y)) continue;
        for (int c = 0; c < 3; ++c) rec.image.at(y, x, c) = kPalette[o.color][c] * jitter;
      }
  }
  return rec;
}

}  // namespace

Corpus generate_corpus(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();

  Corpus corpus;
  corpus.seed = seed;
  corpus.config = cfg;
  corpus.vocab = Vocabulary::standard();

  for (int img = 0; img < cfg.num_images; ++img) {
    Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(img)));
    CorpusRecord rec = make_scene(cfg, rng, img);
    const int n_cap = rng.range(cfg.min_captions, cfg.max_captions);
    for (int c = 0; c < n_cap; ++c) {
      GroundedCaption cap = make_caption(rec.objects, cfg, corpus.vocab, rng);
      cap.image_id = img;
      cap.caption_id = static_cast<int>(corpus.captions.size());
      rec.caption_ids.push_back(cap.caption_id);
      corpus.captions.push_back(std::move(cap));
    }
    corpus.images.push_back(std::move(rec));
  }
  return corpus;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& kv_get(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(path + ": missing key '" + key + "'");
  return it->second;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");

  {
    std::ofstream m(fs::path(dir) / "manifest.txt");
    if (!m) throw FormatError("cannot write manifest in " + dir);
    const GenConfig& c = corpus.config;
    m << "schema=" << corpus.schema << "\n";
    m << "seed=" << corpus.seed << "\n";
    m << "images=" << corpus.images.size() << "\n";
    m << "captions=" << corpus.captions.size() << "\n";
    m << "image_h=" << c.image_h << "\nimage_w=" << c.image_w << "\n";
    m << "min_objects=" << c.min_objects << "\nmax_objects=" << c.max_objects << "\n";
    m << "dup_fraction=" << fmt_double(c.dup_fraction) << "\n";
    m << "min_captions=" << c.min_captions << "\nmax_captions=" << c.max_captions << "\n";
    m << "size_word_p=" << fmt_double(c.size_word_p) << "\n";
    m << "color_words=" << (c.color_words ? 1 : 0) << "\n";
    m << "background_noise=" << fmt_double(c.background_noise) << "\n";
    m << "max_iou=" << fmt_double(c.max_iou) << "\n";
    m << "max_place_retries=" << c.max_place_retries << "\n";
    m << "max_caption_len=" << c.max_caption_len << "\n";
    m << "num_images=" << c.num_images << "\n";
  }

  {
    std::ofstream v(fs::path(dir) / "vocab.txt");
    if (!v) throw FormatError("cannot write vocab in " + dir);
    for (const std::string& w : corpus.vocab.words) v << w << "\n";
  }

  {
    std::ofstream a(fs::path(dir) / "annotations.txt");
    if (!a) throw FormatError("cannot write annotations in " + dir);
    for (const GroundedCaption& cap : corpus.captions) {
      a << cap.image_id << "\t" << cap.caption_id << "\t";
      for (std::size_t i = 0; i < cap.tokens.size(); ++i) a << (i ? " " : "") << cap.tokens[i];
      a << "\t";
      for (std::size_t s = 0; s < cap.spans.size(); ++s) {
        const CaptionSpan& sp = cap.spans[s];
        if (s) a << " ";
        a << sp.start << ":" << sp.end << ":";
        for (std::size_t b = 0; b < sp.boxes.size(); ++b) {
          const BoundingBox& bb = sp.boxes[b];
          if (b) a << ";";
          a << bb.x0 << "," << bb.y0 << "," << bb.x1 << "," << bb.y1;
        }
      }
      a << "\n";
    }
  }

  for (const CorpusRecord& rec : corpus.images) {
    Tensor objs({static_cast<int>(rec.objects.size()), 7});
    for (std::size_t i = 0; i < rec.objects.size(); ++i) {
      const SceneObject& o = rec.objects[i];
      const double row[7] = {static_cast<double>(static_cast<int>(o.shape)), static_cast<double>(o.color), static_cast<double>(o.size),
                             static_cast<double>(o.box.x0),                  static_cast<double>(o.box.y0), static_cast<double>(o.box.x1),
                             static_cast<double>(o.box.y1)};
      for (int j = 0; j < 7; ++j) objs.at(static_cast<int>(i), j) = row[j];
    }
    const std::string path = (fs::path(dir) / "images" / (std::to_string(rec.image_id) + ".ten")).string();
    save_tensors(path, {{"image", rec.image}, {"objects", objs}});
  }
}

Corpus load_corpus(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  const auto kv = read_kv_file(manifest_path);

  Corpus corpus;
  corpus.schema = std::atoi(kv_get(kv, "schema", manifest_path).c_str());
  if (corpus.schema != 1) throw FormatError(manifest_path + ": unsupported schema version " + std::to_string(corpus.schema));
  corpus.seed = std::strtoull(kv_get(kv, "seed", manifest_path).c_str(), nullptr, 10);
  GenConfig& c = corpus.config;
  c.image_h = std::atoi(kv_get(kv, "image_h", manifest_path).c_str());
  c.image_w = std::atoi(kv_get(kv, "image_w", manifest_path).c_str());
  c.min_objects = std::atoi(kv_get(kv, "min_objects", manifest_path).c_str());
  c.max_objects = std::atoi(kv_get(kv, "max_objects", manifest_path).c_str());
  c.dup_fraction = std::strtod(kv_get(kv, "dup_fraction", manifest_path).c_str(), nullptr);
  c.min_captions = std::atoi(kv_get(kv, "min_captions", manifest_path).c_str());
  c.max_captions = std::atoi(kv_get(kv, "max_captions", manifest_path).c_str());
  c.size_word_p = std::strtod(kv_get(kv, "size_word_p", manifest_path).c_str(), nullptr);
  c.color_words = std::atoi(kv_get(kv, "color_words", manifest_path).c_str()) != 0;
  c.background_noise = std::strtod(kv_get(kv, "background_noise", manifest_path).c_str(), nullptr);
  c.max_iou = std::strtod(kv_get(kv, "max_iou", manifest_path).c_str(), nullptr);
  c.max_place_retries = std::atoi(kv_get(kv, "max_place_retries", manifest_path).c_str());
  c.max_caption_len = std::atoi(kv_get(kv, "max_caption_len", manifest_path).c_str());
  c.num_images = std::atoi(kv_get(kv, "num_images", manifest_path).c_str());
  const int n_images = std::atoi(kv_get(kv, "images", manifest_path).c_str());
  const int n_captions = std::atoi(kv_get(kv, "captions", manifest_path).c_str());

  {
    const std::string vocab_path = (fs::path(dir) / "vocab.txt").string();
    std::ifstream v(vocab_path);
    if (!v) throw FormatError("cannot open " + vocab_path);
    std::string w;
    while (std::getline(v, w)) {
      if (!w.empty()) corpus.vocab.words.push_back(w);
    }
    if (corpus.vocab.words.empty()) throw FormatError(vocab_path + " is empty");
  }

  corpus.images.resize(static_cast<std::size_t>(n_images));
  for (int img = 0; img < n_images; ++img) {
    const std::string path = (fs::path(dir) / "images" / (std::to_string(img) + ".ten")).string();
    auto tensors = load_tensors(path);
    CorpusRecord& rec = corpus.images[static_cast<std::size_t>(img)];
    rec.image_id = img;
    bool have_image = false, have_objects = false;
    for (auto& [name, t] : tensors) {
      if (name == "image") {
        if (t.rank() != 3 || t.dim(0) != c.image_h || t.dim(1) != c.image_w || t.dim(2) != 3) {
          throw FormatError(path + ": image tensor has shape " + shape_to_string(t.shape()));
        }
        rec.image = std::move(t);
        have_image = true;
      } else if (name == "objects") {
        if (t.rank() != 2 || t.dim(1) != 7) throw FormatError(path + ": objects tensor has shape " + shape_to_string(t.shape()));
        for (int i = 0; i < t.dim(0); ++i) {
          SceneObject o;
          o.shape = static_cast<ShapeKind>(static_cast<int>(t.at(i, 0)));
          o.color = static_cast<int>(t.at(i, 1));
          o.size = static_cast<int>(t.at(i, 2));
          o.box = {static_cast<int>(t.at(i, 3)), static_cast<int>(t.at(i, 4)), static_cast<int>(t.at(i, 5)), static_cast<int>(t.at(i, 6))};
          if (o.box.x0 >= o.box.x1 || o.box.y0 >= o.box.y1) throw FormatError(path + ": object " + std::to_string(i) + " has a degenerate box");
          rec.objects.push_back(o);
        }
        have_objects = true;
      }
    }
    if (!have_image || !have_objects) throw FormatError(path + ": missing image or objects tensor");
  }

  {
    const std::string ann_path = (fs::path(dir) / "annotations.txt").string();
    std::ifstream a(ann_path);
    if (!a) throw FormatError("cannot open " + ann_path);
    std::string line;
    int line_no = 0;
    while (std::getline(a, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string img_s, cap_s, toks_s, spans_s;
      if (!std::getline(ls, img_s, '\t') || !std::getline(ls, cap_s, '\t') || !std::getline(ls, toks_s, '\t') || !std::getline(ls, spans_s)) {
        throw FormatError(ann_path + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields");
      }
      GroundedCaption cap;
      cap.image_id = std::atoi(img_s.c_str());
      cap.caption_id = std::atoi(cap_s.c_str());
      {
        std::istringstream ts(toks_s);
        int tok;
        while (ts >> tok) {
          if (tok < 0 || tok >= corpus.vocab.size()) throw DataError(ann_path + ":" + std::to_string(line_no) + ": token id " + std::to_string(tok) +
                                                                     " outside vocabulary of size " + std::to_string(corpus.vocab.size()));
          cap.tokens.push_back(tok);
        }
      }
      {
        std::istringstream ss(spans_s);
        std::string span_s;
        while (ss >> span_s) {
          CaptionSpan sp;
          int x0, y0, x1, y1;
          int consumed = 0;
          if (std::sscanf(span_s.c_str(), "%d:%d:%n", &sp.start, &sp.end, &consumed) != 2) {
            throw FormatError(ann_path + ":" + std::to_string(line_no) + ": malformed span '" + span_s + "'");
          }
          std::istringstream bs(span_s.substr(static_cast<std::size_t>(consumed)));
          std::string box_s;
          while (std::getline(bs, box_s, ';')) {
            if (std::sscanf(box_s.c_str(), "%d,%d,%d,%d", &x0, &y0, &x1, &y1) != 4) {
              throw FormatError(ann_path + ":" + std::to_string(line_no) + ": malformed box '" + box_s + "'");
            }
            sp.boxes.push_back({x0, y0, x1, y1});
          }
          if (sp.boxes.empty()) throw FormatError(ann_path + ":" + std::to_string(line_no) + ": span without boxes");
          cap.spans.push_back(std::move(sp));
        }
      }
      if (cap.image_id < 0 || cap.image_id >= n_images) {
        throw DataError(ann_path + ":" + std::to_string(line_no) + ": image id " + std::to_string(cap.image_id) + " out of range");
      }
      if (cap.caption_id != static_cast<int>(corpus.captions.size())) {
        throw FormatError(ann_path + ":" + std::to_string(line_no) + ": caption ids must be dense and ordered");
      }
      corpus.images[static_cast<std::size_t>(cap.image_id)].caption_ids.push_back(cap.caption_id);
      corpus.captions.push_back(std::move(cap));
    }
    if (static_cast<int>(corpus.captions.size()) != n_captions) {
      throw FormatError(ann_path + ": manifest promises " + std::to_string(n_captions) + " captions, found " + std::to_string(corpus.captions.size()));
    }
  }
  return corpus;
}

SplitIds split_corpus(const Corpus& corpus, double train_frac, double val_frac, double test_frac, std::uint64_t seed) {
  const double sum = train_frac + val_frac + test_frac;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1, got " + fmt_double(sum));
  const int n = static_cast<int>(corpus.images.size());
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed, 0x73706c69));  // "spli"
  rng.shuffle(ids);

  const int b0 = static_cast<int>(std::llround(train_frac * n));
  const int b1 = static_cast<int>(std::llround((train_frac + val_frac) * n));
  SplitIds out;
  out.train.assign(ids.begin(), ids.begin() + b0);
  out.val.assign(ids.begin() + b0, ids.begin() + b1);
  out.test.assign(ids.begin() + b1, ids.end());
  if (out.train.empty() || out.val.empty() || out.test.empty()) throw ConfigError("every split must be non-empty");
  return out;
}

}  // namespace coloc
