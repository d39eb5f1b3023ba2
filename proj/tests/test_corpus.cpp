#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "coloc/corpus.hpp"
#include "coloc/errors.hpp"

using namespace coloc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

BoundingBox tight_extent(const SceneObject& o) {
  BoundingBox e{1 << 30, 1 << 30, -1, -1};
  for (int y = o.box.y0; y < o.box.y1; ++y)
    for (int x = o.box.x0; x < o.box.x1; ++x) {
      if (!object_covers(o, x, y)) continue;
      e.x0 = std::min(e.x0, x);
      e.y0 = std::min(e.y0, y);
      e.x1 = std::max(e.x1, x + 1);
      e.y1 = std::max(e.y1, y + 1);
    }
  return e;
}

}  // namespace

TEST_CASE("box geometry") {
  CHECK(box_iou({0, 0, 2, 2}, {0, 0, 2, 2}) == doctest::Approx(1.0));
  CHECK(box_iou({0, 0, 2, 2}, {2, 2, 4, 4}) == 0.0);
  CHECK(box_iou({0, 0, 2, 2}, {1, 0, 3, 2}) == doctest::Approx(1.0 / 3.0));
  CHECK(BoundingBox{1, 2, 4, 5}.contains(1, 2));
  CHECK_FALSE(BoundingBox{1, 2, 4, 5}.contains(4, 2));  // half-open
}

TEST_CASE("shape coverage predicates") {
  SceneObject sq{ShapeKind::Square, 0, 0, {0, 0, 5, 5}};
  SceneObject bar{ShapeKind::Bar, 0, 0, {0, 0, 10, 3}};
  SceneObject circ{ShapeKind::Circle, 0, 0, {0, 0, 5, 5}};
  SceneObject tri{ShapeKind::Triangle, 0, 0, {0, 0, 7, 5}};

  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) CHECK(object_covers(sq, x, y));
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 10; ++x) CHECK(object_covers(bar, x, y));

  CHECK(object_covers(circ, 2, 2));       // center
  CHECK(object_covers(circ, 0, 2));       // touches left edge
  CHECK(object_covers(circ, 2, 4));       // touches bottom edge
  CHECK_FALSE(object_covers(circ, 0, 0));  // corner outside the disc

  CHECK(object_covers(tri, 3, 0));        // apex
  CHECK_FALSE(object_covers(tri, 0, 0));
  for (int x = 0; x < 7; ++x) CHECK(object_covers(tri, x, 4));  // full base
  CHECK_FALSE(object_covers(tri, 7, 4));                        // outside the box

  SUBCASE("tight extent equals the stored box across generated scenes") {
    GenConfig cfg;
    cfg.min_objects = 4;
    cfg.max_objects = 4;
    cfg.num_images = 25;
    Corpus c = generate_corpus(cfg, 7);
    int seen = 0;
    for (const CorpusRecord& rec : c.images)
      for (const SceneObject& o : rec.objects) {
        CHECK(tight_extent(o) == o.box);
        ++seen;
      }
    CHECK(seen == 100);
  }
}

TEST_CASE("standard vocabulary is pinned") {
  Vocabulary v = Vocabulary::standard();
  CHECK(v.size() == 40);
  CHECK(v.id("red") == 0);
  CHECK(v.id("orange") == 7);
  CHECK(v.id("square") == 8);
  CHECK(v.id("bar") == 11);
  CHECK(v.id("small") == 12);
  CHECK(v.id("big") == 13);
  CHECK(v.id("a") == 14);
  CHECK(v.word(15) == "the");
  CHECK_THROWS_AS(v.id("purple"), DataError);
  CHECK_THROWS_AS(v.word(40), IndexError);
}

TEST_CASE("generated corpora satisfy the documented invariants") {
  GenConfig cfg;
  cfg.num_images = 60;
  Corpus c = generate_corpus(cfg, 2024);
  REQUIRE(c.images.size() == 60);
  REQUIRE(!c.captions.empty());

  for (const CorpusRecord& rec : c.images) {
    CHECK(rec.image.shape() == std::vector<int>{32, 32, 3});
    CHECK(!rec.caption_ids.empty());
    CHECK(rec.caption_ids.size() <= 3);
    const int n = static_cast<int>(rec.objects.size());
    CHECK(n >= 1);
    CHECK(n <= 4);
    for (int i = 0; i < n; ++i) {
      const BoundingBox& b = rec.objects[static_cast<std::size_t>(i)].box;
      CHECK(b.x0 >= 0);
      CHECK(b.y0 >= 0);
      CHECK(b.x1 <= 32);
      CHECK(b.y1 <= 32);
      for (int j = 0; j < i; ++j) CHECK(box_iou(b, rec.objects[static_cast<std::size_t>(j)].box) <= cfg.max_iou + 1e-12);
    }
    for (int i = 0; i < rec.image.size(); ++i) {
      CHECK(rec.image.data()[i] >= 0.0);
      CHECK(rec.image.data()[i] <= 1.0);
    }
  }

  for (const GroundedCaption& cap : c.captions) {
    CHECK(!cap.tokens.empty());
    CHECK(static_cast<int>(cap.tokens.size()) <= cfg.max_caption_len);
    for (int t : cap.tokens) {
      CHECK(t >= 0);
      CHECK(t < c.vocab.size());
    }
    CHECK(!cap.spans.empty());
    int prev_end = 0;
    for (const CaptionSpan& sp : cap.spans) {
      CHECK(sp.start >= prev_end);
      CHECK(sp.end > sp.start);
      CHECK(sp.end <= static_cast<int>(cap.tokens.size()));
      prev_end = sp.end;
      CHECK(!sp.boxes.empty());
      // phrase ends with a shape word, preceded by its color word
      const int shape_tok = cap.tokens[static_cast<std::size_t>(sp.end - 1)];
      CHECK(shape_tok >= 8);
      CHECK(shape_tok < 12);
      const int color_tok = cap.tokens[static_cast<std::size_t>(sp.end - 2)];
      CHECK(color_tok >= 0);
      CHECK(color_tok < 8);
      // every box grounds an object of exactly that category
      const CorpusRecord& rec = c.record(cap.image_id);
      for (const BoundingBox& b : sp.boxes) {
        bool found = false;
        for (const SceneObject& o : rec.objects) {
          if (o.box == b) {
            CHECK(static_cast<int>(o.shape) == shape_tok - 8);
            CHECK(o.color == color_tok);
            found = true;
          }
        }
        CHECK(found);
      }
    }
  }

  SUBCASE("same seed reproduces the corpus bit for bit") {
    Corpus d = generate_corpus(cfg, 2024);
    REQUIRE(d.captions.size() == c.captions.size());
    for (std::size_t i = 0; i < c.captions.size(); ++i) {
      CHECK(d.captions[i].tokens == c.captions[i].tokens);
      REQUIRE(d.captions[i].spans.size() == c.captions[i].spans.size());
      for (std::size_t s = 0; s < c.captions[i].spans.size(); ++s) CHECK(d.captions[i].spans[s].boxes == c.captions[i].spans[s].boxes);
    }
    for (std::size_t i = 0; i < c.images.size(); ++i)
      for (int j = 0; j < c.images[i].image.size(); ++j) CHECK(d.images[i].image.data()[j] == c.images[i].image.data()[j]);
  }

  SUBCASE("different seeds differ") {
    Corpus d = generate_corpus(cfg, 2025);
    bool differs = d.captions.size() != c.captions.size();
    if (!differs)
      for (std::size_t i = 0; i < c.captions.size() && !differs; ++i) differs = d.captions[i].tokens != c.captions[i].tokens;
    CHECK(differs);
  }
}

TEST_CASE("single-object scenes give single-span captions") {
  GenConfig cfg;
  cfg.min_objects = 1;
  cfg.max_objects = 1;
  cfg.num_images = 20;
  Corpus c = generate_corpus(cfg, 5);
  for (const GroundedCaption& cap : c.captions) {
    CHECK(cap.spans.size() == 1);
    CHECK(cap.spans[0].boxes.size() == 1);
  }
}

TEST_CASE("bare shape-word phrases when color words are disabled") {
  GenConfig cfg;
  cfg.color_words = false;
  cfg.num_images = 20;
  Corpus c = generate_corpus(cfg, 6);
  for (const GroundedCaption& cap : c.captions)
    for (const CaptionSpan& sp : cap.spans) {
      CHECK(sp.end - sp.start == 1);
      const int tok = cap.tokens[static_cast<std::size_t>(sp.start)];
      CHECK(tok >= 8);
      CHECK(tok < 12);
    }
}

TEST_CASE("phrase statistics track the analytic target") {
  GenConfig cfg;
  cfg.num_images = 500;
  Corpus c = generate_corpus(cfg, 99);
  double total_phrases = 0.0;
  for (const GroundedCaption& cap : c.captions) total_phrases += static_cast<double>(cap.spans.size());
  const double mean = total_phrases / static_cast<double>(c.captions.size());
  const double target = cfg.expected_phrases_per_caption();
  CHECK(mean == doctest::Approx(target).epsilon(0.10));
}

TEST_CASE("infeasible placement raises a generation error") {
  GenConfig cfg;
  cfg.image_h = 16;
  cfg.image_w = 16;
  cfg.min_objects = 4;
  cfg.max_objects = 4;
  cfg.max_iou = 0.0;
  cfg.max_place_retries = 30;
  cfg.num_images = 40;  // enough scenes that one draw of four objects cannot fit
  CHECK_THROWS_AS(generate_corpus(cfg, 3), DataError);
}

TEST_CASE("corpus round trip") {
  TempDir dir("coloc_corpus_rt");
  GenConfig cfg;
  cfg.num_images = 10;
  Corpus c = generate_corpus(cfg, 11);
  save_corpus(c, dir.path.string());
  Corpus d = load_corpus(dir.path.string());

  CHECK(d.schema == c.schema);
  CHECK(d.seed == c.seed);
  CHECK(d.config.num_images == cfg.num_images);
  CHECK(d.config.dup_fraction == cfg.dup_fraction);
  CHECK(d.config.color_words == cfg.color_words);
  CHECK(d.vocab.words == c.vocab.words);
  REQUIRE(d.images.size() == c.images.size());
  REQUIRE(d.captions.size() == c.captions.size());
  for (std::size_t i = 0; i < c.images.size(); ++i) {
    CHECK(d.images[i].image_id == c.images[i].image_id);
    CHECK(d.images[i].caption_ids == c.images[i].caption_ids);
    REQUIRE(d.images[i].objects.size() == c.images[i].objects.size());
    for (std::size_t j = 0; j < c.images[i].objects.size(); ++j) {
      CHECK(d.images[i].objects[j].shape == c.images[i].objects[j].shape);
      CHECK(d.images[i].objects[j].color == c.images[i].objects[j].color);
      CHECK(d.images[i].objects[j].size == c.images[i].objects[j].size);
      CHECK(d.images[i].objects[j].box == c.images[i].objects[j].box);
    }
    for (int j = 0; j < c.images[i].image.size(); ++j) CHECK(d.images[i].image.data()[j] == c.images[i].image.data()[j]);
  }
  for (std::size_t i = 0; i < c.captions.size(); ++i) {
    CHECK(d.captions[i].image_id == c.captions[i].image_id);
    CHECK(d.captions[i].tokens == c.captions[i].tokens);
    REQUIRE(d.captions[i].spans.size() == c.captions[i].spans.size());
    for (std::size_t s = 0; s < c.captions[i].spans.size(); ++s) {
      CHECK(d.captions[i].spans[s].start == c.captions[i].spans[s].start);
      CHECK(d.captions[i].spans[s].end == c.captions[i].spans[s].end);
      CHECK(d.captions[i].spans[s].boxes == c.captions[i].spans[s].boxes);
    }
  }

  SUBCASE("boxes after a round trip still match rendered extents") {
    for (const CorpusRecord& rec : d.images)
      for (const SceneObject& o : rec.objects) CHECK(tight_extent(o) == o.box);
  }

  SUBCASE("truncated image file names the file") {
    const fs::path victim = dir.path / "images" / "3.ten";
    const auto size = fs::file_size(victim);
    fs::resize_file(victim, size / 2);
    try {
      load_corpus(dir.path.string());
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("3.ten") != std::string::npos);
    }
  }

  SUBCASE("schema mismatch is a format error") {
    std::ifstream in(dir.path / "manifest.txt");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    text.replace(text.find("schema=1"), 8, "schema=2");
    std::ofstream(dir.path / "manifest.txt", std::ios::trunc) << text;
    CHECK_THROWS_AS(load_corpus(dir.path.string()), FormatError);
  }
}

TEST_CASE("splits partition the image ids") {
  GenConfig cfg;
  cfg.num_images = 100;
  Corpus c = generate_corpus(cfg, 12);

  SplitIds s = split_corpus(c, 0.8, 0.1, 0.1, 1);
  CHECK(s.train.size() == 80);
  CHECK(s.val.size() == 10);
  CHECK(s.test.size() == 10);

  std::set<int> all;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (int id : *part) {
      CHECK(all.insert(id).second);  // pairwise disjoint
      CHECK(id >= 0);
      CHECK(id < 100);
    }
  CHECK(all.size() == 100);  // union covers the corpus

  SUBCASE("deterministic in the seed") {
    SplitIds t = split_corpus(c, 0.8, 0.1, 0.1, 1);
    CHECK(t.train == s.train);
    CHECK(t.val == s.val);
    CHECK(t.test == s.test);
    SplitIds u = split_corpus(c, 0.8, 0.1, 0.1, 2);
    CHECK(u.train != s.train);
  }

  SUBCASE("degenerate fractions are configuration errors") {
    CHECK_THROWS_AS(split_corpus(c, 1.0, 0.0, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_corpus(c, 0.5, 0.2, 0.2, 1), ConfigError);  // sums to 0.9
  }
}

TEST_CASE("generator configuration validation") {
  GenConfig cfg;
  cfg.num_images = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.num_images = 1;
  cfg.max_caption_len = 8;  // cannot fit 4 phrases
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.max_caption_len = 12;
  cfg.max_objects = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
