#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "coloc/errors.hpp"
#include "coloc/losses.hpp"
#include "coloc/rng.hpp"

using namespace coloc;

namespace {

// Leaf-backed square matrix so gradients can be inspected afterwards.
Tensor score_leaf(Tape& tape, int b, const std::vector<double>& vals, bool grad = false) {
  Tensor m({b, b}, vals);
  m.requires_grad = grad;
  return tape.leaf(m);
}

std::vector<double> random_scores(Rng& rng, int b, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(static_cast<std::size_t>(b) * static_cast<std::size_t>(b));
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Loops every (anchor, impostor) pair in both directions and keeps the
// worst hinge; equivalent to hardest-in-batch mining because the hinge
// is monotone in the impostor score.
double triplet_oracle(int b, const std::vector<double>& s, double eta) {
  const auto at = [&](int i, int j) { return s[static_cast<std::size_t>(i * b + j)]; };
  double total = 0.0;
  for (int j = 0; j < b; ++j) {
    double l1 = 0.0, l2 = 0.0;
    for (int i = 0; i < b; ++i) {
      if (i == j) continue;
      l1 = std::max(l1, std::max(0.0, at(j, i) - at(j, j) + eta));
      l2 = std::max(l2, std::max(0.0, at(i, j) - at(j, j) + eta));
    }
    total += l1 + l2;
  }
  return total / b;
}

double npair_oracle(int b, const std::vector<double>& s) {
  const auto at = [&](int i, int j) { return s[static_cast<std::size_t>(i * b + j)]; };
  double total = 0.0;
  for (int j = 0; j < b; ++j) {
    double row = 0.0, col = 0.0;
    for (int i = 0; i < b; ++i) {
      row += std::exp(at(j, i));
      col += std::exp(at(i, j));
    }
    total += std::log(row) - at(j, j) + std::log(col) - at(j, j);
  }
  return total / b;
}

double softplus(double x) { return std::log1p(std::exp(x)); }

}  // namespace

TEST_CASE("loss and mining names round-trip") {
  CHECK(loss_kind_from_string("npair") == LossKind::NPair);
  CHECK(loss_kind_from_string("triplet") == LossKind::Triplet);
  CHECK(std::string(to_string(LossKind::NPair)) == "npair");
  CHECK(std::string(to_string(LossKind::Triplet)) == "triplet");
  CHECK_THROWS_AS(loss_kind_from_string("contrastive"), ConfigError);

  CHECK(mining_from_string("hardest") == Mining::Hardest);
  CHECK(mining_from_string("random") == Mining::Random);
  CHECK(std::string(to_string(Mining::Hardest)) == "hardest");
  CHECK(std::string(to_string(Mining::Random)) == "random");
  CHECK_THROWS_AS(mining_from_string("semi-hard"), ConfigError);
}

TEST_CASE("score matrix wrapper") {
  SUBCASE("exposes the wrapped values") {
    Tape tape;
    ScoreMatrix m = ScoreMatrix::from_values(tape, Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    CHECK(m.b == 2);
    CHECK(m.value(0, 0) == 1.0);
    CHECK(m.value(0, 1) == 2.0);
    CHECK(m.value(1, 0) == 3.0);
    CHECK(m.value(1, 1) == 4.0);
  }
  SUBCASE("rejects non-square input") {
    Tape tape;
    CHECK_THROWS_AS(ScoreMatrix::from_values(tape, Tensor({2, 3})), ShapeError);
    CHECK_THROWS_AS(ScoreMatrix::from_values(tape, Tensor({4})), ShapeError);
  }
  SUBCASE("bounds-checks lookups") {
    Tape tape;
    ScoreMatrix m = ScoreMatrix::from_values(tape, Tensor({2, 2}, {0.0, 0.0, 0.0, 0.0}));
    CHECK_THROWS_AS(m.score(2, 0), IndexError);
    CHECK_THROWS_AS(m.score(0, -1), IndexError);
  }
}

TEST_CASE("triplet loss closed forms") {
  SUBCASE("satisfied margins give zero loss") {
    Tape tape;
    Tensor vals = Tensor::zeros({3, 3});
    for (int j = 0; j < 3; ++j) vals.at(j, j) = 10.0;
    ScoreMatrix m = ScoreMatrix::from_values(tape, vals);
    CHECK(triplet_loss(tape, m, TripletConfig{0.2, Mining::Hardest}).item() == 0.0);
  }
  SUBCASE("all-equal scores pay the full margin") {
    Tape tape;
    ScoreMatrix m = ScoreMatrix::from_values(tape, Tensor({2, 2}, {0.7, 0.7, 0.7, 0.7}));
    CHECK(triplet_loss(tape, m, TripletConfig{0.5, Mining::Hardest}).item() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("gap exactly equal to the margin sits on the hinge") {
    Tape tape;
    Tensor vals({2, 2}, {0.3, 0.0, 0.0, 0.3});  // diagonal leads by exactly eta
    ScoreMatrix m = ScoreMatrix::from_values(tape, vals);
    CHECK(triplet_loss(tape, m, TripletConfig{0.3, Mining::Hardest}).item() == 0.0);
  }
}

TEST_CASE("triplet loss matches the exhaustive mining oracle") {
  Rng rng(411);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 2 + rng.below(5);
    const double eta = rng.uniform(0.0, 0.8);
    const std::vector<double> vals = random_scores(rng, b);
    Tape tape;
    ScoreMatrix m = ScoreMatrix::from_values(tape, Tensor({b, b}, vals));
    const double got = triplet_loss(tape, m, TripletConfig{eta, Mining::Hardest}).item();
    CHECK(got == doctest::Approx(triplet_oracle(b, vals, eta)).epsilon(1e-12));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("triplet loss is zero exactly when every hardest margin holds") {
  Rng rng(412);
  int zeros = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int b = 2 + rng.below(3);
    std::vector<double> vals = random_scores(rng, b, -0.5, 0.5);
    // push diagonals up on half the trials so both outcomes appear
    if (trial % 2 == 0) {
      for (int j = 0; j < b; ++j) vals[static_cast<std::size_t>(j * b + j)] += 2.0;
    }
    const double eta = 0.2;
    Tape tape;
    ScoreMatrix m = ScoreMatrix::from_values(tape, Tensor({b, b}, vals));
    const double got = triplet_loss(tape, m, TripletConfig{eta, Mining::Hardest}).item();
    const bool margins_hold = triplet_oracle(b, vals, eta) == 0.0;
    CHECK((got == 0.0) == margins_hold);
    if (got == 0.0) ++zeros;
  }
  CHECK(zeros > 50);  // both branches exercised
  CHECK(zeros < 150);
}

TEST_CASE("random mining replays the rng stream") {
  Rng scores_rng(413);
  const int b = 4;
  const std::vector<double> vals = random_scores(scores_rng, b);

  Tape t1;
  Rng mine1(99);
  const double first = triplet_loss(t1, ScoreMatrix::from_values(t1, Tensor({b, b}, vals)), TripletConfig{0.2, Mining::Random}, &mine1).item();

  Tape t2;
  Rng mine2(99);
  const double second = triplet_loss(t2, ScoreMatrix::from_values(t2, Tensor({b, b}, vals)), TripletConfig{0.2, Mining::Random}, &mine2).item();
  CHECK(first == second);

  // replicate the draw order by hand: per anchor, caption impostor then
  // image impostor, each skipping the anchor index
  Rng mine3(99);
  const auto at = [&](int i, int j) { return vals[static_cast<std::size_t>(i * b + j)]; };
  double expected = 0.0;
  for (int j = 0; j < b; ++j) {
    int rc = mine3.below(b - 1);
    const int imp_c = rc >= j ? rc + 1 : rc;
    int ri = mine3.below(b - 1);
    const int imp_i = ri >= j ? ri + 1 : ri;
    expected += std::max(0.0, at(j, imp_c) - at(j, j) + 0.2);
    expected += std::max(0.0, at(imp_i, j) - at(j, j) + 0.2);
  }
  expected /= b;
  CHECK(first == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("npair loss closed forms") {
  SUBCASE("all-equal scores give 2 log B") {
    for (int b = 2; b <= 5; ++b) {
      Tape tape;
      Tensor vals({b, b});
      for (double& v : vals.values()) v = -1.3;
      ScoreMatrix m = ScoreMatrix::from_values(tape, vals);
      CHECK(npair_loss(tape, m).item() == doctest::Approx(2.0 * std::log(b)).epsilon(1e-12));
    }
  }
  SUBCASE("uniform diagonal gap reduces to the soft margin") {
    for (double delta : {0.7, -0.3, 2.5}) {
      Tape tape;
      const double off = 0.4;
      Tensor vals({2, 2}, {off + delta, off, off, off + delta});
      ScoreMatrix m = ScoreMatrix::from_values(tape, vals);
      CHECK(npair_loss(tape, m).item() == doctest::Approx(2.0 * softplus(-delta)).epsilon(1e-10));
    }
  }
  SUBCASE("general 2x2 is a mean of four softplus terms") {
    Rng rng(414);
    for (int trial = 0; trial < 20; ++trial) {
      const std::vector<double> v = random_scores(rng, 2);
      Tape tape;
      ScoreMatrix m = ScoreMatrix::from_values(tape, Tensor({2, 2}, v));
      const double expected = 0.5 * (softplus(v[1] - v[0]) + softplus(v[2] - v[0]) + softplus(v[2] - v[3]) + softplus(v[1] - v[3]));
      CHECK(std::abs(npair_loss(tape, m).item() - expected) < 1e-10);
    }
  }
}

TEST_CASE("npair loss matches the naive softmax oracle") {
  Rng rng(415);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 2 + rng.below(5);
    const std::vector<double> vals = random_scores(rng, b);
    Tape tape;
    ScoreMatrix m = ScoreMatrix::from_values(tape, Tensor({b, b}, vals));
    const double got = npair_loss(tape, m).item();
    CHECK(std::abs(got - npair_oracle(b, vals)) < 1e-10);
    CHECK(got > 0.0);
  }
}

TEST_CASE("shifting every score by a constant changes neither loss") {
  Rng rng(416);
  for (double shift : {-3.0, 0.37, 5.0}) {
    const int b = 4;
    const std::vector<double> vals = random_scores(rng, b);
    std::vector<double> shifted = vals;
    for (double& v : shifted) v += shift;

    Tape t1, t2;
    ScoreMatrix m1 = ScoreMatrix::from_values(t1, Tensor({b, b}, vals));
    ScoreMatrix m2 = ScoreMatrix::from_values(t2, Tensor({b, b}, shifted));
    CHECK(triplet_loss(t1, m1, {}).item() == doctest::Approx(triplet_loss(t2, m2, {}).item()).epsilon(1e-9));
    CHECK(npair_loss(t1, m1).item() == doctest::Approx(npair_loss(t2, m2).item()).epsilon(1e-9));
  }
}

TEST_CASE("npair gradient pulls the diagonal up and every impostor down") {
  Rng rng(417);
  const int b = 4;
  Tape tape;
  Tensor reg = score_leaf(tape, b, random_scores(rng, b), true);
  tape.backward(npair_loss(tape, ScoreMatrix::from_values(tape, reg)));
  const Tensor& g = tape.grad(reg);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) {
      if (i == j) {
        CHECK(g.at(i, j) < 0.0);
      } else {
        CHECK(g.at(i, j) > 0.0);  // every impostor pushed at once
      }
    }
}

TEST_CASE("triplet gradient touches at most one impostor per anchor per direction") {
  Rng rng(418);
  for (int trial = 0; trial < 10; ++trial) {
    const int b = 4;
    std::vector<double> vals = random_scores(rng, b);
    for (int j = 0; j < b; ++j) vals[static_cast<std::size_t>(j * b + j)] -= 1.0;  // force active hinges
    Tape tape;
    Tensor reg = score_leaf(tape, b, vals, true);
    tape.backward(triplet_loss(tape, ScoreMatrix::from_values(tape, reg), {}));
    const Tensor& g = tape.grad(reg);
    int positive_offdiag = 0;
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) {
        if (i != j && g.at(i, j) > 0.0) ++positive_offdiag;
        if (i == j) CHECK(g.at(i, j) <= 0.0);
      }
    CHECK(positive_offdiag <= 2 * b);  // one hardest impostor per direction
    CHECK(positive_offdiag >= 1);
  }
}

TEST_CASE("loss input validation") {
  Tape tape;
  ScoreMatrix one = ScoreMatrix::from_values(tape, Tensor({1, 1}, {0.0}));
  CHECK_THROWS_AS(triplet_loss(tape, one, {}), ConfigError);
  CHECK_THROWS_AS(npair_loss(tape, one), ConfigError);

  ScoreMatrix two = ScoreMatrix::from_values(tape, Tensor({2, 2}, {0.0, 0.0, 0.0, 0.0}));
  CHECK_THROWS_AS(triplet_loss(tape, two, TripletConfig{-0.1, Mining::Hardest}), ConfigError);
  CHECK_THROWS_AS(triplet_loss(tape, two, TripletConfig{0.2, Mining::Random}, nullptr), ConfigError);
}

TEST_CASE("build_batch") {
  GenConfig gc;
  gc.image_h = 16;
  gc.image_w = 16;
  gc.min_objects = 1;
  gc.max_objects = 1;
  gc.min_captions = 2;
  gc.max_captions = 3;
  gc.num_images = 8;
  Corpus corpus = generate_corpus(gc, 21);

  SUBCASE("a full-size batch is a permutation of the corpus") {
    Rng rng(1);
    Batch batch = build_batch(corpus, 8, rng);
    REQUIRE(batch.size() == 8);
    std::vector<int> ids;
    for (const BatchEntry& e : batch.entries) ids.push_back(e.image_id);
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < 8; ++i) CHECK(ids[static_cast<std::size_t>(i)] == i);
  }

  SUBCASE("entries carry the image pixels and caption tokens they name") {
    Rng rng(2);
    Batch batch = build_batch(corpus, 4, rng);
    for (const BatchEntry& e : batch.entries) {
      const CorpusRecord& rec = corpus.record(e.image_id);
      CHECK(e.image.values() == rec.image.values());
      CHECK(e.tokens == corpus.caption(e.caption_id).tokens);
      CHECK(corpus.caption(e.caption_id).image_id == e.image_id);
    }
  }

  SUBCASE("same seed gives the same batch") {
    Rng r1(7), r2(7);
    Batch b1 = build_batch(corpus, 5, r1);
    Batch b2 = build_batch(corpus, 5, r2);
    for (int i = 0; i < 5; ++i) {
      CHECK(b1.entries[static_cast<std::size_t>(i)].image_id == b2.entries[static_cast<std::size_t>(i)].image_id);
      CHECK(b1.entries[static_cast<std::size_t>(i)].caption_id == b2.entries[static_cast<std::size_t>(i)].caption_id);
    }
  }

  SUBCASE("a pool restricts the draw") {
    Rng rng(3);
    Batch batch = build_batch(corpus, 2, rng, {5, 6});
    for (const BatchEntry& e : batch.entries) CHECK((e.image_id == 5 || e.image_id == 6));
  }

  SUBCASE("undersized pools and bad sizes are rejected") {
    Rng rng(4);
    CHECK_THROWS_AS(build_batch(corpus, 9, rng), DataError);
    CHECK_THROWS_AS(build_batch(corpus, 3, rng, {0, 1}), DataError);
    CHECK_THROWS_AS(build_batch(corpus, 0, rng), ConfigError);
  }

  SUBCASE("captions are sampled uniformly") {
    GenConfig gc5 = gc;
    gc5.min_captions = 5;
    gc5.max_captions = 5;
    gc5.num_images = 1;
    Corpus c5 = generate_corpus(gc5, 22);
    REQUIRE(c5.captions.size() == 5);

    Rng rng(23);
    std::map<int, int> freq;
    const int n = 10000;
    for (int i = 0; i < n; ++i) freq[build_batch(c5, 1, rng).entries[0].caption_id]++;
    REQUIRE(freq.size() == 5);
    const double sigma = std::sqrt(n * 0.2 * 0.8);
    for (const auto& [cap_id, count] : freq) {
      (void)cap_id;
      CHECK(std::abs(count - n * 0.2) <= 3.0 * sigma);
    }
  }
}

TEST_CASE("score matrix from a real batch matches single-pair recomputation") {
  GenConfig gc;
  gc.image_h = 16;
  gc.image_w = 16;
  gc.min_objects = 1;
  gc.max_objects = 1;
  gc.min_captions = 2;
  gc.max_captions = 2;
  gc.num_images = 5;
  Corpus corpus = generate_corpus(gc, 31);

  ModelConfig cfg;
  cfg.image.input_h = 16;
  cfg.image.input_w = 16;
  cfg.image.convs = {{3, 6, 4, 2}};
  cfg.image.embed_dim = 8;
  cfg.text.embed_dim = 6;
  cfg.text.hidden_dim = 8;
  ModelParams params = init_params(cfg, 5);

  const auto single_pair = [&](const Tensor& image, const std::vector<int>& tokens) {
    Tape tape;
    ModelParams bound = bind_params(tape, params, false);
    FeatureGrid grid = encode_image(tape, image, bound, cfg.image);
    TokenMatrix toks = encode_tokens(tape, tokens, {}, ParseMode::Word, bound, cfg.text);
    return max_image_score(tape, build_localization_space(tape, grid, toks)).item();
  };

  SUBCASE("B=3 entries match") {
    Rng rng(32);
    Batch batch = build_batch(corpus, 3, rng);
    Tape tape;
    ModelParams bound = bind_params(tape, params, false);
    ScoreMatrix m = score_matrix(tape, batch, bound, cfg);
    CHECK(m.b == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(m.image_ids[static_cast<std::size_t>(i)] == batch.entries[static_cast<std::size_t>(i)].image_id);
      CHECK(m.caption_ids[static_cast<std::size_t>(i)] == batch.entries[static_cast<std::size_t>(i)].caption_id);
      for (int j = 0; j < 3; ++j) {
        const double expected = single_pair(batch.entries[static_cast<std::size_t>(i)].image, batch.entries[static_cast<std::size_t>(j)].tokens);
        CHECK(m.value(i, j) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }

  SUBCASE("duplicated image gives identical rows") {
    const CorpusRecord& rec = corpus.record(0);
    REQUIRE(rec.caption_ids.size() >= 2);
    Batch batch;
    for (int k = 0; k < 2; ++k) {
      BatchEntry e;
      e.image_id = rec.image_id;
      e.caption_id = rec.caption_ids[static_cast<std::size_t>(k)];
      e.image = rec.image;
      e.tokens = corpus.caption(e.caption_id).tokens;
      batch.entries.push_back(std::move(e));
    }
    Tape tape;
    ModelParams bound = bind_params(tape, params, false);
    ScoreMatrix m = score_matrix(tape, batch, bound, cfg);
    for (int j = 0; j < 2; ++j) CHECK(m.value(0, j) == m.value(1, j));
  }

  SUBCASE("B=1 equals the single pair score") {
    Rng rng(33);
    Batch batch = build_batch(corpus, 1, rng);
    Tape tape;
    ModelParams bound = bind_params(tape, params, false);
    ScoreMatrix m = score_matrix(tape, batch, bound, cfg);
    CHECK(m.b == 1);
    CHECK(m.value(0, 0) == doctest::Approx(single_pair(batch.entries[0].image, batch.entries[0].tokens)).epsilon(1e-12));
  }

  SUBCASE("an empty batch is rejected") {
    Tape tape;
    ModelParams bound = bind_params(tape, params, false);
    Batch empty;
    CHECK_THROWS_AS(score_matrix(tape, empty, bound, cfg), ConfigError);
  }
}
