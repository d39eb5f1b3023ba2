#include "coloc/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "coloc/errors.hpp"
#include "coloc/rng.hpp"

namespace coloc {

std::pair<int, int> ImageEncoderConfig::grid_shape() const {
  int h = input_h, w = input_w, ch = input_channels;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const ConvSpec& c = convs[i];
    if (c.in_channels != ch) {
      throw ConfigError("conv layer " + std::to_string(i) + " expects " + std::to_string(c.in_channels) + " input channels, previous layer provides " +
                        std::to_string(ch));
    }
    if (c.kernel < 1 || c.stride < 1 || c.out_channels < 1) throw ConfigError("conv layer " + std::to_string(i) + " has non-positive geometry");
    if (h < c.kernel || w < c.kernel || (h - c.kernel) % c.stride != 0 || (w - c.kernel) % c.stride != 0) {
      throw ConfigError("conv layer " + std::to_string(i) + ": " + std::to_string(h) + "x" + std::to_string(w) + " input not divisible by kernel " +
                        std::to_string(c.kernel) + " stride " + std::to_string(c.stride));
    }
    h = (h - c.kernel) / c.stride + 1;
    w = (w - c.kernel) / c.stride + 1;
    ch = c.out_channels;
  }
  return {h, w};
}

void ImageEncoderConfig::validate() const {
  if (input_h < 1 || input_w < 1 || input_channels < 1) throw ConfigError("image encoder input dims must be positive");
  if (convs.empty()) throw ConfigError("image encoder needs at least one conv layer");
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  grid_shape();
}

void TextEncoderConfig::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || max_len < 1) throw ConfigError("text encoder dims must be positive");
}

void ModelConfig::validate() const {
  image.validate();
  text.validate();
  if (image.embed_dim != text.hidden_dim) {
    throw ConfigError("image embed_dim " + std::to_string(image.embed_dim) + " must equal text hidden_dim " + std::to_string(text.hidden_dim));
  }
}

ParseMode parse_mode_from_string(const std::string& s) {
  if (s == "word") return ParseMode::Word;
  if (s == "phrase") return ParseMode::Phrase;
  throw ConfigError("unknown parse mode '" + s + "' (expected word or phrase)");
}

const char* to_string(ParseMode m) { return m == ParseMode::Word ? "word" : "phrase"; }

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < conv_w.size(); ++i) {
    out.emplace_back("image.conv" + std::to_string(i) + ".w", &conv_w[i]);
    out.emplace_back("image.conv" + std::to_string(i) + ".b", &conv_b[i]);
  }
  out.emplace_back("image.proj.w", &proj_w);
  out.emplace_back("image.proj.b", &proj_b);
  out.emplace_back("text.embed", &embed);
  out.emplace_back("text.w_r", &w_r);
  out.emplace_back("text.u_r", &u_r);
  out.emplace_back("text.b_r", &b_r);
  out.emplace_back("text.w_h", &w_h);
  out.emplace_back("text.u_h", &u_h);
  out.emplace_back("text.b_h", &b_h);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named_tensors()) out.emplace_back(name, t);
  return out;
}

namespace {

// Uniform in [-sqrt(3/fan_in), sqrt(3/fan_in)] => std = 1/sqrt(fan_in).
Tensor fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
  const double a = std::sqrt(3.0 / fan_in);
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-a, a);
  return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x70617261 /* "para" */));
  ModelParams p;
  int ch = cfg.image.input_channels;
  for (const ConvSpec& c : cfg.image.convs) {
    const int fan_in = c.kernel * c.kernel * ch;
    p.conv_w.push_back(fan_in_uniform(rng, {fan_in, c.out_channels}, fan_in));
    p.conv_b.push_back(Tensor::zeros({c.out_channels}));
    ch = c.out_channels;
  }
  const int l = cfg.image.embed_dim;
  p.proj_w = fan_in_uniform(rng, {ch, l}, ch);
  p.proj_b = Tensor::zeros({l});

  const int v = cfg.text.vocab_size;
  const int e = cfg.text.embed_dim;
  p.embed = fan_in_uniform(rng, {v, e}, v);
  p.w_r = fan_in_uniform(rng, {e, l}, e);
  p.u_r = fan_in_uniform(rng, {l, l}, l);
  p.b_r = Tensor::zeros({l});
  p.w_h = fan_in_uniform(rng, {e, l}, e);
  p.u_h = fan_in_uniform(rng, {l, l}, l);
  p.b_h = Tensor::zeros({l});

  for (auto& [name, t] : p.named_tensors()) {
    (void)name;
    t->requires_grad = true;
  }
  return p;
}

ModelParams bind_params(Tape& tape, const ModelParams& params, bool requires_grad) {
  ModelParams bound = params;
  for (auto& [name, t] : bound.named_tensors()) {
    (void)name;
    t->requires_grad = requires_grad;
    *t = tape.leaf(*t);
  }
  return bound;
}

FeatureGrid encode_image(Tape& tape, const Tensor& img, const ModelParams& bound, const ImageEncoderConfig& cfg) {
  if (img.rank() != 3 || img.dim(0) != cfg.input_h || img.dim(1) != cfg.input_w || img.dim(2) != cfg.input_channels) {
    throw ShapeError("encode_image expects [" + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) + "x" +
                     std::to_string(cfg.input_channels) + "], got " + shape_to_string(img.shape()));
  }
  if (bound.conv_w.size() != cfg.convs.size()) throw ConfigError("parameter set has " + std::to_string(bound.conv_w.size()) + " conv layers, config wants " +
                                                                 std::to_string(cfg.convs.size()));
  const auto [rows, cols] = cfg.grid_shape();

  Tensor x = img;  // [h x w x ch]
  int h = cfg.input_h, w = cfg.input_w;
  for (std::size_t i = 0; i < cfg.convs.size(); ++i) {
    const ConvSpec& c = cfg.convs[i];
    Tensor cols2 = tape.im2col(x, c.kernel, c.stride);                                // [oh*ow x k*k*in]
    Tensor z = tape.add_rowvec(tape.matmul(cols2, bound.conv_w[i]), bound.conv_b[i]);  // [oh*ow x out]
    Tensor a = tape.relu(z);
    h = (h - c.kernel) / c.stride + 1;
    w = (w - c.kernel) / c.stride + 1;
    x = tape.reshape(a, {h, w, c.out_channels});
  }

  Tensor flat = tape.reshape(x, {rows * cols, cfg.convs.back().out_channels});
  Tensor g = tape.add_rowvec(tape.matmul(flat, bound.proj_w), bound.proj_b);  // linear projection, no nonlinearity

  FeatureGrid grid;
  grid.rows = rows;
  grid.cols = cols;
  grid.embed_dim = cfg.embed_dim;
  grid.source_h = cfg.input_h;
  grid.source_w = cfg.input_w;
  grid.values = tape.reshape(g, {rows, cols, cfg.embed_dim});
  return grid;
}

TokenMatrix encode_tokens(Tape& tape, const std::vector<int>& ids, const std::vector<PhraseSpan>& spans, ParseMode mode, const ModelParams& bound,
                          const TextEncoderConfig& cfg) {
  const int n = static_cast<int>(ids.size());
  if (n < 1) throw DataError("encode_tokens: empty caption");
  if (n > cfg.max_len) throw DataError("caption length " + std::to_string(n) + " exceeds max_len " + std::to_string(cfg.max_len));
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(cfg.vocab_size));
  }
  // Validate spans: in range, non-empty, pairwise non-overlapping.
  std::vector<int> order(spans.size());
  for (std::size_t i = 0; i < spans.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return spans[static_cast<std::size_t>(a)].start < spans[static_cast<std::size_t>(b)].start; });
  int prev_end = 0;
  for (int oi : order) {
    const PhraseSpan& s = spans[static_cast<std::size_t>(oi)];
    if (s.start < 0 || s.end > n || s.start >= s.end) {
      throw DataError("phrase span [" + std::to_string(s.start) + "," + std::to_string(s.end) + ") invalid for caption of length " + std::to_string(n));
    }
    if (s.start < prev_end) throw DataError("overlapping phrase spans at token " + std::to_string(s.start));
    prev_end = s.end;
  }

  // Build the recurrent input sequence and remember which output row
  // each span lands on - one row per phrase in Phrase mode.
  struct Step {
    Tensor x;        // [E] on tape
    int span = -1;   // index into `spans`, or -1 for an uncovered token
  };
  std::vector<Step> steps;
  const auto embed_row = [&](int pos) { return tape.slice_row(bound.embed, ids[static_cast<std::size_t>(pos)]); };

  if (mode == ParseMode::Word) {
    for (int pos = 0; pos < n; ++pos) steps.push_back({embed_row(pos), -1});
  } else {
    std::vector<int> span_at(static_cast<std::size_t>(n), -1);
    for (std::size_t si = 0; si < spans.size(); ++si) span_at[static_cast<std::size_t>(spans[si].start)] = static_cast<int>(si);
    for (int pos = 0; pos < n;) {
      const int si = span_at[static_cast<std::size_t>(pos)];
      if (si < 0) {
        steps.push_back({embed_row(pos), -1});
        ++pos;
      } else {
        const PhraseSpan& s = spans[static_cast<std::size_t>(si)];
        Tensor acc = embed_row(s.start);
        for (int t = s.start + 1; t < s.end; ++t) acc = tape.add(acc, embed_row(t));
        steps.push_back({tape.scale(acc, 1.0 / (s.end - s.start)), si});
        pos = s.end;
      }
    }
  }

  const int m = static_cast<int>(steps.size());
  if (m > cfg.max_len) throw DataError("encoded length " + std::to_string(m) + " exceeds max_len " + std::to_string(cfg.max_len));

  // Recurrence over the (possibly phrase-merged) inputs.
  const int l = cfg.hidden_dim;
  Tensor h = tape.constant(Tensor::zeros({l}));
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(cfg.max_len));
  for (const Step& st : steps) {
    Tensor r = tape.sigmoid(tape.add(tape.add(tape.matmul(st.x, bound.w_r), tape.matmul(h, bound.u_r)), bound.b_r));
    h = tape.tanh(tape.add(tape.add(tape.matmul(st.x, bound.w_h), tape.matmul(tape.mul(r, h), bound.u_h)), bound.b_h));
    rows.push_back(h);
  }
  for (int i = m; i < cfg.max_len; ++i) rows.push_back(tape.constant(Tensor::zeros({l})));

  TokenMatrix tm;
  tm.max_len = cfg.max_len;
  tm.embed_dim = l;
  tm.n_valid = m;
  tm.values = tape.stack_rows(rows);
  tm.valid_mask = Tensor::zeros({cfg.max_len});
  for (int i = 0; i < m; ++i) tm.valid_mask.at(i) = 1.0;

  tm.span_rows.assign(spans.size(), {0, 0});
  if (mode == ParseMode::Word) {
    for (std::size_t si = 0; si < spans.size(); ++si) tm.span_rows[si] = {spans[si].start, spans[si].end};
  } else {
    for (int row = 0; row < m; ++row) {
      if (steps[static_cast<std::size_t>(row)].span >= 0) tm.span_rows[static_cast<std::size_t>(steps[static_cast<std::size_t>(row)].span)] = {row, row + 1};
    }
  }
  return tm;
}

}  // namespace coloc
