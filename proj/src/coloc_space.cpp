#include "coloc/coloc_space.hpp"

#include <algorithm>
#include <cmath>

#include "coloc/errors.hpp"

namespace coloc {

LocalizationSpace build_localization_space(Tape& tape, const FeatureGrid& grid, const TokenMatrix& toks, int image_id, int caption_id) {
  if (grid.embed_dim != toks.embed_dim) {
    throw ConfigError("feature grid embed_dim " + std::to_string(grid.embed_dim) + " does not match token embed_dim " + std::to_string(toks.embed_dim));
  }
  const int r = grid.rows, c = grid.cols, n = toks.max_len, l = grid.embed_dim;
  Tensor flat = tape.reshape(grid.values, {r * c, l});
  Tensor dots = tape.matmul(flat, tape.transpose(toks.values));  // [r*c x n]

  LocalizationSpace space;
  space.rows = r;
  space.cols = c;
  space.max_len = n;
  space.n_valid = toks.n_valid;
  space.values = tape.reshape(dots, {r, c, n});
  space.valid_mask = toks.valid_mask;
  space.image_id = image_id;
  space.caption_id = caption_id;
  return space;
}

Tensor max_image_score(Tape& tape, const LocalizationSpace& space) {
  Tensor maxima = tape.max_over_spatial(space.values);  // [max_len]
  return tape.mean_masked(maxima, tape.constant(space.valid_mask));
}

SaliencyMap token_saliency(const LocalizationSpace& space, int d) {
  if (d < 0 || d >= space.n_valid) throw IndexError("token index " + std::to_string(d) + " outside valid range [0," + std::to_string(space.n_valid) + ")");
  SaliencyMap map;
  map.rows = space.rows;
  map.cols = space.cols;
  map.label = "token" + std::to_string(d);
  map.grid = Tensor({space.rows, space.cols});
  for (int r = 0; r < space.rows; ++r)
    for (int c = 0; c < space.cols; ++c) map.grid.at(r, c) = space.values.at(r, c, d);
  return map;
}

SaliencyMap span_saliency_word_mode(const LocalizationSpace& space, const PhraseSpan& span) {
  if (span.start >= span.end) throw DataError("empty saliency span [" + std::to_string(span.start) + "," + std::to_string(span.end) + ")");
  if (span.start < 0 || span.end > space.n_valid) {
    throw DataError("saliency span [" + std::to_string(span.start) + "," + std::to_string(span.end) + ") outside valid range [0," +
                    std::to_string(space.n_valid) + ")");
  }
  SaliencyMap map;
  map.rows = space.rows;
  map.cols = space.cols;
  map.label = "span" + std::to_string(span.start) + "_" + std::to_string(span.end);
  map.grid = Tensor({space.rows, space.cols});
  const double inv = 1.0 / (span.end - span.start);
  for (int r = 0; r < space.rows; ++r)
    for (int c = 0; c < space.cols; ++c) {
      double acc = 0.0;
      for (int d = span.start; d < span.end; ++d) acc += space.values.at(r, c, d);
      map.grid.at(r, c) = acc * inv;
    }
  return map;
}

SaliencyMap upsample_map(const SaliencyMap& map, int out_h, int out_w) {
  if (map.grid.size() == 0) throw ConfigError("upsample_map on an empty saliency map");
  if (out_h < map.rows || out_w < map.cols) {
    throw ShapeError("upsample target " + std::to_string(out_h) + "x" + std::to_string(out_w) + " smaller than grid " + std::to_string(map.rows) + "x" +
                     std::to_string(map.cols));
  }
  SaliencyMap out = map;
  out.upsampled = Tensor({out_h, out_w});
  const double sy = static_cast<double>(map.rows) / out_h;
  const double sx = static_cast<double>(map.cols) / out_w;
  for (int y = 0; y < out_h; ++y) {
    // continuous grid coordinate of this pixel's center
    double gy = (y + 0.5) * sy - 0.5;
    gy = std::clamp(gy, 0.0, static_cast<double>(map.rows - 1));
    const int y0 = static_cast<int>(std::floor(gy));
    const int y1 = std::min(y0 + 1, map.rows - 1);
    const double fy = gy - y0;
    for (int x = 0; x < out_w; ++x) {
      double gx = (x + 0.5) * sx - 0.5;
      gx = std::clamp(gx, 0.0, static_cast<double>(map.cols - 1));
      const int x0 = static_cast<int>(std::floor(gx));
      const int x1 = std::min(x0 + 1, map.cols - 1);
      const double fx = gx - x0;
      const double top = map.grid.at(y0, x0) * (1.0 - fx) + map.grid.at(y0, x1) * fx;
      const double bot = map.grid.at(y1, x0) * (1.0 - fx) + map.grid.at(y1, x1) * fx;
      out.upsampled.at(y, x) = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

SegmentationMask threshold_mask(const SaliencyMap& map, double tau_quantile) {
  if (!(tau_quantile > 0.0 && tau_quantile < 1.0)) throw ConfigError("tau_quantile must be in (0,1), got " + std::to_string(tau_quantile));
  if (map.upsampled.size() == 0) throw ConfigError("threshold_mask needs an upsampled saliency map");
  const int h = map.upsampled.dim(0), w = map.upsampled.dim(1);
  std::vector<double> sorted(map.upsampled.data(), map.upsampled.data() + map.upsampled.size());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t idx = static_cast<std::size_t>(std::floor(tau_quantile * static_cast<double>(sorted.size())));
  const double tau = sorted[std::min(idx, sorted.size() - 1)];

  SegmentationMask out;
  out.rows = h;
  out.cols = w;
  out.threshold = tau;
  out.mask.resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
  for (int i = 0; i < map.upsampled.size(); ++i) out.mask[static_cast<std::size_t>(i)] = map.upsampled.data()[i] >= tau ? 1 : 0;
  return out;
}

}  // namespace coloc
