#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coloc/encoders.hpp"
#include "coloc/tape.hpp"
#include "coloc/tensor.hpp"

namespace coloc {

// Joint localization volume: values[r,c,d] = dot(grid[r,c,:], tokens[d,:]).
struct LocalizationSpace {
  int rows = 0;
  int cols = 0;
  int max_len = 0;
  int n_valid = 0;
  Tensor values;      // [rows x cols x max_len], on tape
  Tensor valid_mask;  // [max_len] of {0,1}, plain tensor
  int image_id = -1;
  int caption_id = -1;
};

struct SaliencyMap {
  int rows = 0;
  int cols = 0;
  std::string label;
  Tensor grid;       // [rows x cols], detached from any tape
  Tensor upsampled;  // [H x W] after upsample_map; empty before
};

struct SegmentationMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> mask;  // row-major {0,1}
  double threshold = 0.0;
};

LocalizationSpace build_localization_space(Tape& tape, const FeatureGrid& grid, const TokenMatrix& toks, int image_id = -1, int caption_id = -1);

// (1/n_valid) * sum over valid d of max_{r,c} values[r,c,d].
Tensor max_image_score(Tape& tape, const LocalizationSpace& space);

// The d-th depth slice as a read-out map (no gradient flows).
SaliencyMap token_saliency(const LocalizationSpace& space, int d);

// Cellwise mean of the slices in [span.start, span.end).
SaliencyMap span_saliency_word_mode(const LocalizationSpace& space, const PhraseSpan& span);

// Bilinear upsampling; grid cell (r,c) owns the pixel footprint
// [r*H/rows, (r+1)*H/rows) x [c*W/cols, (c+1)*W/cols).
SaliencyMap upsample_map(const SaliencyMap& map, int out_h, int out_w);

// tau = the q-th quantile of the upsampled values; mask = (value >= tau).
SegmentationMask threshold_mask(const SaliencyMap& map, double tau_quantile);

}  // namespace coloc
