#pragma once

#include <string>

#include "coloc/coloc_space.hpp"

namespace coloc {

// Plain-text PGM (P2), 8 bit, min-max normalized per map. Writes the
// upsampled raster when present, the raw grid otherwise. A constant map
// normalizes to all zeros.
void write_pgm(const SaliencyMap& map, const std::string& path);

// Plain-text PBM (P1); 1 marks pixels inside the mask.
void write_pbm(const SegmentationMask& mask, const std::string& path);

}  // namespace coloc
