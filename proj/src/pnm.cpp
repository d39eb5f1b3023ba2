#include "coloc/pnm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "coloc/errors.hpp"

namespace coloc {

namespace {

// Binary mode keeps the byte stream identical across platforms.
std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  return f;
}

}  // namespace

void write_pgm(const SaliencyMap& map, const std::string& path) {
  const Tensor& t = map.upsampled.size() > 0 ? map.upsampled : map.grid;
  if (t.rank() != 2) throw ShapeError("PGM export needs a rank-2 map, got " + shape_to_string(t.shape()));
  const int h = t.dim(0), w = t.dim(1);
  const double* v = t.data();
  double lo = v[0], hi = v[0];
  for (int i = 1; i < h * w; ++i) {
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  const double span = hi - lo;

  std::ofstream f = open_out(path);
  f << "P2\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int g = span > 0.0 ? static_cast<int>(std::lround((v[y * w + x] - lo) / span * 255.0)) : 0;
      f << g << (x + 1 < w ? " " : "\n");
    }
  }
  if (!f) throw FormatError("short write to '" + path + "'");
}

void write_pbm(const SegmentationMask& mask, const std::string& path) {
  if (mask.rows < 1 || mask.cols < 1 || mask.mask.size() != static_cast<std::size_t>(mask.rows) * static_cast<std::size_t>(mask.cols))
    throw ShapeError("PBM export needs a populated mask");
  std::ofstream f = open_out(path);
  f << "P1\n" << mask.cols << " " << mask.rows << "\n";
  for (int y = 0; y < mask.rows; ++y) {
    for (int x = 0; x < mask.cols; ++x) {
      f << static_cast<int>(mask.mask[static_cast<std::size_t>(y) * static_cast<std::size_t>(mask.cols) + static_cast<std::size_t>(x)])
        << (x + 1 < mask.cols ? " " : "\n");
    }
  }
  if (!f) throw FormatError("short write to '" + path + "'");
}

}  // namespace coloc
