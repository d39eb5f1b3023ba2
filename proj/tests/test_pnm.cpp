#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "coloc/errors.hpp"
#include "coloc/pnm.hpp"
#include "coloc/rng.hpp"

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

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SaliencyMap map_from(const Tensor& grid) {
  SaliencyMap m;
  m.rows = grid.dim(0);
  m.cols = grid.dim(1);
  m.grid = grid;
  return m;
}

}  // namespace

TEST_CASE("pgm writer") {
  TempDir tmp("coloc_pgm_test");

  SUBCASE("pins the text layout and min-max normalization") {
    Tensor g({2, 3}, {0.0, 0.5, 1.0, 1.0, 0.25, 0.0});
    const std::string path = (tmp.path / "map.pgm").string();
    write_pgm(map_from(g), path);
    CHECK(file_bytes(path) ==
          "P2\n"
          "3 2\n"
          "255\n"
          "0 128 255\n"
          "255 64 0\n");
  }

  SUBCASE("prefers the upsampled raster when present") {
    SaliencyMap m = map_from(Tensor({2, 2}, {0.0, 0.0, 0.0, 0.0}));
    m.upsampled = Tensor({1, 2}, {0.0, 2.0});
    const std::string path = (tmp.path / "up.pgm").string();
    write_pgm(m, path);
    CHECK(file_bytes(path) == "P2\n2 1\n255\n0 255\n");
  }

  SUBCASE("a constant map collapses to black") {
    Tensor g({2, 2}, {3.7, 3.7, 3.7, 3.7});
    const std::string path = (tmp.path / "flat.pgm").string();
    write_pgm(map_from(g), path);
    CHECK(file_bytes(path) == "P2\n2 2\n255\n0 0\n0 0\n");
  }

  SUBCASE("negative ranges normalize the same way") {
    Tensor g({1, 3}, {-2.0, -1.0, 0.0});
    const std::string path = (tmp.path / "neg.pgm").string();
    write_pgm(map_from(g), path);
    CHECK(file_bytes(path) == "P2\n3 1\n255\n0 128 255\n");
  }

  SUBCASE("rewrites are byte-identical") {
    Rng rng(95);
    Tensor g({7, 5});
    for (double& v : g.values()) v = rng.uniform(-1.0, 1.0);
    const std::string a = (tmp.path / "a.pgm").string();
    const std::string b = (tmp.path / "b.pgm").string();
    write_pgm(map_from(g), a);
    write_pgm(map_from(g), b);
    CHECK(file_bytes(a) == file_bytes(b));
    CHECK(!file_bytes(a).empty());
  }

  SUBCASE("rejects non-matrix maps and unwritable paths") {
    SaliencyMap bad;
    bad.grid = Tensor::zeros({4});
    CHECK_THROWS_AS(write_pgm(bad, (tmp.path / "bad.pgm").string()), ShapeError);
    CHECK_THROWS_AS(write_pgm(map_from(Tensor::zeros({2, 2})), (tmp.path / "no_dir" / "x.pgm").string()), FormatError);
  }
}

TEST_CASE("pbm writer") {
  TempDir tmp("coloc_pbm_test");

  SUBCASE("pins the bitmap layout") {
    SegmentationMask mask;
    mask.rows = 2;
    mask.cols = 3;
    mask.mask = {1, 0, 1, 0, 1, 0};
    const std::string path = (tmp.path / "mask.pbm").string();
    write_pbm(mask, path);
    CHECK(file_bytes(path) ==
          "P1\n"
          "3 2\n"
          "1 0 1\n"
          "0 1 0\n");
  }

  SUBCASE("rejects unpopulated masks") {
    SegmentationMask empty;
    CHECK_THROWS_AS(write_pbm(empty, (tmp.path / "e.pbm").string()), ShapeError);

    SegmentationMask short_mask;
    short_mask.rows = 2;
    short_mask.cols = 2;
    short_mask.mask = {1, 0, 1};  // one short
    CHECK_THROWS_AS(write_pbm(short_mask, (tmp.path / "s.pbm").string()), ShapeError);
  }

  SUBCASE("round trip with threshold_mask stays deterministic") {
    Rng rng(96);
    Tensor g({4, 4});
    for (double& v : g.values()) v = rng.uniform(0.0, 1.0);
    SaliencyMap m = map_from(g);
    m.upsampled = g;
    SegmentationMask mask = threshold_mask(m, 0.5);
    const std::string a = (tmp.path / "t1.pbm").string();
    const std::string b = (tmp.path / "t2.pbm").string();
    write_pbm(mask, a);
    write_pbm(mask, b);
    CHECK(file_bytes(a) == file_bytes(b));
  }
}
