#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "coloc/checkpoint.hpp"
#include "coloc/errors.hpp"

using namespace coloc;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / name).string(); }

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("tensor container round trip") {
  const std::string path = temp_path("coloc_rt.ten");
  Tensor a = Tensor::from({2, 3}, {1.5, -2.25, 0.0, 1e-300, 3.14159, -0.5});
  Tensor b = Tensor::scalar(42.0);
  Tensor c = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
  save_tensors(path, {{"alpha", a}, {"beta", b}, {"gamma/delta", c}});

  auto loaded = load_tensors(path);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].first == "alpha");
  CHECK(loaded[1].first == "beta");
  CHECK(loaded[2].first == "gamma/delta");
  CHECK(loaded[0].second.shape() == a.shape());
  CHECK(loaded[1].second.rank() == 0);
  CHECK(loaded[2].second.shape() == c.shape());
  for (int i = 0; i < a.size(); ++i) CHECK(loaded[0].second.data()[i] == a.data()[i]);
  CHECK(loaded[1].second.item() == 42.0);

  SUBCASE("save is byte-stable") {
    const std::string again = temp_path("coloc_rt2.ten");
    save_tensors(again, {{"alpha", a}, {"beta", b}, {"gamma/delta", c}});
    CHECK(slurp(path) == slurp(again));
    std::remove(again.c_str());
  }
  std::remove(path.c_str());
}

TEST_CASE("container header layout is pinned") {
  const std::string path = temp_path("coloc_hdr.ten");
  save_tensors(path, {{"x", Tensor::from({2}, {1.0, 2.0})}});
  const std::string bytes = slurp(path);
  // magic, version u16 LE, name len u16 LE, name, rank u8, dim u32 LE, 2 f64
  REQUIRE(bytes.size() == 4u + 2 + 2 + 1 + 1 + 4 + 16);
  CHECK(bytes.substr(0, 4) == "CLOC");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  CHECK(static_cast<unsigned char>(bytes[6]) == 1);  // name length
  CHECK(bytes[8] == 'x');
  CHECK(static_cast<unsigned char>(bytes[9]) == 1);   // rank
  CHECK(static_cast<unsigned char>(bytes[10]) == 2);  // dim 0
  std::remove(path.c_str());
}

TEST_CASE("malformed containers are format errors") {
  const std::string path = temp_path("coloc_bad.ten");

  SUBCASE("bad magic") {
    std::ofstream(path, std::ios::binary) << "NOPE....";
    CHECK_THROWS_AS(load_tensors(path), FormatError);
  }
  SUBCASE("unsupported version") {
    std::string bytes = "CLOC";
    bytes.push_back(9);
    bytes.push_back(0);
    std::ofstream(path, std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_tensors(path), FormatError);
  }
  SUBCASE("truncated payload names the file") {
    save_tensors(path, {{"x", Tensor::full({8, 8}, 1.0)}});
    std::string bytes = slurp(path);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
    try {
      load_tensors(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("coloc_bad.ten") != std::string::npos);
    }
  }
  SUBCASE("zero dimension rejected") {
    std::string bytes = "CLOC";
    bytes.push_back(1);
    bytes.push_back(0);  // version 1
    bytes.push_back(1);
    bytes.push_back(0);  // name len 1
    bytes.push_back('x');
    bytes.push_back(1);  // rank 1
    bytes.append(4, '\0');  // dim = 0
    std::ofstream(path, std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_tensors(path), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_tensors(temp_path("does_not_exist.ten")), FormatError); }

  std::remove(path.c_str());
}
