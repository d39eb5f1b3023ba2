#include "coloc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "coloc/errors.hpp"

namespace coloc {

namespace {

constexpr char kMagic[4] = {'C', 'L', 'O', 'C'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open " + path);
  }

  bool at_eof() { return in_.peek() == std::ifstream::traits_type::eof(); }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("truncated " + path_ + " while reading " + what);
  }

  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(reinterpret_cast<char*>(b), 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) | (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f64(const char* what) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace

void save_tensors(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kTensorFileVersion);
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name);
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (int i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("write failed for " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path + " is not a tensor container (bad magic)");
  const std::uint16_t version = r.u16("version");
  if (version != kTensorFileVersion) throw FormatError(path + " has unsupported version " + std::to_string(version));

  std::vector<std::pair<std::string, Tensor>> out;
  while (!r.at_eof()) {
    const std::uint16_t name_len = r.u16("name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "name");
    unsigned char rank;
    r.bytes(reinterpret_cast<char*>(&rank), 1, "rank");
    if (rank > 3) throw FormatError(path + ": tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    std::vector<int> shape;
    long long n = 1;
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dimension");
      if (d == 0 || d > (1u << 24)) throw FormatError(path + ": tensor '" + name + "' has bad dimension " + std::to_string(d));
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    if (n > (1LL << 30)) throw FormatError(path + ": tensor '" + name + "' too large");
    Tensor t(shape);
    for (int i = 0; i < t.size(); ++i) t.data()[i] = r.f64("payload");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace coloc
