#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nlab/errors.hpp"
#include "nlab/model.hpp"

namespace nlab {

namespace {

constexpr std::array<char, 8> kMagic = {'N', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 4);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw ArtifactError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw ArtifactError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void put_block(std::ostream& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  for (double x : v) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

std::vector<double> get_block(std::istream& in, std::size_t expected, const char* name) {
  const auto n = get_u64(in);
  if (n != expected)
    throw ArtifactError(std::string("checkpoint block ") + name + " has " + std::to_string(n) +
                        " values, expected " + std::to_string(expected));
  std::vector<double> v(n);
  for (auto& x : v) {
    x = std::bit_cast<double>(get_u64(in));
    if (!std::isfinite(x)) throw ArtifactError(std::string("non-finite value in block ") + name);
  }
  return v;
}

}  // namespace

void save_checkpoint(const Params& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(p.arch));
  put_u64(out, p.dims);
  put_u64(out, p.hidden);
  put_u64(out, p.k);
  put_block(out, p.w1);
  put_block(out, p.b1);
  put_block(out, p.w2);
  put_block(out, p.b2);
  if (!out) throw ArtifactError("write failed for " + path.string());
}

Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw ArtifactError(path.string() + " is not a checkpoint");
  if (auto v = get_u32(in); v != kVersion)
    throw ArtifactError("unsupported checkpoint version " + std::to_string(v));
  const auto arch = get_u32(in);
  if (arch > 1) throw ArtifactError("unknown architecture tag " + std::to_string(arch));

  ModelConfig cfg;
  cfg.arch = static_cast<Architecture>(arch);
  const auto dims = get_u64(in);
  cfg.hidden = get_u64(in);
  const auto k = get_u64(in);
  // Bound the allocation by what the file can actually hold.
  const std::uint64_t budget = std::filesystem::file_size(path) / 8;
  const std::uint64_t width = cfg.arch == Architecture::mlp ? cfg.hidden : k;
  if (dims == 0 || width == 0 || dims > budget / width || cfg.hidden > budget || k > budget)
    throw ArtifactError("checkpoint header does not match its size");
  Params p = Params::zeros(cfg, dims, k);
  p.w1 = get_block(in, p.w1.size(), "w1");
  p.b1 = get_block(in, p.b1.size(), "b1");
  p.w2 = get_block(in, p.w2.size(), "w2");
  p.b2 = get_block(in, p.b2.size(), "b2");
  return p;
}

}  // namespace nlab
