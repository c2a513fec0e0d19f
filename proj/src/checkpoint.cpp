#include "ntrf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ntrf/errors.hpp"

namespace ntrf {
namespace {

constexpr char kMagic[8] = {'N', 'T', 'R', 'F', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint");
  return v;
}

void write_str(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("truncated checkpoint string");
  return s;
}

}  // namespace

const Matrix& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::string(const std::string& key) const {
  auto it = strings_.find(key);
  if (it == strings_.end()) throw FormatError("checkpoint has no entry '" + key + "'");
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(strings_.size()));
  for (const auto& [k, v] : strings_) {
    write_str(out, k);
    write_str(out, v);
  }
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, m] : tensors_) {
    write_str(out, name);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw FormatError("failed writing checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(path + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint container version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_strings = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_strings; ++i) {
    std::string k = read_str(in);
    ck.strings_[k] = read_str(in);
  }
  const auto n_tensors = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = read_str(in);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    if (rows > (1ull << 32) || cols > (1ull << 32)) throw FormatError("implausible tensor shape for " + name);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw FormatError("truncated tensor " + name);
    ck.tensors_[name] = std::move(m);
  }
  return ck;
}

}  // namespace ntrf
