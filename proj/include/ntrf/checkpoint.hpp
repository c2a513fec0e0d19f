#pragma once

#include <map>
#include <string>

#include "ntrf/nn_core.hpp"

namespace ntrf {

// Named-tensor container. Binary layout (all integers little-endian):
//
//   magic   "NTRFCKPT" (8 bytes)
//   u32     container version (1)
//   u32     number of string entries, then per entry:
//             u32 key length, key bytes, u32 value length, value bytes
//   u32     number of tensors, then per tensor:
//             u32 name length, name bytes, u64 rows, u64 cols,
//             rows*cols IEEE-754 binary64 values in column-major order
//
// Entries are written in key order, so equal contents give equal files.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, const Matrix& m) { tensors_[name] = m; }
  void put_string(const std::string& key, const std::string& value) { strings_[key] = value; }

  const Matrix& tensor(const std::string& name) const;
  const std::string& string(const std::string& key) const;
  bool has_tensor(const std::string& name) const { return tensors_.count(name) > 0; }
  bool has_string(const std::string& key) const { return strings_.count(key) > 0; }

  const std::map<std::string, Matrix>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& strings() const { return strings_; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::map<std::string, Matrix> tensors_;
  std::map<std::string, std::string> strings_;
};

}  // namespace ntrf
