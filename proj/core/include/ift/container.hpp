#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ift/tensor.hpp"

namespace ift::io {

// Versioned binary container of named tensors plus flat key/value config.
// Layout (all integers little-endian):
//   magic "IFTC" | u32 version
//   u32 n_config | n x { u32 klen, key, u32 vlen, value }
//   u32 n_tensors | n x { u32 nlen, name, u8 dtype, u32 ndim, u64 dims[],
//                         payload }
// dtype 0 = f64, 1 = i64. Entry order is preserved, so save() is byte-exact
// reproducible for identical content.
class Container {
public:
  static constexpr uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    uint8_t dtype = 0;
    std::vector<int64_t> shape;
    std::vector<double> f64;
    std::vector<int64_t> i64;
  };

  void set_config(const std::string& key, const std::string& value);
  bool has_config(const std::string& key) const;
  const std::string& config_value(const std::string& key) const;  // throws Prerequisite
  const std::vector<std::pair<std::string, std::string>>& config() const { return config_; }

  void put(const std::string& name, const Tensor& t);
  void put_i64(const std::string& name, std::vector<int64_t> shape, std::vector<int64_t> values);

  bool has(const std::string& name) const;
  Tensor get(const std::string& name) const;
  std::vector<int64_t> get_i64(const std::string& name) const;
  const std::vector<Entry>& entries() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

private:
  const Entry* find(const std::string& name) const;
  std::vector<std::pair<std::string, std::string>> config_;
  std::vector<Entry> tensors_;
};

}  // namespace ift::io
