#include "ift/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ift/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "container serialization assumes a little-endian host");

namespace ift::io {

namespace {

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) {
    throw Error(ErrorKind::Data, "truncated container file: " + path);
  }
  return v;
}

uint64_t read_u64(std::istream& is, const std::string& path) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) {
    throw Error(ErrorKind::Data, "truncated container file: " + path);
  }
  return v;
}

std::string read_str(std::istream& is, const std::string& path) {
  const uint32_t len = read_u32(is, path);
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) {
    throw Error(ErrorKind::Data, "truncated container file: " + path);
  }
  return s;
}

}  // namespace

void Container::set_config(const std::string& key, const std::string& value) {
  for (auto& kv : config_) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  config_.emplace_back(key, value);
}

bool Container::has_config(const std::string& key) const {
  for (const auto& kv : config_)
    if (kv.first == key) return true;
  return false;
}

const std::string& Container::config_value(const std::string& key) const {
  for (const auto& kv : config_)
    if (kv.first == key) return kv.second;
  throw Error(ErrorKind::Prerequisite, "container is missing config key '" + key + "'");
}

void Container::put(const std::string& name, const Tensor& t) {
  Entry e;
  e.name = name;
  e.dtype = 0;
  e.shape = t.shape;
  e.f64 = t.data;
  tensors_.push_back(std::move(e));
}

void Container::put_i64(const std::string& name, std::vector<int64_t> shape, std::vector<int64_t> values) {
  if (shape_product(shape) != static_cast<int64_t>(values.size())) {
    throw Error(ErrorKind::Data, "container entry '" + name + "': payload does not match shape");
  }
  Entry e;
  e.name = name;
  e.dtype = 1;
  e.shape = std::move(shape);
  e.i64 = std::move(values);
  tensors_.push_back(std::move(e));
}

const Container::Entry* Container::find(const std::string& name) const {
  for (const auto& e : tensors_)
    if (e.name == name) return &e;
  return nullptr;
}

bool Container::has(const std::string& name) const { return find(name) != nullptr; }

Tensor Container::get(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw Error(ErrorKind::Prerequisite, "container is missing tensor '" + name + "'");
  if (e->dtype != 0) throw Error(ErrorKind::Data, "container tensor '" + name + "' is not f64");
  return Tensor(e->shape, e->f64);
}

std::vector<int64_t> Container::get_i64(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw Error(ErrorKind::Prerequisite, "container is missing tensor '" + name + "'");
  if (e->dtype != 1) throw Error(ErrorKind::Data, "container tensor '" + name + "' is not i64");
  return e->i64;
}

void Container::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::Data, "cannot open for writing: " + path.string());
  os.write("IFTC", 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(config_.size()));
  for (const auto& [k, v] : config_) {
    write_str(os, k);
    write_str(os, v);
  }
  write_u32(os, static_cast<uint32_t>(tensors_.size()));
  for (const auto& e : tensors_) {
    write_str(os, e.name);
    os.put(static_cast<char>(e.dtype));
    write_u32(os, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) write_u64(os, static_cast<uint64_t>(d));
    if (e.dtype == 0) {
      os.write(reinterpret_cast<const char*>(e.f64.data()),
               static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
    } else {
      os.write(reinterpret_cast<const char*>(e.i64.data()),
               static_cast<std::streamsize>(e.i64.size() * sizeof(int64_t)));
    }
  }
  if (!os) throw Error(ErrorKind::Data, "write failed: " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Prerequisite, "cannot open: " + path.string());
  const std::string p = path.string();
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "IFTC", 4) != 0) {
    throw Error(ErrorKind::Data, "not a container file (bad magic): " + p);
  }
  const uint32_t version = read_u32(is, p);
  if (version != kVersion) {
    throw Error(ErrorKind::Data, "unsupported container version " + std::to_string(version) + " in " + p);
  }
  Container c;
  const uint32_t n_config = read_u32(is, p);
  for (uint32_t i = 0; i < n_config; ++i) {
    std::string k = read_str(is, p);
    std::string v = read_str(is, p);
    c.config_.emplace_back(std::move(k), std::move(v));
  }
  const uint32_t n_tensors = read_u32(is, p);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    Entry e;
    e.name = read_str(is, p);
    int ch = is.get();
    if (ch == EOF) throw Error(ErrorKind::Data, "truncated container file: " + p);
    e.dtype = static_cast<uint8_t>(ch);
    if (e.dtype > 1) throw Error(ErrorKind::Data, "unknown dtype in container entry '" + e.name + "'");
    const uint32_t ndim = read_u32(is, p);
    e.shape.resize(ndim);
    for (uint32_t d = 0; d < ndim; ++d) e.shape[d] = static_cast<int64_t>(read_u64(is, p));
    const int64_t count = shape_product(e.shape);
    if (e.dtype == 0) {
      e.f64.resize(static_cast<size_t>(count));
      if (!is.read(reinterpret_cast<char*>(e.f64.data()), count * 8)) {
        throw Error(ErrorKind::Data, "truncated tensor payload '" + e.name + "' in " + p);
      }
    } else {
      e.i64.resize(static_cast<size_t>(count));
      if (!is.read(reinterpret_cast<char*>(e.i64.data()), count * 8)) {
        throw Error(ErrorKind::Data, "truncated tensor payload '" + e.name + "' in " + p);
      }
    }
    c.tensors_.push_back(std::move(e));
  }
  return c;
}

}  // namespace ift::io
