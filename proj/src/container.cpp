#include "msn/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "msn/error.hpp"

namespace msn {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, std::string_view s) {
  put_u32(out, std::uint32_t(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(std::size_t(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += std::size_t(width);
    return v;
  }

  std::string str() {
    const auto n = std::size_t(uint(4));
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  double f64() { return std::bit_cast<double>(uint(8)); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(Errc::data, "truncated container");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Container::find(std::string_view name) const {
  for (const NamedArray& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Container::at(std::string_view name) const {
  const NamedArray* a = find(name);
  if (!a) fail(Errc::data, std::string(kind) + " container has no array '" + std::string(name) + "'");
  return *a;
}

const std::string& Container::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) fail(Errc::data, kind + " container has no metadata key '" + key + "'");
  return it->second;
}

void Container::add(std::string name, std::vector<std::size_t> shape, std::vector<double> data) {
  arrays.push_back({std::move(name), std::move(shape), std::move(data)});
}

std::string serialize(const Container& c) {
  std::string out = "MSNC";
  put_u32(out, Container::kVersion);
  put_str(out, c.kind);
  put_u32(out, std::uint32_t(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, std::uint32_t(c.arrays.size()));
  for (const NamedArray& a : c.arrays) {
    put_str(out, a.name);
    put_u32(out, std::uint32_t(a.shape.size()));
    for (std::size_t d : a.shape) put_u64(out, d);
    for (double x : a.data) put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

Container deserialize(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "MSNC") fail(Errc::data, "not an MSNC container");
  Reader r(bytes.substr(4));
  const auto version = r.uint(4);
  if (version != Container::kVersion)
    fail(Errc::version_mismatch, "container version " + std::to_string(version) + ", expected " +
                                     std::to_string(Container::kVersion));
  Container c;
  c.kind = r.str();
  const auto n_meta = r.uint(4);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  const auto n_arrays = r.uint(4);
  for (std::uint64_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = r.str();
    const auto rank = r.uint(4);
    std::size_t n = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      a.shape.push_back(std::size_t(r.uint(8)));
      n *= a.shape.back();
    }
    if (n > bytes.size() / 8) fail(Errc::data, "array '" + a.name + "' larger than container");
    a.data.resize(n);
    for (double& x : a.data) x = r.f64();
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) fail(Errc::data, "trailing bytes after container");
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  const std::string bytes = serialize(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, "cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) fail(Errc::io, "short write to " + path.string());
}

Container load_container(const std::filesystem::path& path, std::string_view expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Container c = deserialize(bytes);
  if (c.kind != expected_kind)
    fail(Errc::version_mismatch, path.string() + " holds a '" + c.kind + "' container, expected '" +
                                     std::string(expected_kind) + "'");
  return c;
}

}  // namespace msn
