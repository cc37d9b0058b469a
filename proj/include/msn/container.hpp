#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace msn {

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

/// Binary container shared by checkpoints, prototype stores and embedding dumps.
///
/// Layout (all integers little-endian):
///   "MSNC" | u32 version | str kind
///   u32 n_meta  { str key | str value }       (keys sorted)
///   u32 n_array { str name | u32 rank | u64 dim[rank] | f64 data[prod(dim)] }
/// where str = u32 byte length followed by the bytes.
struct Container {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  const NamedArray& at(std::string_view name) const;
  const std::string& meta_at(const std::string& key) const;
  void add(std::string name, std::vector<std::size_t> shape, std::vector<double> data);
};

std::string serialize(const Container& c);
Container deserialize(std::string_view bytes);

void save_container(const std::filesystem::path& path, const Container& c);
/// Fails with Errc::version_mismatch when the kind or version differs.
Container load_container(const std::filesystem::path& path, std::string_view expected_kind);

}  // namespace msn
