#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace msn::data {

enum class Split { train, test };
enum class Label { normal, anomaly, unknown };

std::string to_string(Split s);
std::string to_string(Label l);
Split parse_split(const std::string& s);
Label parse_label(const std::string& s);

struct ManifestRow {
  std::string path;  // relative paths resolve against Manifest::base
  std::string type;
  std::string id;  // machine ID, or attribute string
  std::string domain;  // "source", "target" or empty
  Split split = Split::train;
  Label label = Label::normal;

  bool operator==(const ManifestRow&) const = default;
};

struct Manifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
  std::filesystem::path resolve(const ManifestRow& row) const;
  Manifest select(Split split) const;
  /// Throws Errc::data on duplicate paths or non-normal training rows.
  void validate() const;
};

/// CSV with header path,type,id_or_attr,domain,split,label. Relative paths are
/// taken relative to the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
/// Paths are rewritten relative to the output directory.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// per-id groups by "type/id", per-type by "type".
enum class Grouping { per_id, per_type };

Grouping parse_grouping(const std::string& s);
std::string to_string(Grouping g);
std::string group_key(const ManifestRow& row, Grouping g);

enum class DcaseStyle { y2020, y2023 };

struct ParsedName {
  bool recognized = false;
  std::string id;
  std::string domain;
  Label label = Label::unknown;
};

/// 2020: normal_id_01_00000042.wav. 2023: section_00_source_train_normal_0001_<attrs>.wav,
/// where the attribute string (or section_XX when absent) becomes the id.
ParsedName parse_dcase_name(const std::string& filename, DcaseStyle style);

/// Walks root/<type>/<train|test>/*.wav in path order. Unrecognized names get
/// label unknown and are summarized on `notices`.
Manifest scan_dcase_layout(const std::filesystem::path& root, DcaseStyle style, std::ostream& notices);

}  // namespace msn::data
