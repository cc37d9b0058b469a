#include "msn/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

#include "msn/error.hpp"

namespace msn::data {
namespace fs = std::filesystem;

namespace {

constexpr const char* kHeader = "path,type,id_or_attr,domain,split,label";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void check_field(const std::string& v) {
  require(v.find_first_of(",\"\r\n") == std::string::npos, Errc::data,
          "manifest field contains a separator or quote: " + v);
}

}  // namespace

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string to_string(Label l) {
  switch (l) {
    case Label::normal: return "normal";
    case Label::anomaly: return "anomaly";
    default: return "unknown";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  fail(Errc::data, "unknown split '" + s + "'");
}

Label parse_label(const std::string& s) {
  if (s == "normal") return Label::normal;
  if (s == "anomaly") return Label::anomaly;
  if (s == "unknown") return Label::unknown;
  fail(Errc::data, "unknown label '" + s + "'");
}

Grouping parse_grouping(const std::string& s) {
  if (s == "per-id") return Grouping::per_id;
  if (s == "per-type") return Grouping::per_type;
  fail(Errc::config, "grouping must be per-id or per-type, got '" + s + "'");
}

std::string to_string(Grouping g) { return g == Grouping::per_id ? "per-id" : "per-type"; }

std::string group_key(const ManifestRow& row, Grouping g) {
  return g == Grouping::per_id ? row.type + "/" + row.id : row.type;
}

fs::path Manifest::resolve(const ManifestRow& row) const {
  fs::path p(row.path);
  return p.is_absolute() ? p : base / p;
}

Manifest Manifest::select(Split split) const {
  Manifest out{{}, base};
  for (const auto& r : rows)
    if (r.split == split) out.rows.push_back(r);
  return out;
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : rows) {
    require(!r.path.empty(), Errc::data, "manifest row with an empty path");
    require(seen.insert(r.path).second, Errc::data, "duplicate manifest path " + r.path);
    require(!(r.split == Split::train && r.label == Label::anomaly), Errc::data,
            "training row labelled anomaly: " + r.path);
  }
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(bool(in), Errc::missing_file, "cannot open manifest " + path.string());
  Manifest m;
  m.base = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      require(line == kHeader, Errc::data, path.string() + ":" + std::to_string(lineno) + ": expected header " + kHeader);
      header = true;
      continue;
    }
    auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    require(f.size() == 6, Errc::data, where + "expected 6 fields, got " + std::to_string(f.size()));
    try {
      m.rows.push_back({f[0], f[1], f[2], f[3], parse_split(f[4]), parse_label(f[5])});
    } catch (const Error& e) {
      fail(Errc::data, where + e.what());
    }
    require(!f[0].empty() && !f[1].empty(), Errc::data, where + "empty path or type");
  }
  require(header, Errc::data, path.string() + ": missing header");
  m.validate();
  return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
  manifest.validate();
  const fs::path dir = fs::absolute(path).parent_path();
  std::ostringstream os;
  os << kHeader << '\n';
  for (const auto& r : manifest.rows) {
    const fs::path full = fs::absolute(manifest.resolve(r)).lexically_normal();
    const fs::path rel = full.lexically_relative(dir);
    const std::string p = (rel.empty() ? full : rel).generic_string();
    for (const auto* v : {&p, &r.type, &r.id, &r.domain}) check_field(*v);
    os << p << ',' << r.type << ',' << r.id << ',' << r.domain << ',' << to_string(r.split) << ','
       << to_string(r.label) << '\n';
  }
  std::ofstream out(path, std::ios::binary);
  require(bool(out), Errc::io, "cannot write manifest " + path.string());
  out << os.str();
  require(bool(out), Errc::io, "failed writing manifest " + path.string());
}

ParsedName parse_dcase_name(const std::string& filename, DcaseStyle style) {
  static const std::regex r2020(R"(^(normal|anomaly)_(id_\d+)_\d+\.wav$)");
  static const std::regex r2023(R"(^(section_\d+)_(source|target)_(train|test)_(normal|anomaly)_\d+(?:_(.+))?\.wav$)");
  static const std::regex r2023_eval(R"(^(section_\d+)_\d+\.wav$)");
  ParsedName out;
  std::smatch m;
  if (style == DcaseStyle::y2020) {
    if (std::regex_match(filename, m, r2020)) {
      out = {true, m[2].str(), "", parse_label(m[1].str())};
    }
  } else if (std::regex_match(filename, m, r2023)) {
    out = {true, m[5].matched ? m[5].str() : m[1].str(), m[2].str(), parse_label(m[4].str())};
  } else if (std::regex_match(filename, m, r2023_eval)) {
    out = {true, m[1].str(), "", Label::unknown};
  }
  return out;
}

Manifest scan_dcase_layout(const fs::path& root, DcaseStyle style, std::ostream& notices) {
  require(fs::is_directory(root), Errc::missing_file, "not a directory: " + root.string());
  Manifest m;
  m.base = root;
  std::size_t unknown = 0;
  for (const auto& type_dir : fs::directory_iterator(root)) {
    if (!type_dir.is_directory()) continue;
    for (const auto& split_dir : fs::directory_iterator(type_dir.path())) {
      if (!split_dir.is_directory()) continue;
      const std::string split = split_dir.path().filename().string();
      if (split != "train" && split != "test") {
        notices << "notice: skipping " << split_dir.path().string() << '\n';
        continue;
      }
      for (const auto& file : fs::directory_iterator(split_dir.path())) {
        if (!file.is_regular_file() || file.path().extension() != ".wav") continue;
        const std::string name = file.path().filename().string();
        ParsedName p = parse_dcase_name(name, style);
        if (!p.recognized) {
          ++unknown;
          p.id = "unknown";
        }
        if (split == "train" && p.label == Label::anomaly) p.label = Label::unknown;
        m.rows.push_back({fs::relative(file.path(), root).generic_string(), type_dir.path().filename().string(), p.id,
                          p.domain, parse_split(split), p.label});
      }
    }
  }
  std::sort(m.rows.begin(), m.rows.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  if (m.rows.empty()) notices << "notice: no wav files under " << root.string() << "; manifest is empty\n";
  if (unknown > 0) notices << "warning: " << unknown << " file name(s) not recognized; labelled unknown\n";
  return m;
}

}  // namespace msn::data
