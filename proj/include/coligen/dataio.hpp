#pragma once

// Dataset ingestion in the semantic-KITTI community layout: .bin scans of
// little-endian float32 (x, y, z, reflectance) records, .label files of
// little-endian uint32 with the class id in the low 16 bits, dataset specs
// with per-split sequence lists, pairing manifests, and class statistics.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coligen/config.hpp"
#include "coligen/core.hpp"
#include "coligen/rangeview.hpp"

namespace coligen::dataio {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Scan codec (.bin)
// ---------------------------------------------------------------------------

struct ScanReadResult {
  rangeview::PointCloud cloud;
  std::size_t reflectance_clamped = 0;
};

inline ScanReadResult read_scan(const std::string& path) {
  std::vector<unsigned char> buf = io::read_file(path);
  if (buf.size() % 16 != 0)
    throw FormatError("scan " + path + ": size " + std::to_string(buf.size()) +
                      " is not a multiple of 16 bytes");
  ScanReadResult res;
  res.cloud.points.reserve(buf.size() / 16);
  for (std::size_t off = 0; off < buf.size(); off += 16) {
    float v[4];
    for (int k = 0; k < 4; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(buf[off + 4 * static_cast<std::size_t>(k) +
                                               static_cast<std::size_t>(b)])
                << (8 * b);
      std::memcpy(&v[k], &bits, 4);
    }
    rangeview::Point p;
    p.x = v[0];
    p.y = v[1];
    p.z = v[2];
    double r = v[3];
    if (r < 0.0 || r > 1.0) {
      r = std::clamp(r, 0.0, 1.0);
      res.reflectance_clamped++;
    }
    p.reflectance = r;
    res.cloud.points.push_back(std::move(p));
  }
  return res;
}

inline void write_scan(const rangeview::PointCloud& cloud, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for writing: " + path);
  for (const auto& p : cloud.points) {
    io::write_f32(f, static_cast<float>(p.x));
    io::write_f32(f, static_cast<float>(p.y));
    io::write_f32(f, static_cast<float>(p.z));
    io::write_f32(f, static_cast<float>(p.reflectance));
  }
  if (!f) throw InputError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Class table and label codec (.label)
// ---------------------------------------------------------------------------

class ClassTable {
 public:
  ClassTable() = default;

  static ClassTable with_classes(std::vector<std::pair<int, std::string>> entries) {
    ClassTable t;
    t.names_[0] = "unlabeled";
    for (auto& [id, name] : entries) {
      if (id == 0) throw InputError("class table: id 0 is reserved for unlabeled");
      if (t.names_.count(id)) throw InputError("class table: duplicate id");
      t.names_[id] = name;
    }
    return t;
  }

  // 16 semantic classes matching the CARLA sensor taxonomy, plus 0=unlabeled.
  static ClassTable default_table() {
    return with_classes({{1, "building"},
                         {2, "fence"},
                         {3, "other-structure"},
                         {4, "pedestrian"},
                         {5, "pole"},
                         {6, "road-line"},
                         {7, "road"},
                         {8, "sidewalk"},
                         {9, "vegetation"},
                         {10, "vehicle"},
                         {11, "wall"},
                         {12, "traffic-sign"},
                         {13, "ground"},
                         {14, "bridge"},
                         {15, "rail-track"},
                         {16, "guard-rail"}});
  }

  // Override file: one "id name" pair per line, '#' comments.
  static ClassTable from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open class table: " + path);
    std::vector<std::pair<int, std::string>> entries;
    std::string line;
    while (std::getline(f, line)) {
      std::string t = config::trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::istringstream is(t);
      int id;
      std::string name;
      if (!(is >> id >> name)) throw FormatError("class table: bad line: " + t);
      if (id != 0) entries.push_back({id, name});
    }
    return with_classes(std::move(entries));
  }

  bool contains(int id) const { return names_.count(id) != 0; }

  const std::string& name(int id) const {
    auto it = names_.find(id);
    if (it == names_.end()) throw InputError("class table: unknown id");
    return it->second;
  }

  std::vector<int> ids() const {
    std::vector<int> out;
    for (auto& [id, _] : names_) out.push_back(id);
    return out;
  }

  std::size_t size() const { return names_.size(); }

 private:
  std::map<int, std::string> names_;
};

struct LabelReadResult {
  std::vector<std::int32_t> classes;
  std::size_t unknown_mapped = 0;  // ids not in the table, degraded to 0
};

inline LabelReadResult read_labels(const std::string& path, const ClassTable& table,
                                   std::optional<std::size_t> expected_count = {}) {
  std::vector<unsigned char> buf = io::read_file(path);
  if (buf.size() % 4 != 0)
    throw FormatError("labels " + path + ": size is not a multiple of 4 bytes");
  std::size_t n = buf.size() / 4;
  if (expected_count && n != *expected_count)
    throw DimensionError("labels " + path + ": " + std::to_string(n) +
                         " entries but scan has " + std::to_string(*expected_count) +
                         " points");
  LabelReadResult res;
  res.classes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t raw = 0;
    for (int b = 0; b < 4; ++b)
      raw |= static_cast<std::uint32_t>(buf[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    int id = static_cast<int>(raw & 0xffffu);  // high 16 bits carry instance ids
    if (!table.contains(id)) {
      id = 0;
      res.unknown_mapped++;
    }
    res.classes.push_back(id);
  }
  return res;
}

inline void write_labels(const std::vector<std::int32_t>& classes,
                         const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open for writing: " + path);
  for (std::int32_t c : classes)
    io::write_le<std::uint32_t>(f, static_cast<std::uint32_t>(c) & 0xffffu);
  if (!f) throw InputError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Dataset spec, iteration, statistics
// ---------------------------------------------------------------------------

enum class DomainRole { simulated, real };

struct DatasetSpec {
  std::string root;
  DomainRole role = DomainRole::real;
  bool has_labels = false;
  std::map<std::string, std::vector<std::string>> splits;  // split -> sequences

  void validate() const {
    if (root.empty()) throw InputError("dataset: root path is empty");
    if (role == DomainRole::simulated && !has_labels)
      throw InputError("dataset: simulated domain requires labels");
    std::vector<std::string> seen;
    for (const auto& [split, seqs] : splits)
      for (const auto& s : seqs) {
        if (std::find(seen.begin(), seen.end(), s) != seen.end())
          throw InputError("dataset: sequence " + s + " assigned to multiple splits");
        seen.push_back(s);
      }
  }

  // Keys: <prefix>root, <prefix>role, <prefix>has_labels, <prefix>split.<name>.
  static DatasetSpec from_config(const config::KeyValue& kv,
                                 const std::string& prefix) {
    DatasetSpec spec;
    spec.root = kv.require_str(prefix + "root");
    std::string role = kv.get_str(prefix + "role", "real");
    if (role == "simulated")
      spec.role = DomainRole::simulated;
    else if (role == "real")
      spec.role = DomainRole::real;
    else
      throw InputError("dataset: role must be simulated|real, got " + role);
    spec.has_labels = kv.get_bool(prefix + "has_labels",
                                  spec.role == DomainRole::simulated);
    for (const auto& [k, v] : kv.items()) {
      const std::string want = prefix + "split.";
      if (k.rfind(want, 0) == 0) {
        std::string split = k.substr(want.size());
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ','))
          if (auto t = config::trim(item); !t.empty())
            spec.splits[split].push_back(t);
      }
    }
    spec.validate();
    return spec;
  }
};

struct ScanEntry {
  std::string sequence;
  std::string scan_path;
  std::optional<std::string> label_path;
};

inline std::vector<ScanEntry> scan_files(const DatasetSpec& spec,
                                         const std::string& split) {
  spec.validate();
  auto it = spec.splits.find(split);
  if (it == spec.splits.end())
    throw InputError("dataset: unknown split '" + split + "'");
  std::vector<ScanEntry> out;
  for (const std::string& seq : it->second) {
    fs::path vel = fs::path(spec.root) / "sequences" / seq / "velodyne";
    if (!fs::is_directory(vel))
      throw InputError("dataset: missing directory " + vel.string());
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(vel))
      if (entry.is_regular_file() && entry.path().extension() == ".bin")
        names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const std::string& n : names) {
      ScanEntry e;
      e.sequence = seq;
      e.scan_path = (vel / n).string();
      if (spec.has_labels) {
        fs::path lab = fs::path(spec.root) / "sequences" / seq / "labels" /
                       (fs::path(n).stem().string() + ".label");
        if (!fs::is_regular_file(lab))
          throw InputError("dataset: missing label file " + lab.string());
        e.label_path = lab.string();
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

// Deterministic iteration order; shuffled only when an rng is supplied.
inline std::vector<ScanEntry> iterate(const DatasetSpec& spec, const std::string& split,
                                      Rng* rng = nullptr) {
  std::vector<ScanEntry> entries = scan_files(spec, split);
  if (rng) rng->shuffle(entries);
  return entries;
}

struct LoadedScan {
  rangeview::PointCloud cloud;
  std::vector<std::int32_t> labels;  // empty when the dataset has none
};

inline LoadedScan load_entry(const ScanEntry& e, const ClassTable& table) {
  LoadedScan s;
  s.cloud = read_scan(e.scan_path).cloud;
  if (e.label_path) {
    s.labels = read_labels(*e.label_path, table, s.cloud.size()).classes;
    s.cloud.aux_channels = 1;
    for (std::size_t i = 0; i < s.cloud.points.size(); ++i)
      s.cloud.points[i].aux = {static_cast<double>(s.labels[i])};
  }
  return s;
}

// Normalized point count per class id over a whole split.
inline std::map<int, double> class_proportions(const DatasetSpec& spec,
                                               const std::string& split,
                                               const ClassTable& table) {
  if (!spec.has_labels)
    throw InputError("class_proportions: dataset has no labels");
  std::map<int, std::uint64_t> counts;
  for (int id : table.ids()) counts[id] = 0;
  std::uint64_t total = 0;
  for (const ScanEntry& e : scan_files(spec, split)) {
    auto scan = read_scan(e.scan_path);
    auto labels = read_labels(*e.label_path, table, scan.cloud.size());
    for (std::int32_t c : labels.classes) {
      counts[c]++;
      total++;
    }
  }
  if (total == 0) throw InputError("class_proportions: split has no points");
  std::map<int, double> out;
  for (auto& [id, n] : counts)
    out[id] = static_cast<double>(n) / static_cast<double>(total);
  return out;
}

// ---------------------------------------------------------------------------
// Pairing manifest: "input<TAB>output<TAB>fnv1a64-of-output-bytes" lines.
// ---------------------------------------------------------------------------

struct ManifestPair {
  std::string input;
  std::string output;
  std::string checksum;  // 16 hex digits
};

inline std::string file_checksum(const std::string& path) {
  auto bytes = io::read_file(path);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

inline void write_manifest(const std::vector<ManifestPair>& pairs,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open for writing: " + path);
  for (const auto& p : pairs) f << p.input << "\t" << p.output << "\t" << p.checksum << "\n";
  if (!f) throw InputError("write failed: " + path);
}

inline std::vector<ManifestPair> read_manifest(const std::string& path,
                                               bool verify = false) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open manifest: " + path);
  std::vector<ManifestPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (config::trim(line).empty()) continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw FormatError("manifest line " + std::to_string(lineno) +
                        ": expected three tab-separated fields");
    ManifestPair p;
    p.input = line.substr(0, t1);
    p.output = line.substr(t1 + 1, t2 - t1 - 1);
    p.checksum = line.substr(t2 + 1);
    if (p.checksum.size() != 16)
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad checksum");
    if (verify && file_checksum(p.output) != p.checksum)
      throw FormatError("manifest: checksum mismatch for " + p.output);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace coligen::dataio
