#pragma once

// Dataset manifest and record formats, validated loading, the synthetic
// multi-cue generator, and an importer for externally extracted features.
//
// On disk a dataset is one manifest.json plus one JSON-lines file per
// partition. Each record line looks like
//   {"id":"s17","label":2,"cues":{"face":[[...],[...]],"object":[[...]]}}
// A cue that is absent from a record has no nodes in that sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mcgnn/error.hpp"
#include "mcgnn/model.hpp"
#include "mcgnn/rng.hpp"

namespace mcgnn {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetFormat = "mcgnn-dataset";

struct DatasetManifest {
  int version = kDatasetVersion;
  std::vector<std::string> classes;
  std::vector<CueSpec> cues;
  std::vector<std::pair<std::string, std::string>> partitions;  // name -> file, in order
  fs::path base_dir;  // directory the partition paths are relative to

  std::size_t class_index(const std::string& name) const {
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) throw DataError("unknown class '" + name + "'");
    return static_cast<std::size_t>(it - classes.begin());
  }

  std::size_t cue_index(const std::string& name) const {
    for (std::size_t q = 0; q < cues.size(); ++q) {
      if (cues[q].name == name) return q;
    }
    throw DataError("unknown cue '" + name + "'");
  }
};

inline void validate_manifest(const DatasetManifest& m) {
  if (m.version != kDatasetVersion) {
    throw DataError("unsupported dataset version " + std::to_string(m.version));
  }
  if (m.classes.size() < 2) throw DataError("manifest needs at least 2 classes");
  std::set<std::string> names(m.classes.begin(), m.classes.end());
  if (names.size() != m.classes.size()) throw DataError("duplicate class names in manifest");
  validate_cues(m.cues);
}

/// FNV-1a over a canonical rendering of the class list and cue specs.
inline std::uint64_t manifest_fingerprint(std::span<const std::string> classes,
                                          std::span<const CueSpec> cues) {
  std::string canon = "classes";
  for (const auto& c : classes) canon += "|" + c;
  canon += "#cues";
  for (const auto& c : cues) {
    canon += "|" + c.name + "/" + std::to_string(c.feature_dim) + "/" +
             std::to_string(c.cap_train) + "/" + std::to_string(c.cap_eval);
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t manifest_fingerprint(const DatasetManifest& m) {
  return manifest_fingerprint(m.classes, m.cues);
}

struct Dataset {
  DatasetManifest manifest;
  std::map<std::string, std::vector<GraphSample>> partitions;

  bool has(const std::string& name) const { return partitions.count(name) != 0; }

  const std::vector<GraphSample>& partition(const std::string& name) const {
    auto it = partitions.find(name);
    if (it == partitions.end()) throw DataError("dataset has no '" + name + "' partition");
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// JSON encoding

inline ojson manifest_to_json(const DatasetManifest& m) {
  ojson j;
  j["format"] = kDatasetFormat;
  j["version"] = m.version;
  j["classes"] = m.classes;
  j["cues"] = ojson::array();
  for (const auto& c : m.cues) {
    j["cues"].push_back({{"name", c.name},
                         {"dim", c.feature_dim},
                         {"cap_train", c.cap_train},
                         {"cap_eval", c.cap_eval}});
  }
  j["partitions"] = ojson::object();
  for (const auto& [name, file] : m.partitions) j["partitions"][name] = file;
  return j;
}

inline DatasetManifest manifest_from_json(const ojson& j, const fs::path& base_dir) {
  DatasetManifest m;
  try {
    if (j.contains("format") && j.at("format").get<std::string>() != kDatasetFormat) {
      throw DataError("not a dataset manifest (format '" +
                      j.at("format").get<std::string>() + "')");
    }
    m.version = j.at("version").get<int>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& c : j.at("cues")) {
      const auto dim = c.at("dim").get<std::int64_t>();
      const auto ct = c.at("cap_train").get<std::int64_t>();
      const auto ce = c.at("cap_eval").get<std::int64_t>();
      if (dim < 1 || ct < 1 || ce < 1) {
        throw DataError("cue '" + c.at("name").get<std::string>() +
                        "': dim and caps must be positive");
      }
      m.cues.push_back({c.at("name").get<std::string>(), static_cast<std::size_t>(dim),
                        static_cast<std::size_t>(ct), static_cast<std::size_t>(ce)});
    }
    if (j.contains("partitions")) {
      for (const auto& [name, file] : j.at("partitions").items()) {
        m.partitions.emplace_back(name, file.get<std::string>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  m.base_dir = base_dir;
  validate_manifest(m);
  return m;
}

inline std::string record_to_line(const GraphSample& s, const DatasetManifest& m) {
  ojson j;
  j["id"] = s.id;
  j["label"] = s.label;
  j["cues"] = ojson::object();
  for (std::size_t q = 0; q < m.cues.size() && q < s.features.size(); ++q) {
    ojson items = ojson::array();
    for (const auto& v : s.features[q]) items.push_back(v);
    j["cues"][m.cues[q].name] = std::move(items);
  }
  return j.dump();
}

/// Parses and validates one record; `where` prefixes error messages.
inline GraphSample record_from_json(const ojson& j, const DatasetManifest& m,
                                    const std::string& where) {
  GraphSample s;
  try {
    s.id = j.at("id").get<std::string>();
    const auto& label = j.at("label");
    if (label.is_string()) {
      s.label = m.class_index(label.get<std::string>());
    } else {
      const auto v = label.get<std::int64_t>();
      if (v < 0 || static_cast<std::size_t>(v) >= m.classes.size()) {
        throw DataError("label " + std::to_string(v) + " outside [0, " +
                        std::to_string(m.classes.size()) + ")");
      }
      s.label = static_cast<std::size_t>(v);
    }
    s.features.assign(m.cues.size(), {});
    if (j.contains("cues")) {
      for (const auto& [name, items] : j.at("cues").items()) {
        const std::size_t q = m.cue_index(name);
        for (const auto& v : items) s.features[q].push_back(v.get<Vector>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": malformed record: " + e.what());
  } catch (const DataError& e) {
    throw DataError(where + (s.id.empty() ? "" : " (sample '" + s.id + "')") + ": " +
                    e.what());
  }
  try {
    validate_sample(s, m.cues);
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return s;
}

inline GraphSample record_from_line(const std::string& line, const DatasetManifest& m,
                                    const std::string& where) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": parse error: " + e.what());
  }
  return record_from_json(j, m, where);
}

inline std::vector<GraphSample> read_records(const fs::path& file, const DatasetManifest& m) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open data file " + file.string());
  std::vector<GraphSample> out;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(record_from_line(line, m, file.string() + ":" + std::to_string(lineno)));
    if (!ids.insert(out.back().id).second) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": duplicate sample id '" +
                      out.back().id + "'");
    }
  }
  return out;
}

inline DatasetManifest load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": parse error: " + e.what());
  }
  return manifest_from_json(j, manifest_path.parent_path());
}

/// Loads the manifest and every partition it lists, validating each sample.
inline Dataset load_dataset(const fs::path& manifest_path) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  for (const auto& [name, file] : d.manifest.partitions) {
    d.partitions[name] = read_records(d.manifest.base_dir / file, d.manifest);
  }
  return d;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Writes manifest.json plus one <partition>.jsonl per partition into `dir`.
/// Returns the manifest path.
inline fs::path write_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  DatasetManifest m = d.manifest;
  m.partitions.clear();
  for (const auto& [name, samples] : d.partitions) m.partitions.emplace_back(name, name + ".jsonl");
  // Conventional order first.
  std::stable_sort(m.partitions.begin(), m.partitions.end(), [](const auto& a, const auto& b) {
    auto rank = [](const std::string& n) { return n == "train" ? 0 : n == "val" ? 1 : n == "test" ? 2 : 3; };
    return rank(a.first) < rank(b.first);
  });
  for (const auto& [name, file] : m.partitions) {
    std::string text;
    for (const auto& s : d.partitions.at(name)) text += record_to_line(s, m) + "\n";
    write_text(dir / file, text);
  }
  const fs::path manifest_path = dir / "manifest.json";
  write_text(manifest_path, manifest_to_json(m).dump(2) + "\n");
  return manifest_path;
}

/// Copy of `d` restricted to the named cues, in the given order. Samples
/// left without nodes are dropped.
inline Dataset select_cues(const Dataset& d, const std::vector<std::string>& names) {
  Dataset out;
  out.manifest = d.manifest;
  out.manifest.cues.clear();
  std::vector<std::size_t> keep;
  for (const auto& n : names) {
    keep.push_back(d.manifest.cue_index(n));
    out.manifest.cues.push_back(d.manifest.cues[keep.back()]);
  }
  validate_cues(out.manifest.cues);
  for (const auto& [name, samples] : d.partitions) {
    auto& dst = out.partitions[name];
    for (const auto& s : samples) {
      GraphSample t{s.id, s.label, {}};
      for (std::size_t q : keep) t.features.push_back(s.features[q]);
      if (t.node_count() > 0) dst.push_back(std::move(t));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticCue {
  std::string name;
  std::size_t dim = 16;
  double mean_nodes = 3.0;
  std::size_t cap_train = 16;
  std::size_t cap_eval = 48;
  // center_groups[c] is the cluster used by class c in this cue. Classes
  // sharing a group are indistinguishable through this cue alone. Empty
  // means every class has its own cluster.
  std::vector<std::size_t> center_groups;
};

struct SyntheticSpec {
  std::size_t classes = 3;
  std::vector<SyntheticCue> cues;
  double separation = 5.0;  // distance between any two cluster centers
  double noise = 1.0;       // per-coordinate standard deviation
  double distractor_fraction = 0.0;
  std::size_t max_nodes = 64;  // per cue
  std::size_t train = 600;
  std::size_t val = 200;
  std::size_t test = 200;
  std::vector<double> class_weights;  // empty means balanced
  std::uint64_t seed = 1;
};

inline void validate_synthetic(const SyntheticSpec& s) {
  if (s.classes < 2) throw UsageError("synthetic: need at least 2 classes");
  if (s.cues.empty()) throw UsageError("synthetic: need at least one cue");
  if (!(s.noise > 0.0)) throw UsageError("synthetic: noise scale must be > 0");
  if (!(s.separation >= 0.0)) throw UsageError("synthetic: separation must be >= 0");
  if (s.distractor_fraction < 0.0 || s.distractor_fraction > 1.0) {
    throw UsageError("synthetic: distractor_fraction must lie in [0, 1]");
  }
  if (!s.class_weights.empty() && s.class_weights.size() != s.classes) {
    throw UsageError("synthetic: class_weights needs one entry per class");
  }
  double mean_total = 0.0;
  for (const auto& c : s.cues) {
    if (c.dim < 1) throw UsageError("synthetic: cue dim must be >= 1");
    if (c.mean_nodes < 0.0) throw UsageError("synthetic: mean_nodes must be >= 0");
    if (!c.center_groups.empty() && c.center_groups.size() != s.classes) {
      throw UsageError("synthetic: cue '" + c.name + "' center_groups needs one entry per class");
    }
    mean_total += c.mean_nodes;
  }
  if (!(mean_total > 0.0)) throw UsageError("synthetic: at least one cue needs mean_nodes > 0");
}

struct SyntheticData {
  Dataset dataset;
  std::vector<std::vector<Vector>> class_centers;  // [cue][class]
};

namespace detail {

inline std::size_t poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  const double limit = std::exp(-mean);
  std::size_t k = 0;
  double prod = rng.uniform();
  while (prod > limit) {
    ++k;
    prod *= rng.uniform();
  }
  return k;
}

/// Labels with exact per-class quotas (largest remainder), then shuffled.
inline std::vector<std::size_t> balanced_labels(std::size_t count, const SyntheticSpec& spec,
                                                Rng& rng) {
  std::vector<double> w = spec.class_weights;
  if (w.empty()) w.assign(spec.classes, 1.0);
  double total = 0.0;
  for (double x : w) total += x;
  std::vector<std::size_t> quota(spec.classes);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double exact = static_cast<double>(count) * w[c] / total;
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    rem.emplace_back(-(exact - std::floor(exact)), c);
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) ++quota[rem[i % rem.size()].second];
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < spec.classes; ++c) labels.insert(labels.end(), quota[c], c);
  for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.index(i)]);
  return labels;
}

}  // namespace detail

/// Builds a synthetic dataset in memory. Cluster centers of a cue are
/// mutually equidistant at `separation`: scaled orthonormal directions
/// obtained from Gram-Schmidt on Gaussian draws when the cue has enough
/// dimensions, otherwise random directions.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  validate_synthetic(spec);
  Rng rng(spec.seed);
  SyntheticData out;
  auto& m = out.dataset.manifest;
  for (std::size_t c = 0; c < spec.classes; ++c) m.classes.push_back("class" + std::to_string(c));
  for (const auto& c : spec.cues) m.cues.push_back({c.name, c.dim, c.cap_train, c.cap_eval});
  validate_manifest(m);

  // Centers per cue and group.
  std::vector<std::vector<Vector>> group_centers;
  std::vector<std::vector<std::size_t>> groups_of;
  for (const auto& cue : spec.cues) {
    std::vector<std::size_t> groups = cue.center_groups;
    if (groups.empty()) {
      for (std::size_t c = 0; c < spec.classes; ++c) groups.push_back(c);
    }
    const std::size_t n_groups = *std::max_element(groups.begin(), groups.end()) + 1;
    std::vector<Vector> dirs;
    for (std::size_t g = 0; g < n_groups; ++g) {
      Vector v(cue.dim);
      for (double& x : v) x = rng.normal();
      if (n_groups <= cue.dim) {
        for (const auto& u : dirs) {
          double dot = 0.0;
          for (std::size_t d = 0; d < cue.dim; ++d) dot += v[d] * u[d];
          for (std::size_t d = 0; d < cue.dim; ++d) v[d] -= dot * u[d];
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
      dirs.push_back(v);
    }
    // Orthonormal directions scaled by s / sqrt(2) are pairwise s apart.
    const double scale = spec.separation / std::numbers::sqrt2;
    for (auto& v : dirs) {
      for (double& x : v) x *= scale;
    }
    group_centers.push_back(dirs);
    groups_of.push_back(groups);
    std::vector<Vector> per_class;
    for (std::size_t c = 0; c < spec.classes; ++c) per_class.push_back(dirs[groups[c]]);
    out.class_centers.push_back(std::move(per_class));
  }

  auto make_partition = [&](const std::string& name, std::size_t count) {
    std::vector<GraphSample> samples;
    const auto labels = detail::balanced_labels(count, spec, rng);
    for (std::size_t i = 0; i < count; ++i) {
      GraphSample s{name + "-" + std::to_string(i), labels[i], {}};
      s.features.resize(spec.cues.size());
      std::vector<std::size_t> counts(spec.cues.size());
      std::size_t total = 0;
      for (std::size_t q = 0; q < spec.cues.size(); ++q) {
        counts[q] = std::min(detail::poisson(rng, spec.cues[q].mean_nodes), spec.max_nodes);
        total += counts[q];
      }
      if (total == 0) {
        // Guarantee one node, in the cue with the largest mean.
        std::size_t best = 0;
        for (std::size_t q = 1; q < spec.cues.size(); ++q) {
          if (spec.cues[q].mean_nodes > spec.cues[best].mean_nodes) best = q;
        }
        counts[best] = 1;
      }
      for (std::size_t q = 0; q < spec.cues.size(); ++q) {
        const auto& centers = group_centers[q];
        for (std::size_t j = 0; j < counts[q]; ++j) {
          const bool distractor = spec.distractor_fraction > 0.0 &&
                                  rng.uniform() < spec.distractor_fraction;
          const Vector& center =
              distractor ? centers[rng.index(centers.size())] : centers[groups_of[q][s.label]];
          Vector v(center.size());
          for (std::size_t d = 0; d < v.size(); ++d) v[d] = center[d] + spec.noise * rng.normal();
          s.features[q].push_back(std::move(v));
        }
      }
      samples.push_back(std::move(s));
    }
    return samples;
  };
  out.dataset.partitions["train"] = make_partition("train", spec.train);
  if (spec.val > 0) out.dataset.partitions["val"] = make_partition("val", spec.val);
  if (spec.test > 0) out.dataset.partitions["test"] = make_partition("test", spec.test);
  for (const auto& [name, samples] : out.dataset.partitions) {
    m.partitions.emplace_back(name, name + ".jsonl");
  }
  return out;
}

/// Generates and writes a synthetic dataset; returns the manifest path.
inline fs::path gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  return write_dataset(generate_synthetic(spec).dataset, out_dir);
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.classes = j.value("classes", s.classes);
    s.separation = j.value("separation", s.separation);
    s.noise = j.value("noise", s.noise);
    s.distractor_fraction = j.value("distractor_fraction", s.distractor_fraction);
    s.max_nodes = j.value("max_nodes", s.max_nodes);
    s.train = j.value("train", s.train);
    s.val = j.value("val", s.val);
    s.test = j.value("test", s.test);
    s.seed = j.value("seed", s.seed);
    s.class_weights = j.value("class_weights", s.class_weights);
    for (const auto& c : j.at("cues")) {
      SyntheticCue cue;
      cue.name = c.at("name").get<std::string>();
      cue.dim = c.value("dim", cue.dim);
      cue.mean_nodes = c.value("mean_nodes", cue.mean_nodes);
      cue.cap_train = c.value("cap_train", cue.cap_train);
      cue.cap_eval = c.value("cap_eval", cue.cap_eval);
      cue.center_groups = c.value("center_groups", cue.center_groups);
      s.cues.push_back(std::move(cue));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed synthetic spec: ") + e.what());
  }
  validate_synthetic(s);
  return s;
}

// ---------------------------------------------------------------------------
// Importing externally extracted features

struct ImportOptions {
  std::vector<std::string> classes;  // label order; empty = sorted names from labels.tsv
  std::vector<std::string> cues;     // cue order; empty = sorted *.txt stems found
  std::size_t cap_train = 16;
  std::size_t cap_eval = 48;
  std::map<std::string, std::pair<std::size_t, std::size_t>> cue_caps;  // per-cue overrides
};

/// Reads `dir/labels.tsv` (lines: sample_id, class name, optional partition,
/// tab-separated) and `dir/<sample_id>/<cue>.txt` (one whitespace-separated
/// vector per line; a missing file means no nodes for that cue).
inline Dataset import_features(const fs::path& dir, const ImportOptions& opt) {
  const fs::path labels_path = dir / "labels.tsv";
  if (!fs::is_directory(dir)) throw DataError("import: " + dir.string() + " is not a directory");
  if (!fs::exists(labels_path)) throw DataError("import: missing " + labels_path.string());

  struct Row {
    std::string id, label, partition;
  };
  std::vector<Row> rows;
  {
    std::ifstream in(labels_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, '\t')) f.push_back(cell);
      if (f.size() < 2 || f.size() > 3 || f[0].empty() || f[1].empty()) {
        throw DataError(labels_path.string() + ":" + std::to_string(lineno) +
                        ": expected 'id<TAB>class[<TAB>partition]'");
      }
      rows.push_back({f[0], f[1], f.size() == 3 ? f[2] : "train"});
    }
  }
  if (rows.empty()) throw DataError("import: no samples listed in " + labels_path.string());

  Dataset d;
  auto& m = d.manifest;
  m.classes = opt.classes;
  if (m.classes.empty()) {
    std::set<std::string> names;
    for (const auto& r : rows) names.insert(r.label);
    m.classes.assign(names.begin(), names.end());
  }
  std::vector<std::string> cue_names = opt.cues;
  if (cue_names.empty()) {
    std::set<std::string> found;
    for (const auto& r : rows) {
      const fs::path sd = dir / r.id;
      if (!fs::is_directory(sd)) continue;
      for (const auto& e : fs::directory_iterator(sd)) {
        if (e.path().extension() == ".txt") found.insert(e.path().stem().string());
      }
    }
    cue_names.assign(found.begin(), found.end());
  }
  if (cue_names.empty()) throw DataError("import: no feature files found under " + dir.string());

  // Read all vectors, inferring each cue's dimension from the first one.
  std::vector<std::size_t> dims(cue_names.size(), 0);
  std::vector<std::pair<std::string, GraphSample>> samples;
  for (const auto& r : rows) {
    GraphSample s{r.id, 0, std::vector<std::vector<Vector>>(cue_names.size())};
    auto it = std::find(m.classes.begin(), m.classes.end(), r.label);
    if (it == m.classes.end()) throw DataError("import: sample '" + r.id + "' has unknown class '" + r.label + "'");
    s.label = static_cast<std::size_t>(it - m.classes.begin());
    for (std::size_t q = 0; q < cue_names.size(); ++q) {
      const fs::path f = dir / r.id / (cue_names[q] + ".txt");
      if (!fs::exists(f)) continue;
      std::ifstream in(f);
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        std::stringstream ss(line);
        Vector v;
        std::string tok;
        while (ss >> tok) {
          try {
            std::size_t used = 0;
            v.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
          } catch (const std::exception&) {
            throw DataError(f.string() + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
          }
        }
        if (v.empty()) continue;
        if (dims[q] == 0) dims[q] = v.size();
        if (v.size() != dims[q]) {
          throw DataError("import: cue '" + cue_names[q] + "' in sample '" + r.id + "' has dim " +
                          std::to_string(v.size()) + ", expected " + std::to_string(dims[q]));
        }
        s.features[q].push_back(std::move(v));
      }
    }
    if (s.node_count() == 0) throw DataError("import: sample '" + r.id + "' has no feature vectors");
    samples.emplace_back(r.partition, std::move(s));
  }
  for (std::size_t q = 0; q < cue_names.size(); ++q) {
    if (dims[q] == 0) throw DataError("import: cue '" + cue_names[q] + "' has no vectors in any sample");
    auto caps = std::make_pair(opt.cap_train, opt.cap_eval);
    if (auto it = opt.cue_caps.find(cue_names[q]); it != opt.cue_caps.end()) caps = it->second;
    m.cues.push_back({cue_names[q], dims[q], caps.first, caps.second});
  }
  validate_manifest(m);
  for (auto& [part, s] : samples) d.partitions[part].push_back(std::move(s));
  for (const auto& [name, v] : d.partitions) m.partitions.emplace_back(name, name + ".jsonl");
  return d;
}

}  // namespace mcgnn
