#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "mcgnn/model.hpp"
#include "mcgnn/rng.hpp"

namespace mcgnn::testing {

inline std::vector<CueSpec> make_cues(const std::vector<std::size_t>& dims,
                                      std::size_t cap_train = 16, std::size_t cap_eval = 48) {
  std::vector<CueSpec> cues;
  for (std::size_t q = 0; q < dims.size(); ++q) {
    cues.push_back({"cue" + std::to_string(q), dims[q], cap_train, cap_eval});
  }
  return cues;
}

/// Glorot weights plus small random biases, so bias paths are non-trivial.
inline ModelParams random_model(const std::vector<CueSpec>& cues, const Hyper& hyper,
                                std::uint64_t seed) {
  ModelParams p = init_params(cues, hyper, seed);
  Rng rng(seed, 99);
  for (auto& b : p.tensors.proj_bias) {
    for (double& v : b.values()) v = rng.uniform(-0.2, 0.2);
  }
  for (double& v : p.tensors.readout_bias.values()) v = rng.uniform(-0.2, 0.2);
  return p;
}

inline GraphSample random_sample(const std::vector<CueSpec>& cues,
                                 const std::vector<std::size_t>& counts, std::size_t classes,
                                 Rng& rng, std::string id = "s") {
  GraphSample s{std::move(id), rng.index(classes), {}};
  s.features.resize(cues.size());
  for (std::size_t q = 0; q < cues.size(); ++q) {
    for (std::size_t j = 0; j < counts[q]; ++j) {
      Vector v(cues[q].feature_dim);
      for (double& x : v) x = rng.normal();
      s.features[q].push_back(std::move(v));
    }
  }
  return s;
}

/// Random per-cue node counts with at least one node overall.
inline std::vector<std::size_t> random_counts(std::size_t cues, std::size_t max_per_cue, Rng& rng) {
  std::vector<std::size_t> c(cues);
  std::size_t total = 0;
  for (auto& n : c) total += (n = rng.index(max_per_cue + 1));
  if (total == 0) c[rng.index(cues)] = 1;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mcgnn") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace mcgnn::testing
