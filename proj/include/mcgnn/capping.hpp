#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mcgnn/model.hpp"
#include "mcgnn/rng.hpp"

namespace mcgnn {

enum class CapMode { train, eval };

/// Indices kept when `count` items are capped to `cap` in train mode:
/// a uniformly random subset in original order (selection sampling, one
/// uniform draw per visited item).
inline std::vector<std::size_t> sample_kept_indices(std::size_t count, std::size_t cap,
                                                    Rng& rng) {
  std::vector<std::size_t> kept;
  if (count <= cap) {
    for (std::size_t i = 0; i < count; ++i) kept.push_back(i);
    return kept;
  }
  std::size_t needed = cap;
  for (std::size_t i = 0; i < count && needed > 0; ++i) {
    const auto remaining = static_cast<double>(count - i);
    if (rng.uniform() * remaining < static_cast<double>(needed)) {
      kept.push_back(i);
      --needed;
    }
  }
  return kept;
}

/// Limits each cue's node count. Train mode keeps a random subset of
/// cap_train items; eval mode keeps the first cap_eval items and never
/// touches `rng`. Feature values are copied unchanged.
inline GraphSample cap_cues(const GraphSample& sample, std::span<const CueSpec> cues,
                            CapMode mode, Rng* rng = nullptr) {
  GraphSample out{sample.id, sample.label, {}};
  out.features.resize(sample.features.size());
  for (std::size_t q = 0; q < sample.features.size(); ++q) {
    const auto& items = sample.features[q];
    const std::size_t cap = q < cues.size()
                                ? (mode == CapMode::train ? cues[q].cap_train : cues[q].cap_eval)
                                : items.size();
    if (items.size() <= cap) {
      out.features[q] = items;
    } else if (mode == CapMode::eval) {
      out.features[q].assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(cap));
    } else {
      if (rng == nullptr) throw UsageError("cap_cues: train mode needs a generator");
      for (std::size_t i : sample_kept_indices(items.size(), cap, *rng)) {
        out.features[q].push_back(items[i]);
      }
    }
  }
  return out;
}

}  // namespace mcgnn
