#pragma once

// Multi-cue graph network: each sample is a complete graph whose nodes are
// per-cue feature vectors. Nodes are projected to a shared hidden size,
// exchange cue-weighted messages for a fixed number of GRU steps, and are
// classified individually before a majority vote.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mcgnn/error.hpp"
#include "mcgnn/linalg.hpp"
#include "mcgnn/rng.hpp"

namespace mcgnn {

struct CueSpec {
  std::string name;
  std::size_t feature_dim = 1;
  std::size_t cap_train = 1;  // node cap while training (random subset)
  std::size_t cap_eval = 1;   // node cap while evaluating (first items)

  friend bool operator==(const CueSpec&, const CueSpec&) = default;
};

inline void validate_cues(std::span<const CueSpec> cues) {
  if (cues.empty()) throw DataError("at least one cue must be declared");
  std::set<std::string> seen;
  for (const auto& c : cues) {
    if (c.name.empty()) throw DataError("cue name must be non-empty");
    if (!seen.insert(c.name).second) throw DataError("duplicate cue name '" + c.name + "'");
    if (c.feature_dim < 1) throw DataError("cue '" + c.name + "': feature_dim must be >= 1");
    if (c.cap_train < 1 || c.cap_eval < 1) {
      throw DataError("cue '" + c.name + "': caps must be >= 1");
    }
  }
}

/// One image: for every cue, an ordered list of feature vectors.
struct GraphSample {
  std::string id;
  std::size_t label = 0;
  std::vector<std::vector<Vector>> features;  // [cue][item] -> vector

  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& items : features) n += items.size();
    return n;
  }

  friend bool operator==(const GraphSample&, const GraphSample&) = default;
};

/// Checks feature dimensions and node count against the declared cues.
inline void validate_sample(const GraphSample& s, std::span<const CueSpec> cues) {
  if (s.features.size() != cues.size()) {
    throw DataError("sample '" + s.id + "': has " + std::to_string(s.features.size()) +
                    " cue lists, expected " + std::to_string(cues.size()));
  }
  for (std::size_t q = 0; q < cues.size(); ++q) {
    for (std::size_t j = 0; j < s.features[q].size(); ++j) {
      const auto got = s.features[q][j].size();
      if (got != cues[q].feature_dim) {
        throw DataError("sample '" + s.id + "', cue '" + cues[q].name + "' item " +
                        std::to_string(j) + ": expected dim " +
                        std::to_string(cues[q].feature_dim) + ", got " +
                        std::to_string(got));
      }
    }
  }
  if (s.node_count() == 0) throw DataError("sample '" + s.id + "' has no nodes");
}

struct Hyper {
  std::size_t hidden = 128;  // L_h
  std::size_t steps = 4;     // K
  std::size_t classes = 3;   // C

  friend bool operator==(const Hyper&, const Hyper&) = default;
};

/// Every trainable array, in a fixed order. Used for parameters, gradients
/// and optimizer moments alike.
struct ParamTensors {
  std::vector<Matrix> proj_weight;  // per cue, hidden x feature_dim
  std::vector<Matrix> proj_bias;    // per cue, hidden x 1
  std::vector<Matrix> edge_weight;  // per sender cue, hidden x hidden
  Matrix update_w, update_u;        // z gate
  Matrix reset_w, reset_u;          // r gate
  Matrix cand_w, cand_u;            // candidate state
  Matrix readout_weight;            // classes x hidden
  Matrix readout_bias;              // classes x 1

  friend bool operator==(const ParamTensors&, const ParamTensors&) = default;
};

namespace detail {

template <class T, class P>
std::vector<P> tensor_ptrs(T& t) {
  std::vector<P> out;
  for (std::size_t q = 0; q < t.proj_weight.size(); ++q) {
    out.push_back(&t.proj_weight[q]);
    out.push_back(&t.proj_bias[q]);
  }
  for (auto& e : t.edge_weight) out.push_back(&e);
  for (auto* m : {&t.update_w, &t.update_u, &t.reset_w, &t.reset_u, &t.cand_w, &t.cand_u,
                  &t.readout_weight, &t.readout_bias}) {
    out.push_back(m);
  }
  return out;
}

}  // namespace detail

inline std::vector<Matrix*> tensors(ParamTensors& t) {
  return detail::tensor_ptrs<ParamTensors, Matrix*>(t);
}
inline std::vector<const Matrix*> tensors(const ParamTensors& t) {
  return detail::tensor_ptrs<const ParamTensors, const Matrix*>(t);
}

/// Names matching the order of tensors().
inline std::vector<std::string> tensor_names(std::span<const CueSpec> cues) {
  std::vector<std::string> out;
  for (const auto& c : cues) {
    out.push_back("projection.weight[" + c.name + "]");
    out.push_back("projection.bias[" + c.name + "]");
  }
  for (const auto& c : cues) out.push_back("edge.weight[" + c.name + "]");
  for (const char* n : {"gru.update.w", "gru.update.u", "gru.reset.w", "gru.reset.u",
                        "gru.candidate.w", "gru.candidate.u", "readout.weight",
                        "readout.bias"}) {
    out.emplace_back(n);
  }
  return out;
}

inline ParamTensors zero_tensors(const Hyper& h, std::span<const CueSpec> cues) {
  ParamTensors t;
  for (const auto& c : cues) {
    t.proj_weight.emplace_back(h.hidden, c.feature_dim);
    t.proj_bias.emplace_back(h.hidden, 1);
    t.edge_weight.emplace_back(h.hidden, h.hidden);
  }
  for (auto* m : {&t.update_w, &t.update_u, &t.reset_w, &t.reset_u, &t.cand_w, &t.cand_u}) {
    *m = Matrix(h.hidden, h.hidden);
  }
  t.readout_weight = Matrix(h.classes, h.hidden);
  t.readout_bias = Matrix(h.classes, 1);
  return t;
}

struct ModelParams {
  Hyper hyper;
  std::vector<CueSpec> cues;
  ParamTensors tensors;

  std::size_t cue_count() const { return cues.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* m : mcgnn::tensors(tensors)) n += m->size();
    return n;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline void validate_hyper(const Hyper& h) {
  if (h.hidden < 1) throw DataError("hidden size must be >= 1");
  if (h.classes < 2) throw DataError("class count must be >= 2");
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
inline ModelParams init_params(std::span<const CueSpec> cues, const Hyper& hyper,
                               std::uint64_t seed) {
  validate_hyper(hyper);
  validate_cues(cues);
  ModelParams p{hyper, {cues.begin(), cues.end()}, zero_tensors(hyper, cues)};
  Rng rng(seed);
  auto glorot = [&rng](Matrix& m) {
    const double s = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (double& v : m.values()) v = rng.uniform(-s, s);
  };
  for (auto& w : p.tensors.proj_weight) glorot(w);
  for (auto& w : p.tensors.edge_weight) glorot(w);
  for (auto* m : {&p.tensors.update_w, &p.tensors.update_u, &p.tensors.reset_w,
                  &p.tensors.reset_u, &p.tensors.cand_w, &p.tensors.cand_u,
                  &p.tensors.readout_weight}) {
    glorot(*m);
  }
  return p;
}

struct NodeRef {
  std::size_t cue = 0;
  std::size_t index = 0;  // position within the cue's list

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

/// Canonical order: ascending cue, then position within the cue.
inline std::vector<NodeRef> canonical_nodes(const GraphSample& s) {
  std::vector<NodeRef> nodes;
  for (std::size_t q = 0; q < s.features.size(); ++q) {
    for (std::size_t j = 0; j < s.features[q].size(); ++j) nodes.push_back({q, j});
  }
  return nodes;
}

/// Hidden states of every node at one step; row n belongs to nodes[n].
struct NodeStates {
  std::vector<NodeRef> nodes;
  Matrix states;
};

inline void check_sample_against(const GraphSample& s, const ModelParams& p) {
  validate_sample(s, p.cues);
}

/// Returns the projected states together with their pre-activations.
inline std::pair<NodeStates, Matrix> project_with_preactivation(const GraphSample& sample,
                                                                const ModelParams& params) {
  check_sample_against(sample, params);
  NodeStates out{canonical_nodes(sample), {}};
  const std::size_t hidden = params.hyper.hidden;
  Matrix pre(out.nodes.size(), hidden);
  out.states = Matrix(out.nodes.size(), hidden);
  for (std::size_t n = 0; n < out.nodes.size(); ++n) {
    const auto [q, j] = out.nodes[n];
    auto row = pre.row(n);
    matvec_add(params.tensors.proj_weight[q], sample.features[q][j], row);
    const auto bias = params.tensors.proj_bias[q].values();
    auto h = out.states.row(n);
    for (std::size_t d = 0; d < hidden; ++d) {
      row[d] += bias[d];
      h[d] = row[d] > 0.0 ? row[d] : 0.0;
    }
  }
  return {std::move(out), std::move(pre)};
}

/// h^0 = ReLU(W_cue x + b_cue) for every node.
inline NodeStates project_features(const GraphSample& sample, const ModelParams& params) {
  return project_with_preactivation(sample, params).first;
}

namespace detail {

inline void check_states(const Matrix& h, std::size_t n, const ModelParams& p,
                         const char* what) {
  if (h.rows() != n || h.cols() != p.hyper.hidden) {
    throw DimensionError(std::string(what) + ": states " + h.shape() + " but expected " +
                         shape_str(n, p.hyper.hidden));
  }
}

/// Per cue, the column-wise sum of its nodes' states. Each column is summed
/// in ascending value order, which makes the result independent of node order.
inline std::vector<Vector> cue_state_sums(std::span<const NodeRef> nodes, const Matrix& h,
                                          std::size_t cue_count) {
  std::vector<std::vector<std::size_t>> members(cue_count);
  for (std::size_t n = 0; n < nodes.size(); ++n) members[nodes[n].cue].push_back(n);
  std::vector<Vector> sums(cue_count, Vector(h.cols(), 0.0));
  std::vector<double> column;
  for (std::size_t q = 0; q < cue_count; ++q) {
    if (members[q].empty()) continue;
    column.resize(members[q].size());
    for (std::size_t d = 0; d < h.cols(); ++d) {
      for (std::size_t k = 0; k < members[q].size(); ++k) column[k] = h(members[q][k], d);
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double v : column) s += v;
      sums[q][d] = s;
    }
  }
  return sums;
}

}  // namespace detail

/// m_n = sum over every other node u of W^e_{cue(u)} h_u, evaluated as
/// (sum_q W^e_q S_q) - W^e_{cue(n)} h_n with S_q the per-cue state sums.
inline Matrix aggregate_messages(std::span<const NodeRef> nodes, const Matrix& h,
                                 const ModelParams& params) {
  detail::check_states(h, nodes.size(), params, "aggregate_messages");
  const std::size_t hidden = params.hyper.hidden;
  const auto sums = detail::cue_state_sums(nodes, h, params.cue_count());
  std::vector<bool> present(params.cue_count(), false);
  for (const auto& r : nodes) present[r.cue] = true;
  Vector total(hidden, 0.0);
  for (std::size_t q = 0; q < params.cue_count(); ++q) {
    if (present[q]) matvec_add(params.tensors.edge_weight[q], sums[q], total);
  }
  Matrix messages(nodes.size(), hidden);
  Vector self(hidden);
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    std::fill(self.begin(), self.end(), 0.0);
    matvec_add(params.tensors.edge_weight[nodes[n].cue], h.row(n), self);
    auto m = messages.row(n);
    for (std::size_t d = 0; d < hidden; ++d) m[d] = total[d] - self[d];
  }
  return messages;
}

inline Matrix aggregate_messages(const NodeStates& states, const ModelParams& params) {
  return aggregate_messages(states.nodes, states.states, params);
}

/// Gate values of one GRU step for every node.
struct GruStep {
  Matrix update;     // z
  Matrix reset;      // r
  Matrix candidate;  // h~
  Matrix next;       // h'
};

/// z = s(W_z m + U_z h), r = s(W_r m + U_r h), h~ = tanh(W_h m + U_h (r*h)),
/// h' = (1 - z) * h + z * h~. Gates have no bias terms.
inline GruStep gru_step(const Matrix& h, const Matrix& messages, const ModelParams& params) {
  const std::size_t n_nodes = h.rows();
  detail::check_states(h, n_nodes, params, "gru_step");
  detail::check_states(messages, n_nodes, params, "gru_step messages");
  const auto& t = params.tensors;
  const std::size_t hidden = params.hyper.hidden;
  GruStep out{Matrix(n_nodes, hidden), Matrix(n_nodes, hidden), Matrix(n_nodes, hidden),
              Matrix(n_nodes, hidden)};
  Vector pre(hidden), gated(hidden);
  for (std::size_t n = 0; n < n_nodes; ++n) {
    const auto hn = h.row(n);
    const auto mn = messages.row(n);
    auto z = out.update.row(n);
    auto r = out.reset.row(n);
    auto c = out.candidate.row(n);
    auto next = out.next.row(n);

    std::fill(pre.begin(), pre.end(), 0.0);
    matvec_add(t.update_w, mn, pre);
    matvec_add(t.update_u, hn, pre);
    for (std::size_t d = 0; d < hidden; ++d) z[d] = sigmoid(pre[d]);

    std::fill(pre.begin(), pre.end(), 0.0);
    matvec_add(t.reset_w, mn, pre);
    matvec_add(t.reset_u, hn, pre);
    for (std::size_t d = 0; d < hidden; ++d) {
      r[d] = sigmoid(pre[d]);
      gated[d] = r[d] * hn[d];
    }

    std::fill(pre.begin(), pre.end(), 0.0);
    matvec_add(t.cand_w, mn, pre);
    matvec_add(t.cand_u, gated, pre);
    for (std::size_t d = 0; d < hidden; ++d) {
      c[d] = std::tanh(pre[d]);
      next[d] = (1.0 - z[d]) * hn[d] + z[d] * c[d];
    }
  }
  return out;
}

inline GruStep gru_step(const NodeStates& states, const Matrix& messages,
                        const ModelParams& params) {
  return gru_step(states.states, messages, params);
}

struct Readout {
  Matrix logits;  // nodes x classes
  Matrix probs;   // nodes x classes
};

/// o = W h + b and p = softmax(o), node by node with shared weights.
inline Readout readout(const Matrix& h, const ModelParams& params) {
  detail::check_states(h, h.rows(), params, "readout");
  const std::size_t classes = params.hyper.classes;
  Readout out{Matrix(h.rows(), classes), Matrix(h.rows(), classes)};
  const auto bias = params.tensors.readout_bias.values();
  for (std::size_t n = 0; n < h.rows(); ++n) {
    auto o = out.logits.row(n);
    matvec_add(params.tensors.readout_weight, h.row(n), o);
    for (std::size_t c = 0; c < classes; ++c) o[c] += bias[c];
    softmax_stable_into(o, out.probs.row(n));
  }
  return out;
}

struct Vote {
  std::size_t predicted = 0;
  std::vector<std::size_t> node_votes;
  Vector mean_probs;  // diagnostic only
};

/// Majority vote over per-node argmax classes. Ties go to the larger summed
/// probability among the tied classes, then to the lower class index.
inline Vote vote(const Matrix& probs) {
  if (probs.rows() == 0) throw DataError("vote: no nodes");
  const std::size_t classes = probs.cols();
  Vote v;
  v.mean_probs.assign(classes, 0.0);
  std::vector<std::size_t> tally(classes, 0);
  Vector prob_sum(classes, 0.0);
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    const auto p = probs.row(n);
    const std::size_t c = argmax(p);
    v.node_votes.push_back(c);
    ++tally[c];
    for (std::size_t k = 0; k < classes; ++k) prob_sum[k] += p[k];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    if (tally[c] > tally[best] || (tally[c] == tally[best] && prob_sum[c] > prob_sum[best])) {
      best = c;
    }
  }
  v.predicted = best;
  for (std::size_t c = 0; c < classes; ++c) {
    v.mean_probs[c] = prob_sum[c] / static_cast<double>(probs.rows());
  }
  return v;
}

/// Intermediates of a forward pass, kept for backpropagation.
struct ForwardTrace {
  std::vector<NodeRef> nodes;
  Matrix proj_pre;                // W x + b before ReLU
  std::vector<Matrix> hidden;     // h^0 .. h^K
  std::vector<Matrix> messages;   // m^1 .. m^K
  std::vector<Matrix> update;     // z^1 .. z^K
  std::vector<Matrix> reset;      // r^1 .. r^K
  std::vector<Matrix> candidate;  // h~^1 .. h~^K
  Matrix logits;
  Matrix probs;
};

struct ForwardResult {
  Vote vote;
  Matrix probs;  // per node
  std::optional<ForwardTrace> trace;
};

inline ForwardResult forward(const GraphSample& sample, const ModelParams& params,
                             bool keep_trace = false) {
  auto [states, pre] = project_with_preactivation(sample, params);
  ForwardTrace trace;
  if (keep_trace) {
    trace.nodes = states.nodes;
    trace.proj_pre = std::move(pre);
    trace.hidden.push_back(states.states);
  }
  Matrix h = std::move(states.states);
  for (std::size_t k = 0; k < params.hyper.steps; ++k) {
    Matrix m = aggregate_messages(states.nodes, h, params);
    GruStep step = gru_step(h, m, params);
    if (keep_trace) {
      trace.messages.push_back(std::move(m));
      trace.update.push_back(std::move(step.update));
      trace.reset.push_back(std::move(step.reset));
      trace.candidate.push_back(std::move(step.candidate));
      trace.hidden.push_back(step.next);
    }
    h = std::move(step.next);
  }
  Readout out = readout(h, params);
  ForwardResult result{vote(out.probs), out.probs, std::nullopt};
  if (keep_trace) {
    trace.logits = std::move(out.logits);
    trace.probs = std::move(out.probs);
    result.trace = std::move(trace);
  }
  return result;
}

}  // namespace mcgnn
