#pragma once

// Node-averaged cross-entropy, backpropagation through the unrolled GRU
// steps, the Adam update and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mcgnn/capping.hpp"
#include "mcgnn/error.hpp"
#include "mcgnn/linalg.hpp"
#include "mcgnn/model.hpp"
#include "mcgnn/reference.hpp"
#include "mcgnn/rng.hpp"

namespace mcgnn {

inline constexpr double kLogClamp = 1e-300;

struct LossValue {
  double value = 0.0;
  bool clamped = false;  // some p[label] fell below kLogClamp
};

/// L = -(1/N) sum_n log p_n[label].
inline LossValue loss(const Matrix& probs, std::size_t label) {
  if (probs.rows() == 0) throw DataError("loss: no nodes");
  if (label >= probs.cols()) {
    throw DataError("loss: label " + std::to_string(label) + " out of range for " +
                    std::to_string(probs.cols()) + " classes");
  }
  LossValue out;
  double total = 0.0;
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    double p = probs(n, label);
    if (p < kLogClamp) {
      p = kLogClamp;
      out.clamped = true;
    }
    total += std::log(p);
  }
  out.value = -total / static_cast<double>(probs.rows());
  return out;
}

struct Gradients {
  ParamTensors tensors;

  static Gradients zeros_like(const ModelParams& p) {
    return {zero_tensors(p.hyper, p.cues)};
  }
};

inline void add_scaled(ParamTensors& acc, const ParamTensors& g, double scale) {
  auto dst = tensors(acc);
  auto src = tensors(g);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto d = dst[i]->values();
    auto s = src[i]->values();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += scale * s[k];
  }
}

inline double global_norm(const ParamTensors& t) {
  double s = 0.0;
  for (const Matrix* m : tensors(t)) {
    for (double v : m->values()) s += v * v;
  }
  return std::sqrt(s);
}

/// Exact gradient of the node-averaged loss for the sample that produced
/// `trace`, accumulated over all nodes and unrolled steps.
inline Gradients backward(const ForwardTrace& trace, const GraphSample& sample,
                          const ModelParams& params) {
  const std::size_t steps = params.hyper.steps;
  if (trace.hidden.size() != steps + 1 || trace.messages.size() != steps) {
    throw DataError("backward: trace does not match the model's step count");
  }
  const std::size_t n_nodes = trace.nodes.size();
  if (n_nodes == 0 || trace.probs.rows() != n_nodes) {
    throw DataError("backward: missing or empty forward trace");
  }
  if (sample.label >= params.hyper.classes) {
    throw DataError("sample '" + sample.id + "': label out of range");
  }
  const std::size_t hidden = params.hyper.hidden;
  const std::size_t classes = params.hyper.classes;
  const auto& t = params.tensors;
  Gradients g = Gradients::zeros_like(params);
  auto& gt = g.tensors;

  // Readout and softmax-cross-entropy.
  Matrix dh(n_nodes, hidden);
  Vector dlogit(classes);
  const double inv_n = 1.0 / static_cast<double>(n_nodes);
  const Matrix& h_last = trace.hidden.back();
  for (std::size_t n = 0; n < n_nodes; ++n) {
    for (std::size_t c = 0; c < classes; ++c) {
      dlogit[c] = (trace.probs(n, c) - (c == sample.label ? 1.0 : 0.0)) * inv_n;
      gt.readout_bias(c, 0) += dlogit[c];
    }
    outer_add(gt.readout_weight, dlogit, h_last.row(n));
    matvec_transposed_add(t.readout_weight, dlogit, dh.row(n));
  }

  // GRU steps, last to first.
  Vector da_z(hidden), da_r(hidden), da_c(hidden), dgated(hidden), gated(hidden), dr(hidden);
  for (std::size_t s = steps; s-- > 0;) {
    const Matrix& h_prev = trace.hidden[s];
    const Matrix& m = trace.messages[s];
    const Matrix& z = trace.update[s];
    const Matrix& r = trace.reset[s];
    const Matrix& cand = trace.candidate[s];
    Matrix dh_prev(n_nodes, hidden);
    Matrix dm(n_nodes, hidden);
    for (std::size_t n = 0; n < n_nodes; ++n) {
      const auto hp = h_prev.row(n);
      const auto zn = z.row(n);
      const auto rn = r.row(n);
      const auto cn = cand.row(n);
      const auto dhn = dh.row(n);
      auto dhp = dh_prev.row(n);
      for (std::size_t d = 0; d < hidden; ++d) {
        const double dz = dhn[d] * (cn[d] - hp[d]);
        da_z[d] = dz * zn[d] * (1.0 - zn[d]);
        da_c[d] = dhn[d] * zn[d] * (1.0 - cn[d] * cn[d]);
        dhp[d] = dhn[d] * (1.0 - zn[d]);
        gated[d] = rn[d] * hp[d];
      }
      outer_add(gt.cand_w, da_c, m.row(n));
      outer_add(gt.cand_u, da_c, gated);
      std::fill(dgated.begin(), dgated.end(), 0.0);
      matvec_transposed_add(t.cand_u, da_c, dgated);
      for (std::size_t d = 0; d < hidden; ++d) {
        dr[d] = dgated[d] * hp[d];
        dhp[d] += dgated[d] * rn[d];
        da_r[d] = dr[d] * rn[d] * (1.0 - rn[d]);
      }
      auto dmn = dm.row(n);
      matvec_transposed_add(t.cand_w, da_c, dmn);

      outer_add(gt.update_w, da_z, m.row(n));
      outer_add(gt.update_u, da_z, hp);
      matvec_transposed_add(t.update_w, da_z, dmn);
      matvec_transposed_add(t.update_u, da_z, dhp);

      outer_add(gt.reset_w, da_r, m.row(n));
      outer_add(gt.reset_u, da_r, hp);
      matvec_transposed_add(t.reset_w, da_r, dmn);
      matvec_transposed_add(t.reset_u, da_r, dhp);
    }

    // Messages: node u reaches every other node n through W^e_{cue(u)}, so
    // its upstream gradient is sum_{n != u} dm_n = D - dm_u.
    Vector total(hidden, 0.0);
    for (std::size_t n = 0; n < n_nodes; ++n) {
      const auto dmn = dm.row(n);
      for (std::size_t d = 0; d < hidden; ++d) total[d] += dmn[d];
    }
    Vector upstream(hidden);
    for (std::size_t u = 0; u < n_nodes; ++u) {
      const std::size_t q = trace.nodes[u].cue;
      const auto dmu = dm.row(u);
      for (std::size_t d = 0; d < hidden; ++d) upstream[d] = total[d] - dmu[d];
      outer_add(gt.edge_weight[q], upstream, h_prev.row(u));
      matvec_transposed_add(t.edge_weight[q], upstream, dh_prev.row(u));
    }
    dh = std::move(dh_prev);
  }

  // Projection through the ReLU.
  Vector da(hidden);
  for (std::size_t n = 0; n < n_nodes; ++n) {
    const auto [q, j] = trace.nodes[n];
    const auto pre = trace.proj_pre.row(n);
    const auto dhn = dh.row(n);
    for (std::size_t d = 0; d < hidden; ++d) {
      da[d] = pre[d] > 0.0 ? dhn[d] : 0.0;
      gt.proj_bias[q](d, 0) += da[d];
    }
    outer_add(gt.proj_weight[q], da, sample.features[q][j]);
  }
  return g;
}

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  ParamTensors first;
  ParamTensors second;

  static AdamState fresh(const ModelParams& p, double lr) {
    AdamState s;
    s.lr = lr;
    s.first = zero_tensors(p.hyper, p.cues);
    s.second = zero_tensors(p.hyper, p.cues);
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected adaptive-moment update. Rejects non-finite gradients
/// before touching any state.
inline void adam_step(ModelParams& params, const Gradients& grads, AdamState& state) {
  auto p = tensors(params.tensors);
  auto g = tensors(grads.tensors);
  auto m1 = tensors(state.first);
  auto m2 = tensors(state.second);
  if (g.size() != p.size() || m1.size() != p.size() || m2.size() != p.size()) {
    throw DimensionError("adam_step: tensor count mismatch");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p[i]->same_shape(*g[i]) || !p[i]->same_shape(*m1[i]) || !p[i]->same_shape(*m2[i])) {
      throw DimensionError("adam_step: shape mismatch at tensor " + std::to_string(i) +
                           " (" + p[i]->shape() + " vs " + g[i]->shape() + ")");
    }
    if (!all_finite(g[i]->values())) {
      throw NumericalError("adam_step: non-finite gradient in tensor " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double step_size = state.lr / c1;
  const double inv_c2 = 1.0 / c2;
  const double eps = state.eps;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double* __restrict w = p[i]->values().data();
    const double* __restrict gv = g[i]->values().data();
    double* __restrict a = m1[i]->values().data();
    double* __restrict b = m2[i]->values().data();
    const std::size_t n = p[i]->size();
    for (std::size_t k = 0; k < n; ++k) {
      a[k] = b1 * a[k] + (1.0 - b1) * gv[k];
      b[k] = b2 * b[k] + (1.0 - b2) * gv[k] * gv[k];
      w[k] -= step_size * a[k] / (std::sqrt(b[k] * inv_c2) + eps);
    }
  }
}

/// Loss of one sample under `params` (no capping applied).
inline double sample_loss(const GraphSample& sample, const ModelParams& params) {
  return loss(forward(sample, params).probs, sample.label).value;
}

struct GradGroupError {
  std::string name;
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t worst_index = 0;
  std::size_t entries = 0;
};

struct GradCheckReport {
  std::vector<GradGroupError> groups;

  double max_rel() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel);
    return m;
  }
};

/// Relative discrepancy between an analytic and a numerical derivative.
/// Magnitudes below `floor` are compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

/// Central differences (L(w+e) - L(w-e)) / 2e against `analytic`, entry by
/// entry, summarized per parameter group. The loss is evaluated by the
/// long-double reference path, not by forward().
inline GradCheckReport grad_check(const ModelParams& params, const GraphSample& sample,
                                  double epsilon, const Gradients& analytic,
                                  double floor = 1e-8) {
  using Real = long double;
  GradCheckReport report;
  const auto names = tensor_names(params.cues);
  const auto param_t = tensors(params.tensors);
  const auto grad_t = tensors(analytic.tensors);
  if (grad_t.size() != param_t.size()) throw DimensionError("grad_check: tensor count mismatch");
  for (std::size_t i = 0; i < param_t.size(); ++i) {
    if (!param_t[i]->same_shape(*grad_t[i])) {
      throw DimensionError("grad_check: shape mismatch for " + names[i]);
    }
    GradGroupError ge{names[i], 0.0, 0.0, 0, param_t[i]->size()};
    const auto ga = grad_t[i]->values();
    for (std::size_t k = 0; k < ga.size(); ++k) {
      const Real up = reference_loss<Real>(params, sample, Perturbation<Real>{i, k, epsilon});
      const Real down =
          reference_loss<Real>(params, sample, Perturbation<Real>{i, k, -Real(epsilon)});
      const double numeric = static_cast<double>((up - down) / (2 * Real(epsilon)));
      const double rel = relative_error(ga[k], numeric, floor);
      ge.max_abs = std::max(ge.max_abs, std::abs(ga[k] - numeric));
      if (rel > ge.max_rel) {
        ge.max_rel = rel;
        ge.worst_index = k;
      }
    }
    report.groups.push_back(std::move(ge));
  }
  return report;
}

inline GradCheckReport grad_check(const ModelParams& params, const GraphSample& sample,
                                  double epsilon, double floor = 1e-8) {
  auto fr = forward(sample, params, true);
  return grad_check(params, sample, epsilon, backward(*fr.trace, sample, params), floor);
}

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 20;
  std::size_t steps = 4;     // K
  std::size_t hidden = 128;  // L_h
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // global-norm clip; 0 disables
  std::vector<double> lr_grid{1e-5, 1e-4, 1e-3, 1e-2};
};

inline void validate_train_config(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw UsageError("learning rate must be a finite non-negative number");
  }
  if (c.epochs < 1) throw UsageError("epochs must be >= 1");
  if (c.batch_size < 1) throw UsageError("batch size must be >= 1");
  if (c.hidden < 1) throw UsageError("hidden size must be >= 1");
  if (c.clip_norm < 0.0) throw UsageError("clip norm must be >= 0");
}

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t clamped = 0;  // samples whose loss hit the log clamp
};

/// Random stream used for shuffling and capping in a given epoch. Derived
/// from (seed, epoch) only, so training can resume at any epoch boundary.
inline Rng epoch_rng(std::uint64_t seed, std::size_t epoch) {
  return Rng(seed, static_cast<std::uint64_t>(epoch));
}

/// One pass over `samples` in shuffled order with train-mode capping
/// re-drawn for this epoch. Gradients are averaged within each batch.
inline EpochStats train_epoch(std::span<const GraphSample> samples, ModelParams& params,
                              AdamState& state, const TrainConfig& config,
                              std::size_t epoch) {
  if (samples.empty()) throw DataError("train_epoch: empty training set");
  Rng rng = epoch_rng(config.seed, epoch);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  EpochStats stats;
  double loss_sum = 0.0;
  Gradients batch = Gradients::zeros_like(params);
  std::size_t in_batch = 0;
  auto flush = [&] {
    if (in_batch == 0) return;
    if (in_batch > 1) {
      const double scale = 1.0 / static_cast<double>(in_batch);
      for (Matrix* m : tensors(batch.tensors)) {
        for (double& v : m->values()) v *= scale;
      }
    }
    if (config.clip_norm > 0.0) {
      const double norm = global_norm(batch.tensors);
      if (norm > config.clip_norm) {
        const double scale = config.clip_norm / norm;
        for (Matrix* m : tensors(batch.tensors)) {
          for (double& v : m->values()) v *= scale;
        }
      }
    }
    adam_step(params, batch, state);
    for (Matrix* m : tensors(batch.tensors)) m->fill(0.0);
    in_batch = 0;
  };

  for (std::size_t idx : order) {
    const GraphSample& original = samples[idx];
    validate_sample(original, params.cues);
    if (original.label >= params.hyper.classes) {
      throw DataError("sample '" + original.id + "': label out of range");
    }
    GraphSample capped = cap_cues(original, params.cues, CapMode::train, &rng);
    auto fr = forward(capped, params, true);
    const LossValue lv = loss(fr.probs, capped.label);
    loss_sum += lv.value;
    if (lv.clamped) ++stats.clamped;
    Gradients g = backward(*fr.trace, capped, params);
    if (in_batch == 0) {
      batch = std::move(g);
    } else {
      add_scaled(batch.tensors, g.tensors, 1.0);
    }
    if (++in_batch == config.batch_size) flush();
  }
  flush();
  stats.mean_loss = loss_sum / static_cast<double>(samples.size());
  return stats;
}

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::size_t> predictions;
};

/// Eval-mode capping, forward and vote for every sample. Work is split
/// across `threads`; tallies are taken in sample order.
inline EvalResult evaluate(std::span<const GraphSample> samples, const ModelParams& params,
                           std::size_t threads = 1) {
  if (samples.empty()) throw DataError("evaluate: empty dataset");
  const std::size_t classes = params.hyper.classes;
  for (const auto& s : samples) {
    validate_sample(s, params.cues);
    if (s.label >= classes) throw DataError("sample '" + s.id + "': label out of range");
  }
  EvalResult r;
  r.total = samples.size();
  r.predictions.assign(samples.size(), 0);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < samples.size(); i += stride) {
      GraphSample capped = cap_cues(samples[i], params.cues, CapMode::eval);
      r.predictions[i] = forward(capped, params).vote.predicted;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ++r.confusion[samples[i].label][r.predictions[i]];
    if (r.predictions[i] == samples[i].label) ++r.correct;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace mcgnn
