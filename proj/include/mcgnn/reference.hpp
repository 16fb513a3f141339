#pragma once

// Literal scalar evaluation of the network's loss in a caller-chosen
// floating type. Shares no kernels with forward(): messages are summed over
// every ordered node pair and each gate is written out element by element.
// The gradient checker runs it in long double so that central differences
// are not swamped by rounding in the loss.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "mcgnn/model.hpp"

namespace mcgnn {

/// Shift of one parameter entry, applied in the evaluation type.
template <class Real>
struct Perturbation {
  std::size_t tensor = 0;  // index into tensors()
  std::size_t entry = 0;
  Real delta = 0;
};

template <class Real>
Real reference_loss(const ModelParams& params, const GraphSample& sample,
                    std::optional<Perturbation<Real>> shift = std::nullopt) {
  validate_sample(sample, params.cues);
  using std::exp;
  using std::log;
  using std::tanh;

  std::vector<std::vector<Real>> w;
  for (const Matrix* m : tensors(params.tensors)) {
    w.emplace_back(m->values().begin(), m->values().end());
  }
  if (shift) w[shift->tensor][shift->entry] += shift->delta;

  const std::size_t T = params.cue_count();
  const std::size_t H = params.hyper.hidden;
  const std::size_t C = params.hyper.classes;
  // Same layout as tensors(): proj w/b pairs, edges, six GRU, readout w/b.
  auto proj_w = [&](std::size_t q) -> const std::vector<Real>& { return w[2 * q]; };
  auto proj_b = [&](std::size_t q) -> const std::vector<Real>& { return w[2 * q + 1]; };
  auto edge = [&](std::size_t q) -> const std::vector<Real>& { return w[2 * T + q]; };
  const std::size_t g0 = 3 * T;
  const auto& Wz = w[g0];
  const auto& Uz = w[g0 + 1];
  const auto& Wr = w[g0 + 2];
  const auto& Ur = w[g0 + 3];
  const auto& Wh = w[g0 + 4];
  const auto& Uh = w[g0 + 5];
  const auto& Wo = w[g0 + 6];
  const auto& bo = w[g0 + 7];

  std::vector<std::size_t> cue_of;
  std::vector<std::vector<Real>> h;
  for (std::size_t q = 0; q < T; ++q) {
    const std::size_t L = params.cues[q].feature_dim;
    for (const auto& x : sample.features[q]) {
      std::vector<Real> hn(H);
      for (std::size_t i = 0; i < H; ++i) {
        Real a = proj_b(q)[i];
        for (std::size_t j = 0; j < L; ++j) a += proj_w(q)[i * L + j] * Real(x[j]);
        hn[i] = a > 0 ? a : Real(0);
      }
      h.push_back(std::move(hn));
      cue_of.push_back(q);
    }
  }
  const std::size_t N = h.size();
  auto sig = [](Real v) { return Real(1) / (Real(1) + exp(-v)); };

  for (std::size_t k = 0; k < params.hyper.steps; ++k) {
    std::vector<std::vector<Real>> m(N, std::vector<Real>(H, Real(0)));
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t u = 0; u < N; ++u) {
        if (u == n) continue;
        const auto& E = edge(cue_of[u]);
        for (std::size_t i = 0; i < H; ++i) {
          for (std::size_t j = 0; j < H; ++j) m[n][i] += E[i * H + j] * h[u][j];
        }
      }
    }
    std::vector<std::vector<Real>> next(N, std::vector<Real>(H));
    for (std::size_t n = 0; n < N; ++n) {
      std::vector<Real> z(H), r(H);
      for (std::size_t i = 0; i < H; ++i) {
        Real az = 0, ar = 0;
        for (std::size_t j = 0; j < H; ++j) {
          az += Wz[i * H + j] * m[n][j] + Uz[i * H + j] * h[n][j];
          ar += Wr[i * H + j] * m[n][j] + Ur[i * H + j] * h[n][j];
        }
        z[i] = sig(az);
        r[i] = sig(ar);
      }
      for (std::size_t i = 0; i < H; ++i) {
        Real ac = 0;
        for (std::size_t j = 0; j < H; ++j) {
          ac += Wh[i * H + j] * m[n][j] + Uh[i * H + j] * (r[j] * h[n][j]);
        }
        next[n][i] = (Real(1) - z[i]) * h[n][i] + z[i] * tanh(ac);
      }
    }
    h = std::move(next);
  }

  Real total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<Real> o(C);
    Real mx = 0;
    for (std::size_t c = 0; c < C; ++c) {
      o[c] = bo[c];
      for (std::size_t j = 0; j < H; ++j) o[c] += Wo[c * H + j] * h[n][j];
      if (c == 0 || o[c] > mx) mx = o[c];
    }
    Real denom = 0;
    for (std::size_t c = 0; c < C; ++c) denom += exp(o[c] - mx);
    // log p[label] = o[label] - mx - log(sum exp(o - mx))
    total += o[sample.label] - mx - log(denom);
  }
  return -total / Real(N);
}

}  // namespace mcgnn
