#pragma once

// Discrete-time current-based LIF neuron in spike-response form.
//
// Per timestep, in this order:
//   Q[j] <- aQ*Q[j] + S_in[j]/tau_u        (unweighted PSC)
//   u    <- sum_j w[j]*Q[j] + bias
//   P[j] <- aP*P[j] + Q[j]/tau_v            (unweighted PSP, uses the new Q)
//   R    <- aR*R - S_prev*v_th              (reset kernel, previous step's spike)
//   v    <- sum_j w[j]*P[j] + R + bias
//   S    <- v >= v_th

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sgp/error.hpp"

namespace sgp {

using SpikeVector = std::vector<std::uint8_t>;

/// Fixed-point rounding applied to u and v when enabled.
struct StateQuantization {
  bool enabled = false;
  int frac_bits = 6;
  int total_bits = 24;

  double apply(double x) const {
    if (!enabled) return x;
    const double scale = std::ldexp(1.0, frac_bits);
    const double hi = std::ldexp(1.0, total_bits - 1) - 1.0;
    const double lo = -std::ldexp(1.0, total_bits - 1);
    return std::clamp(std::nearbyint(x * scale), lo, hi) / scale;
  }
};

struct NeuronParams {
  double tau_u = 4.0;
  double tau_v = 4.0;
  std::optional<double> tau_r;  // defaults to tau_v
  double v_th = 1.0;
  double bias = 0.0;
  StateQuantization quant;

  double alpha_q() const { return std::exp(-1.0 / tau_u); }
  double alpha_p() const { return std::exp(-1.0 / tau_v); }
  double alpha_r() const { return std::exp(-1.0 / tau_r.value_or(tau_v)); }

  void validate() const {
    if (!(tau_u >= 1.0) || !(tau_v >= 1.0) || !(tau_r.value_or(tau_v) >= 1.0))
      throw ConfigError("neuron time constants must be >= 1");
    if (!(v_th > 0.0)) throw ConfigError("neuron threshold must be > 0");
  }
};

struct NeuronState {
  double u = 0.0;
  double v = 0.0;
  std::vector<double> q;
  std::vector<double> p;
  double r = 0.0;
  bool spiked = false;

  NeuronState() = default;
  explicit NeuronState(std::size_t fan_in) : q(fan_in, 0.0), p(fan_in, 0.0) {}
};

/// Row-major dense matrix of effective weights, rows = post, cols = pre.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

inline std::vector<double> step_psc(std::span<const double> q, std::span<const std::uint8_t> in_spikes,
                                    const NeuronParams& params) {
  require_shape(q.size() == in_spikes.size(), "step_psc: PSC state and input spikes differ in length");
  const double a = params.alpha_q();
  const double gain = 1.0 / params.tau_u;
  std::vector<double> out(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) out[j] = a * q[j] + (in_spikes[j] ? gain : 0.0);
  return out;
}

inline double step_current(std::span<const double> q, std::span<const double> weights, double bias) {
  require_shape(q.size() == weights.size(), "step_current: weights and PSC state differ in length");
  return dot(weights, q) + bias;
}

/// Advances P, R, v and the spike flag. `state.q` must already hold this step's Q.
inline NeuronState step_potential(const NeuronState& state, std::span<const double> weights,
                                  const NeuronParams& params) {
  require_shape(state.q.size() == weights.size() && state.p.size() == weights.size(),
                "step_potential: state and weights differ in length");
  NeuronState next = state;
  const double ap = params.alpha_p();
  const double gain = 1.0 / params.tau_v;
  for (std::size_t j = 0; j < next.p.size(); ++j) next.p[j] = ap * state.p[j] + gain * state.q[j];
  next.r = params.alpha_r() * state.r - (state.spiked ? params.v_th : 0.0);
  next.v = params.quant.apply(dot(weights, next.p) + next.r + params.bias);
  next.spiked = next.v >= params.v_th;
  return next;
}

/// One full timestep of a single neuron.
inline NeuronState step_neuron(const NeuronState& state, std::span<const std::uint8_t> in_spikes,
                               std::span<const double> weights, const NeuronParams& params) {
  NeuronState s = state;
  s.q = step_psc(state.q, in_spikes, params);
  s.u = params.quant.apply(step_current(s.q, weights, params.bias));
  return step_potential(s, weights, params);
}

// ---------------------------------------------------------------------------
// Layer form. Q and P are unweighted, so a layer keeps one filter per input
// and shares it across all post-synaptic neurons.

struct LayerState {
  std::vector<double> q, p;          // per input
  std::vector<double> u, v, r;       // per neuron
  SpikeVector spiked;                // per neuron

  LayerState() = default;
  LayerState(std::size_t fan_in, std::size_t size)
      : q(fan_in, 0.0), p(fan_in, 0.0), u(size, 0.0), v(size, 0.0), r(size, 0.0), spiked(size, 0) {}

  std::size_t fan_in() const { return q.size(); }
  std::size_t size() const { return v.size(); }

  void reset() {
    std::ranges::fill(q, 0.0);
    std::ranges::fill(p, 0.0);
    std::ranges::fill(u, 0.0);
    std::ranges::fill(v, 0.0);
    std::ranges::fill(r, 0.0);
    std::ranges::fill(spiked, std::uint8_t{0});
  }
};

/// Q update followed by the P update (which consumes the new Q).
inline void advance_input_filters(LayerState& s, std::span<const std::uint8_t> in_spikes,
                                  const NeuronParams& params) {
  require_shape(in_spikes.size() == s.fan_in(), "layer input spikes do not match fan-in");
  const double aq = params.alpha_q(), gq = 1.0 / params.tau_u;
  const double ap = params.alpha_p(), gp = 1.0 / params.tau_v;
  for (std::size_t j = 0; j < s.q.size(); ++j) {
    s.q[j] = aq * s.q[j] + (in_spikes[j] ? gq : 0.0);
    s.p[j] = ap * s.p[j] + gp * s.q[j];
  }
}

/// Given the weighted sums of Q (`drive_q`) and P (`drive_p`) for every
/// neuron, update u, R, v and spikes in place.
inline void integrate_and_fire(LayerState& s, std::span<const double> drive_q, std::span<const double> drive_p,
                               const NeuronParams& params) {
  require_shape(drive_q.size() == s.size() && drive_p.size() == s.size(), "drive length mismatch");
  const double ar = params.alpha_r();
  for (std::size_t i = 0; i < s.size(); ++i) {
    s.u[i] = params.quant.apply(drive_q[i] + params.bias);
    s.r[i] = ar * s.r[i] - (s.spiked[i] ? params.v_th : 0.0);
    s.v[i] = params.quant.apply(drive_p[i] + s.r[i] + params.bias);
    s.spiked[i] = s.v[i] >= params.v_th ? 1 : 0;
  }
}

/// Dense layer step, in place. Returns this step's output spikes.
inline const SpikeVector& step_layer(LayerState& s, const DenseMatrix& w, std::span<const std::uint8_t> in_spikes,
                                     const NeuronParams& params) {
  require_shape(w.rows == s.size() && w.cols == s.fan_in(), "weight matrix does not match layer");
  advance_input_filters(s, in_spikes, params);
  std::vector<double> dq(s.size()), dp(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto row = w.row(i);
    double aq = 0.0, ap = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      aq += row[j] * s.q[j];
      ap += row[j] * s.p[j];
    }
    dq[i] = aq;
    dp[i] = ap;
  }
  integrate_and_fire(s, dq, dp, params);
  return s.spiked;
}

/// Value-semantics form of step_layer.
inline std::pair<LayerState, SpikeVector> advance_layer(const LayerState& s, const DenseMatrix& w,
                                                     std::span<const std::uint8_t> in_spikes,
                                                     const NeuronParams& params) {
  LayerState next = s;
  SpikeVector out = step_layer(next, w, in_spikes, params);
  return {std::move(next), std::move(out)};
}

}  // namespace sgp
