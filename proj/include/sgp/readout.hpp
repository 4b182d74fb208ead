#pragma once

// Two-compartment readout neuron.
//
// The distal (error) compartment sees the plastic-synapse drive minus the
// target drive and fires at a fixed baseline rate when the two balance:
//
//   v_err = sum_j w_j P_j - w_tgt * P_hat + R_err + b_err
//
// so deviations of its rate from baseline encode a signed error. The
// proximal (output) compartment integrates the distal drive u_err and
// receives the target with the opposite sign, cancelling it, so the
// proximal spike count reflects the plastic input only.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "sgp/error.hpp"
#include "sgp/neuron.hpp"
#include "sgp/trace.hpp"

namespace sgp {

struct ReadoutParams {
  NeuronParams neuron{.tau_u = 4.0, .tau_v = 8.0};  // bias is ignored; b_err drives the distal side
  double b_err = 0.0;
  double w_tgt = 0.5;
  double r_tgt = 0.5;
  TraceConfig y1{.tau = 8.0};
  TraceConfig y2{.tau = 16.0};
  // Default: steady level of the b_err drive plus v_th. Resets subtract v_th
  // either way, so the baseline offset acts as a fixed threshold shift.
  std::optional<double> proximal_v_th;
  bool reset_in_u_err = false;

  void validate() const {
    neuron.validate();
    y1.validate();
    y2.validate();
    if (!(w_tgt > 0.0)) throw ConfigError("w_tgt must be > 0");
    if (!(r_tgt >= 0.0 && r_tgt <= 1.0)) throw ConfigError("r_tgt must lie in [0, 1]");
    if (proximal_v_th && !(*proximal_v_th > 0.0)) throw ConfigError("proximal threshold must be > 0");
  }

  /// Steady proximal level reached by constant b_err drive.
  double proximal_baseline() const { return b_err / (1.0 - neuron.alpha_p()); }

  double proximal_threshold() const { return proximal_v_th.value_or(proximal_baseline() + neuron.v_th); }
};

struct ErrorCompartment {
  double v_err = 0.0;
  double r_err = 0.0;
  double q_hat = 0.0, p_hat = 0.0;  // target-spike PSC/PSP
  double p_err = 0.0, q_err = 0.0;  // two-stage post-trace of the error spikes
  double y1 = 0.0, y2 = 0.0;        // first-order post-traces seen by the rule
  double u_err = 0.0;               // drive copied to the proximal compartment
  bool spiked = false;
};

struct OutputCompartment {
  double q_hat = 0.0, p_hat = 0.0;  // proximal copy of the target filters
  double p_tgt = 0.0;               // target term integrated like P_out
  double p_out = 0.0;
  double v_out = 0.0;
  double r_out = 0.0;
  std::uint64_t spike_count = 0;
  bool spiked = false;
};

/// Advances the target PSC/PSP pair with the neuron's own time constants.
inline void step_target_filter(double& q_hat, double& p_hat, bool target_spike, const NeuronParams& n) {
  q_hat = n.alpha_q() * q_hat + (target_spike ? 1.0 / n.tau_u : 0.0);
  p_hat = n.alpha_p() * p_hat + q_hat / n.tau_v;
}

/// One distal timestep; returns the error spike. `weighted_input` is sum_j w_j P_j.
inline bool step_error(ErrorCompartment& c, double weighted_input, bool target_spike, const ReadoutParams& rp) {
  const NeuronParams& n = rp.neuron;
  step_target_filter(c.q_hat, c.p_hat, target_spike, n);
  c.r_err = n.alpha_r() * c.r_err - (c.spiked ? n.v_th : 0.0);
  const double drive = weighted_input - rp.w_tgt * c.p_hat + rp.b_err;
  c.u_err = rp.reset_in_u_err ? drive + c.r_err : drive;
  c.v_err = n.quant.apply(drive + c.r_err);
  // Both stages read the previous step's values.
  const double prev_q = c.q_err;
  c.q_err = n.alpha_q() * c.q_err + (c.spiked ? 1.0 : 0.0);
  c.p_err = n.alpha_p() * c.p_err + prev_q;
  c.spiked = c.v_err >= n.v_th;
  c.y1 = update_trace(c.y1, c.spiked, rp.y1);
  c.y2 = update_trace(c.y2, c.spiked, rp.y2);
  return c.spiked;
}

/// One proximal timestep; returns the output spike.
inline bool step_output(OutputCompartment& o, double u_err, bool target_spike, const ReadoutParams& rp) {
  const NeuronParams& n = rp.neuron;
  const double a = n.alpha_p();
  step_target_filter(o.q_hat, o.p_hat, target_spike, n);
  o.p_out = a * o.p_out + u_err;
  o.p_tgt = a * o.p_tgt + o.p_hat;
  o.r_out = n.alpha_r() * o.r_out - (o.spiked ? n.v_th : 0.0);
  o.v_out = n.quant.apply(o.p_out + o.r_out + rp.w_tgt * o.p_tgt);
  o.spiked = o.v_out >= rp.proximal_threshold();
  if (o.spiked) ++o.spike_count;
  return o.spiked;
}

// ---------------------------------------------------------------------------
// Baseline calibration

struct CalibrationRecord {
  double b = 0.0;        // mean of the y1 trace consumed by the learning rule
  double b_perr = 0.0;   // mean of the two-stage P_err trace
  double b_err = 0.0;
  std::uint64_t period = 0;
  std::uint64_t spikes = 0;
  std::uint64_t window = 0;
  std::uint64_t average_from = 0;  // averaging covers [average_from, average_to)
  std::uint64_t average_to = 0;
};

/// Runs an isolated distal compartment with no input and no targets for
/// `window` steps and averages its traces between the middle spike and the
/// last spike, i.e. over a whole number of steady-state periods.
inline CalibrationRecord calibrate_bias(const ReadoutParams& rp, std::uint64_t window) {
  rp.validate();
  ErrorCompartment c;
  std::vector<std::uint64_t> spike_steps;
  std::vector<double> y1s(window), perrs(window);
  for (std::uint64_t n = 0; n < window; ++n) {
    if (step_error(c, 0.0, false, rp)) spike_steps.push_back(n);
    y1s[n] = c.y1;
    perrs[n] = c.p_err;
  }
  if (spike_steps.empty())
    throw CalibrationError("calibration failure: error compartment never fired (b_err too small)");
  if (spike_steps.size() < 3)
    throw CalibrationError("calibration failure: window shorter than a few baseline periods");

  CalibrationRecord rec;
  rec.b_err = rp.b_err;
  rec.window = window;
  rec.spikes = spike_steps.size();
  rec.period = spike_steps.back() - spike_steps[spike_steps.size() - 2];
  rec.average_from = spike_steps[spike_steps.size() / 2];
  rec.average_to = spike_steps.back();
  if (rec.average_to <= rec.average_from)
    throw CalibrationError("calibration failure: no steady-state interval to average");
  double sum_y = 0.0, sum_p = 0.0;
  for (std::uint64_t n = rec.average_from; n < rec.average_to; ++n) {
    sum_y += y1s[n];
    sum_p += perrs[n];
  }
  const double len = static_cast<double>(rec.average_to - rec.average_from);
  rec.b = sum_y / len;
  rec.b_perr = sum_p / len;
  return rec;
}

/// Steady-state interspike interval of an isolated distal compartment, or 0
/// if it fires fewer than twice in `steps`.
inline std::uint64_t baseline_period(const ReadoutParams& rp, std::uint64_t steps) {
  ErrorCompartment c;
  std::uint64_t last = 0, prev = 0, count = 0;
  for (std::uint64_t n = 0; n < steps; ++n) {
    if (step_error(c, 0.0, false, rp)) {
      prev = last;
      last = n;
      ++count;
    }
  }
  return count >= 2 ? last - prev : 0;
}

/// Solves for the b_err giving the requested baseline interspike interval.
/// The period is non-increasing in b_err, so bisect for the range of b_err
/// yielding exactly `target_period` and return its midpoint.
inline double solve_baseline_bias(ReadoutParams rp, std::uint64_t target_period) {
  if (target_period < 2) throw ConfigError("baseline period must be >= 2 steps");
  const double v_th = rp.neuron.v_th;
  const std::uint64_t horizon = 40 * target_period + 400;
  // Smallest b_err whose period is <= p.
  auto boundary = [&](std::uint64_t p) {
    // Below v_th the compartment never fires; at the upper end it fires every step.
    double lo = v_th, hi = v_th * (2.0 + 1.0 / (1.0 - rp.neuron.alpha_r()));
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      rp.b_err = mid;
      const std::uint64_t t = baseline_period(rp, horizon);
      if (t != 0 && t <= p) hi = mid; else lo = mid;
    }
    return hi;
  };
  const double enter = boundary(target_period);
  const double leave = boundary(target_period - 1);
  rp.b_err = 0.5 * (enter + leave);
  if (baseline_period(rp, horizon) != target_period) {
    throw CalibrationError("calibration failure: baseline period " + std::to_string(target_period) +
                           " is not attainable");
  }
  return rp.b_err;
}

// ---------------------------------------------------------------------------
// Target routing

enum class Phase { train, test };

/// Periodic target spikes for one labelled neuron; empty in test mode.
struct TargetRouting {
  std::optional<std::size_t> neuron;
  std::uint64_t interval = 0;

  bool active() const { return neuron.has_value(); }
  bool spike(std::size_t i, std::uint64_t step) const {
    return neuron && *neuron == i && step % interval == 0;
  }
};

inline TargetRouting wire_targets(std::size_t n_outputs, std::size_t label, Phase phase, double r_tgt) {
  if (label >= n_outputs) throw DataError("label " + std::to_string(label) + " out of range");
  if (phase == Phase::test || r_tgt <= 0.0) return {};
  const auto interval = static_cast<std::uint64_t>(std::llround(1.0 / r_tgt));
  return TargetRouting{.neuron = label, .interval = std::max<std::uint64_t>(interval, 1)};
}

}  // namespace sgp
