#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "sgp/error.hpp"
#include "sgp/neuron.hpp"

namespace sgp {

struct TraceConfig {
  double tau = 20.0;
  double increment = 1.0;
  std::optional<double> saturation;
  std::optional<double> quant_step;  // opt-in trace precision, e.g. saturation/127

  double decay() const { return std::exp(-1.0 / tau); }

  void validate() const {
    if (!(tau >= 1.0)) throw ConfigError("trace tau must be >= 1");
    if (!(increment > 0.0)) throw ConfigError("trace increment must be > 0");
    if (saturation && !(*saturation > 0.0)) throw ConfigError("trace saturation must be > 0");
    if (quant_step && !(*quant_step > 0.0)) throw ConfigError("trace quant_step must be > 0");
  }
};

inline double update_trace(double t, bool spiked, const TraceConfig& cfg) {
  double next = cfg.decay() * t + (spiked ? cfg.increment : 0.0);
  if (cfg.quant_step) next = std::nearbyint(next / *cfg.quant_step) * *cfg.quant_step;
  if (cfg.saturation) next = std::min(next, *cfg.saturation);
  return next;
}

/// Trace values visible to the learning rule for one synapse.
/// x0/y0 are this step's pre/post spike indicators.
struct TraceView {
  double x0 = 0.0, x1 = 0.0, x2 = 0.0;
  double y0 = 0.0, y1 = 0.0, y2 = 0.0;
};

/// Two first-order trace configs whose difference (x2 - x1) reproduces the
/// PSP response P of a neuron with the given tau_u, tau_v to the same
/// presynaptic spike train. The slower kernel is always assigned to x2 so
/// both increments stay positive.
///
/// A spike at step 0 gives P[n] = (aP^(n+1) - aQ^(n+1)) / ((aP - aQ) tau_u tau_v),
/// so each trace takes increment a / (|aP - aQ| tau_u tau_v) with decay a.
/// Requires tau_u != tau_v.
inline std::pair<TraceConfig, TraceConfig> difference_kernel_traces(const NeuronParams& params) {
  const double aq = params.alpha_q();
  const double ap = params.alpha_p();
  if (aq == ap) throw ConfigError("difference-of-traces kernel needs tau_u != tau_v");
  const double norm = std::abs(ap - aq) * params.tau_u * params.tau_v;
  const double fast_tau = std::min(params.tau_u, params.tau_v);
  const double slow_tau = std::max(params.tau_u, params.tau_v);
  const double fast_a = std::min(aq, ap);
  const double slow_a = std::max(aq, ap);
  TraceConfig x1{.tau = fast_tau, .increment = fast_a / norm};
  TraceConfig x2{.tau = slow_tau, .increment = slow_a / norm};
  return {x1, x2};
}

}  // namespace sgp
