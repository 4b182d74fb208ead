#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sgp/error.hpp"
#include "sgp/neuron.hpp"
#include "sgp/random.hpp"
#include "sgp/rule.hpp"

namespace sgp {

inline constexpr int kWeightMin = -128;
inline constexpr int kWeightMax = 127;

/// 8-bit signed weights; effective weight = integer * 2^scale_exp.
/// Stochastic rounding draws come from a counter-based stream so the n-th
/// draw is fixed by (rng_seed, n) regardless of evaluation order.
struct QuantizedWeightStore {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> weights;
  int scale_exp = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t draws = 0;

  QuantizedWeightStore() = default;
  QuantizedWeightStore(std::size_t r, std::size_t c, int exp, std::uint64_t seed)
      : rows(r), cols(c), weights(r * c, 0), scale_exp(exp), rng_seed(seed) {}

  std::int8_t at(std::size_t i, std::size_t j) const {
    if (i >= rows || j >= cols) throw ShapeError("weight index out of range");
    return weights[i * cols + j];
  }
  void set(std::size_t i, std::size_t j, int value) {
    if (i >= rows || j >= cols) throw ShapeError("weight index out of range");
    weights[i * cols + j] = static_cast<std::int8_t>(std::clamp(value, kWeightMin, kWeightMax));
  }
  double effective(std::size_t i, std::size_t j) const { return std::ldexp(static_cast<double>(at(i, j)), scale_exp); }

  DenseMatrix effective_matrix() const {
    DenseMatrix m(rows, cols);
    for (std::size_t k = 0; k < weights.size(); ++k) m.data[k] = std::ldexp(static_cast<double>(weights[k]), scale_exp);
    return m;
  }
};

/// Rounds `candidate` down with probability 1 - frac(candidate), else up,
/// using uniform draw `u` in [0,1). Result is clamped to the int8 range.
inline int stochastic_round(double candidate, double u) {
  if (!std::isfinite(candidate)) return candidate > 0 ? kWeightMax : kWeightMin;
  const double lo = std::floor(candidate);
  const double frac = candidate - lo;
  const double rounded = u < frac ? lo + 1.0 : lo;
  return static_cast<int>(std::clamp(rounded, static_cast<double>(kWeightMin), static_cast<double>(kWeightMax)));
}

/// Adds raw_delta * 2^lr_exp to the integer weight (i, j) with stochastic
/// rounding. Consumes exactly one draw from the store's stream.
inline void apply_update(QuantizedWeightStore& store, std::size_t i, std::size_t j, double raw_delta, int lr_exp) {
  if (i >= store.rows || j >= store.cols) throw ShapeError("apply_update: index out of range");
  std::int8_t& w = store.weights[i * store.cols + j];
  const double candidate = static_cast<double>(w) + std::ldexp(raw_delta, lr_exp);
  const double u = counter_uniform(store.rng_seed, store.draws++);
  w = static_cast<std::int8_t>(stochastic_round(candidate, u));
}

/// Per-endpoint trace values: spike indicator plus two traces.
/// Pre-synaptic banks map to x0/x1/x2, post-synaptic banks to y0/y1/y2.
struct TraceBank {
  SpikeVector spike;
  std::vector<double> t1, t2;

  TraceBank() = default;
  explicit TraceBank(std::size_t n) : spike(n, 0), t1(n, 0.0), t2(n, 0.0) {}
  std::size_t size() const { return t1.size(); }
  void reset() {
    std::ranges::fill(spike, std::uint8_t{0});
    std::ranges::fill(t1, 0.0);
    std::ranges::fill(t2, 0.0);
  }
};

struct LearningSchedule {
  int lr_exp = 0;
  int learn_period = 1;

  void validate() const {
    if (learn_period < 1) throw ConfigError("learn_period must be >= 1");
  }
  bool due(std::uint64_t step) const { return (step + 1) % static_cast<std::uint64_t>(learn_period) == 0; }
};

/// Applies the rule to every synapse in row-major order when `step` falls on
/// a learning boundary. Returns true if an update pass ran.
inline bool learning_step(QuantizedWeightStore& store, const SumOfProductsRule& rule, const TraceBank& pre,
                          const TraceBank& post, const LearningSchedule& schedule, std::uint64_t step) {
  schedule.validate();
  require_shape(pre.size() == store.cols && post.size() == store.rows, "learning_step: trace banks do not match store");
  if (!schedule.due(step)) return false;
  TraceView view;
  for (std::size_t i = 0; i < store.rows; ++i) {
    view.y0 = post.spike[i];
    view.y1 = post.t1[i];
    view.y2 = post.t2[i];
    for (std::size_t j = 0; j < store.cols; ++j) {
      view.x0 = pre.spike[j];
      view.x1 = pre.t1[j];
      view.x2 = pre.t2[j];
      const double delta = evaluate_rule(rule, view, store.effective(i, j));
      apply_update(store, i, j, delta, schedule.lr_exp);
    }
  }
  return true;
}

}  // namespace sgp
