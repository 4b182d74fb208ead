#pragma once

// Text event streams. A file holds one or more samples; each starts with a
// header line and is followed by one "t neuron" line per event:
//
//   shape=32 duration=100 label=3
//   0 5
//   2 5
//
// Blank lines and lines starting with '#' are ignored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sgp/error.hpp"
#include "sgp/network.hpp"
#include "sgp/neuron.hpp"
#include "sgp/random.hpp"

namespace sgp {

struct SpikeEvent {
  std::uint64_t t = 0;
  std::size_t neuron = 0;
  friend bool operator==(const SpikeEvent&, const SpikeEvent&) = default;
};

struct LabeledSample {
  Shape3 shape;
  std::vector<SpikeEvent> events;
  long label = 0;
  std::uint64_t duration = 0;
  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

/// Throws DataError if the sample violates ordering or range invariants.
inline void validate_sample(const LabeledSample& s) {
  std::uint64_t prev = 0;
  for (const SpikeEvent& e : s.events) {
    if (e.t < prev) throw DataError("event times are not non-decreasing");
    if (e.t >= s.duration) throw DataError("event time " + std::to_string(e.t) + " >= duration");
    if (e.neuron >= s.shape.size()) throw DataError("event neuron index " + std::to_string(e.neuron) + " out of range");
    prev = e.t;
  }
}

inline void write_events(std::ostream& out, const std::vector<LabeledSample>& samples) {
  for (const LabeledSample& s : samples) {
    out << "shape=" << to_string(s.shape) << " duration=" << s.duration << " label=" << s.label << '\n';
    for (const SpikeEvent& e : s.events) out << e.t << ' ' << e.neuron << '\n';
  }
}

inline std::vector<LabeledSample> read_events(std::istream& in) {
  std::vector<LabeledSample> samples;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) { throw DataError("line " + std::to_string(line_no) + ": " + msg); };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    if (line.find('=') != std::string::npos) {
      LabeledSample s;
      bool has_shape = false, has_duration = false, has_label = false;
      std::istringstream fields(line);
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail("malformed header field '" + kv + "'");
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        try {
          if (key == "shape") {
            s.shape = parse_shape(value);
            has_shape = true;
          } else if (key == "duration") {
            std::size_t used = 0;
            s.duration = std::stoull(value, &used);
            if (used != value.size()) fail("malformed duration");
            has_duration = true;
          } else if (key == "label") {
            std::size_t used = 0;
            s.label = std::stol(value, &used);
            if (used != value.size()) fail("malformed label");
            has_label = true;
          } else {
            fail("unknown header key '" + key + "'");
          }
        } catch (const std::logic_error&) {
          fail("malformed value for '" + key + "'");
        } catch (const ConfigError& e) {
          fail(e.what());
        }
      }
      if (!has_shape || !has_duration || !has_label) fail("header needs shape=, duration= and label=");
      samples.push_back(std::move(s));
      continue;
    }
    if (samples.empty()) fail("event before any header");
    LabeledSample& s = samples.back();
    std::istringstream fields(line);
    long long t = -1, neuron = -1;
    std::string extra;
    if (!(fields >> t >> neuron) || (fields >> extra) || t < 0 || neuron < 0) fail("expected 't neuron'");
    const SpikeEvent e{static_cast<std::uint64_t>(t), static_cast<std::size_t>(neuron)};
    if (!s.events.empty() && e.t < s.events.back().t) fail("non-monotone event time");
    if (e.t >= s.duration) fail("event time " + std::to_string(e.t) + " >= duration " + std::to_string(s.duration));
    if (e.neuron >= s.shape.size()) fail("neuron index " + std::to_string(e.neuron) + " out of range");
    s.events.push_back(e);
  }
  return samples;
}

inline void write_events(const std::filesystem::path& path, const std::vector<LabeledSample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_events(out, samples);
}

inline std::vector<LabeledSample> read_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file '" + path.string() + "'");
  try {
    return read_events(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Replays a sample step by step as dense spike vectors.
class SpikePlayer {
 public:
  explicit SpikePlayer(const LabeledSample& s) : sample_(&s), frame_(s.shape.size(), 0) {}

  const SpikeVector& frame(std::uint64_t t) {
    std::ranges::fill(frame_, std::uint8_t{0});
    const auto& ev = sample_->events;
    while (next_ < ev.size() && ev[next_].t < t) ++next_;
    while (next_ < ev.size() && ev[next_].t == t) frame_[ev[next_++].neuron] = 1;
    return frame_;
  }

 private:
  const LabeledSample* sample_;
  SpikeVector frame_;
  std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Rate encoding

/// Regular-interval encoding: feature f spikes every round(1/(f*r_max))
/// steps starting at t = 0; f = 0 never spikes.
inline std::vector<SpikeEvent> rate_encode(const std::vector<double>& features, std::uint64_t duration,
                                           double r_max = 0.5) {
  if (!(r_max > 0.0 && r_max <= 1.0)) throw ConfigError("r_max must lie in (0, 1]");
  std::vector<std::uint64_t> interval(features.size(), 0);
  for (std::size_t j = 0; j < features.size(); ++j) {
    const double f = features[j];
    if (!(f >= 0.0 && f <= 1.0)) throw DataError("feature " + std::to_string(j) + " outside [0, 1]");
    if (f > 0.0) interval[j] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(1.0 / (f * r_max))));
  }
  std::vector<SpikeEvent> events;
  for (std::uint64_t t = 0; t < duration; ++t)
    for (std::size_t j = 0; j < features.size(); ++j)
      if (interval[j] != 0 && t % interval[j] == 0) events.push_back({t, j});
  return events;
}

/// Bernoulli encoding with per-step probability f*r_max from a seeded stream.
inline std::vector<SpikeEvent> rate_encode_poisson(const std::vector<double>& features, std::uint64_t duration,
                                                   double r_max, std::uint64_t seed) {
  if (!(r_max > 0.0 && r_max <= 1.0)) throw ConfigError("r_max must lie in (0, 1]");
  for (double f : features)
    if (!(f >= 0.0 && f <= 1.0)) throw DataError("feature outside [0, 1]");
  std::vector<SpikeEvent> events;
  for (std::uint64_t t = 0; t < duration; ++t)
    for (std::size_t j = 0; j < features.size(); ++j)
      if (counter_uniform(seed, t * features.size() + j) < features[j] * r_max) events.push_back({t, j});
  return events;
}

// ---------------------------------------------------------------------------
// Synthetic few-shot task

struct SyntheticTaskConfig {
  std::size_t n_classes = 5;
  std::size_t n_per_class = 15;
  std::size_t dim = 32;
  double separation = 1.5;
  double jitter = 0.1;
  std::uint64_t duration = 100;
  double r_max = 0.5;
  bool poisson = false;
  std::uint64_t seed = 1;
  std::size_t max_retries = 10000;
};

struct SyntheticTask {
  std::vector<std::vector<double>> prototypes;
  std::vector<std::vector<double>> features;  // one per sample
  std::vector<LabeledSample> samples;         // class-major order
};

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline SyntheticTask gen_synthetic_task(const SyntheticTaskConfig& cfg) {
  if (!(cfg.separation > 0.0)) throw ConfigError("separation must be > 0");
  if (cfg.dim == 0 || cfg.n_classes == 0) throw ConfigError("dim and n_classes must be positive");
  if (!(cfg.jitter >= 0.0)) throw ConfigError("jitter must be >= 0");
  CounterRng rng{.seed = derive_seed(cfg.seed, 0x5e7)};
  SyntheticTask task;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    std::size_t tries = 0;
    for (;;) {
      std::vector<double> proto(cfg.dim);
      for (double& x : proto) x = rng.uniform();
      const bool ok = std::ranges::all_of(task.prototypes, [&](const auto& p) { return euclidean(p, proto) >= cfg.separation; });
      if (ok) {
        task.prototypes.push_back(std::move(proto));
        break;
      }
      if (++tries >= cfg.max_retries)
        throw ConfigError("cannot place " + std::to_string(cfg.n_classes) + " prototypes with separation " +
                          std::to_string(cfg.separation));
    }
  }
  const Shape3 shape{1, 1, cfg.dim};
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t k = 0; k < cfg.n_per_class; ++k) {
      std::vector<double> f = task.prototypes[c];
      for (double& x : f) x = std::clamp(x + rng.uniform(-cfg.jitter, cfg.jitter), 0.0, 1.0);
      LabeledSample s{.shape = shape, .label = static_cast<long>(c), .duration = cfg.duration};
      s.events = cfg.poisson ? rate_encode_poisson(f, cfg.duration, cfg.r_max, derive_seed(cfg.seed, 7919 * c + k + 1))
                             : rate_encode(f, cfg.duration, cfg.r_max);
      task.features.push_back(std::move(f));
      task.samples.push_back(std::move(s));
    }
  }
  return task;
}

/// Keeps samples whose label is in `classes`, relabelled to their position in `classes`.
inline std::vector<LabeledSample> select_classes(const std::vector<LabeledSample>& samples,
                                                 const std::vector<long>& classes) {
  std::vector<LabeledSample> out;
  for (const LabeledSample& s : samples) {
    const auto it = std::ranges::find(classes, s.label);
    if (it == classes.end()) continue;
    LabeledSample copy = s;
    copy.label = static_cast<long>(it - classes.begin());
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace sgp
