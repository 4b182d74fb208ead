#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sgp/network.hpp"
#include "sgp/random.hpp"
#include "sgp/trajectory.hpp"

namespace testing_support {

/// Bernoulli input frames with per-channel rates drawn in [0, max_rate).
inline std::vector<sgp::SpikeVector> random_frames(std::size_t n_in, std::size_t steps, double max_rate,
                                                   std::uint64_t seed) {
  sgp::CounterRng rng{.seed = seed};
  std::vector<double> rate(n_in);
  for (double& r : rate) r = rng.uniform() * max_rate;
  std::vector<sgp::SpikeVector> frames(steps, sgp::SpikeVector(n_in, 0));
  for (auto& f : frames)
    for (std::size_t j = 0; j < n_in; ++j) f[j] = rng.uniform() < rate[j] ? 1 : 0;
  return frames;
}

/// Per-step target neuron (-1 for none) matching sgp::TargetRouting.
inline std::vector<long> target_schedule(const sgp::TargetRouting& t, std::size_t steps) {
  std::vector<long> out(steps, -1);
  if (!t.active()) return out;
  for (std::size_t n = 0; n < steps; ++n)
    if (n % t.interval == 0) out[n] = static_cast<long>(*t.neuron);
  return out;
}

/// Simulator run recorded with the reference oracle's column layout.
inline sgp::TrajectoryRecord simulator_trajectory(sgp::Network& net, const std::vector<sgp::SpikeVector>& frames,
                                                  const sgp::TargetRouting& targets) {
  sgp::TrajectoryRecord tr;
  for (std::size_t l = 0; l < net.frozen_count(); ++l)
    for (std::size_t i = 0; i < net.topology.layers[l].out.size(); ++i)
      tr.columns.push_back("L" + std::to_string(l) + ".s" + std::to_string(i));
  const std::size_t n_out = net.plastic.size();
  for (std::size_t i = 0; i < n_out; ++i) tr.columns.push_back("err" + std::to_string(i));
  for (std::size_t i = 0; i < n_out; ++i) tr.columns.push_back("out" + std::to_string(i));
  for (std::size_t i = 0; i < n_out; ++i) tr.columns.push_back("v_err" + std::to_string(i));
  for (std::size_t i = 0; i < n_out; ++i) tr.columns.push_back("y1_" + std::to_string(i));
  sgp::StepContext ctx;
  ctx.targets = targets;
  sgp::StepRecord rec;
  for (const auto& f : frames) {
    const sgp::SpikeVector out = sgp::forward_step(net, f, ctx, &rec);
    std::vector<double> row;
    for (std::size_t l = 0; l < net.frozen_count(); ++l)
      for (auto s : rec.layer_spikes[l]) row.push_back(s);
    for (auto s : rec.error_spikes) row.push_back(s);
    for (auto s : out) row.push_back(s);
    for (const auto& d : net.plastic.distal) row.push_back(d.v_err);
    for (const auto& d : net.plastic.distal) row.push_back(d.y1);
    tr.add_row(std::move(row));
  }
  return tr;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
