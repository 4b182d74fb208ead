#pragma once

// Subcommand bodies shared by the CLI and the tests. Each writes its
// outputs plus manifest.json into the output directory. Nothing written
// depends on wall-clock time or thread scheduling.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sgp/config.hpp"
#include "sgp/error.hpp"
#include "sgp/fewshot.hpp"
#include "sgp/spike_io.hpp"
#include "sgp/trajectory.hpp"
#include "sgp/weight_file.hpp"

namespace sgp {

inline constexpr const char* kOutDirEnv = "SGP_OUT_DIR";
inline constexpr int kManifestVersion = 1;
inline constexpr int kEventsFormatVersion = 1;
inline constexpr int kTrajectoryFormatVersion = 1;

enum ExitCode : int { exit_ok = 0, exit_other = 1, exit_config = 2, exit_data = 3, exit_calibration = 4 };

/// Maps an exception from any command to the process exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CalibrationError*>(&e)) return exit_calibration;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const RuleSyntaxError*>(&e) ||
      dynamic_cast<const EmptyRuleError*>(&e))
    return exit_config;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return exit_data;
  return exit_other;
}

/// Command-line overrides; set fields win over the config file.
struct CommandOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> weights;
  std::optional<std::string> rule;
  std::optional<std::string> events;  // simulate input
  bool dry_run = false;
  unsigned parallel_episodes = 1;
  std::ostream* log = nullptr;        // progress/summary lines; silent when null
};

inline RunConfig apply_overrides(RunConfig c, const CommandOptions& o) {
  if (o.seed) c.episode.seeds = {*o.seed};
  if (o.out_dir) c.paths.out_dir = *o.out_dir;
  if (o.weights) c.paths.weights = *o.weights;
  if (o.rule) c.rule = *o.rule;
  return c;
}

inline std::filesystem::path resolve_out_dir(const RunConfig& c) {
  if (c.paths.out_dir) return *c.paths.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "sgp_out";
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Merged config as recorded in manifests. The output directory is left
/// out so identical runs written to different places match.
inline json manifest_config(RunConfig c) {
  c.paths.out_dir.reset();
  return to_json(c);
}

/// FNV-1a over the canonical dump of the merged config.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : manifest_config(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return hex64(h);
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline std::uint32_t file_crc(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return crc32_of(bytes.data(), bytes.size());
}

inline void say(const CommandOptions& o, const std::string& line) {
  if (o.log) *o.log << line << '\n';
}

inline json calibration_json(const CalibrationRecord& r) {
  return json{{"b", r.b},           {"b_perr", r.b_perr},       {"b_err", r.b_err},
              {"period", r.period}, {"spikes", r.spikes},       {"window", r.window},
              {"average_from", r.average_from}, {"average_to", r.average_to}};
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& c) {
    j_["manifest_version"] = kManifestVersion;
    j_["command"] = std::move(command);
    j_["config_hash"] = config_hash(c);
    j_["seeds"] = c.episode.seeds;
    j_["format_versions"] = {{"weights", kWeightFormatVersion},
                             {"events", kEventsFormatVersion},
                             {"trajectory", kTrajectoryFormatVersion}};
    j_["config"] = manifest_config(c);
  }
  json& operator[](const char* key) { return j_[key]; }

  /// Records an output file and its CRC32.
  void add_file(const std::filesystem::path& dir, const std::string& name) {
    j_["files"][name] = file_crc(dir / name);
  }
  void write(const std::filesystem::path& dir) { write_text(dir / "manifest.json", j_.dump(2) + "\n"); }

 private:
  json j_;
};

inline std::filesystem::path prepare_out_dir(const RunConfig& c) {
  const auto dir = resolve_out_dir(c);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

/// Dataset for one episode: the configured events file, else synthetic data.
struct EpisodeData {
  std::vector<LabeledSample> samples;
  std::vector<std::vector<double>> prototypes;  // synthetic only
};

inline EpisodeData load_episode_data(const RunConfig& c, std::uint64_t seed) {
  EpisodeData d;
  if (c.paths.dataset) {
    if (!std::filesystem::exists(*c.paths.dataset)) throw DataError("dataset '" + *c.paths.dataset + "' not found");
    d.samples = read_events(std::filesystem::path(*c.paths.dataset));
    return d;
  }
  SyntheticTaskConfig tc = c.synthetic;
  tc.duration = c.episode.sample_duration;
  if (tc.seed == 0) tc.seed = seed;
  SyntheticTask task = gen_synthetic_task(tc);
  d.samples = std::move(task.samples);
  d.prototypes = std::move(task.prototypes);
  return d;
}

/// Network with frozen weights in place: from the weights file when given,
/// derived from the pre-training classes for synthetic M+N, else random.
inline Network prepared_network(const RunConfig& c, std::uint64_t seed, const EpisodeData& data) {
  Network net = network_of(c, seed);
  if (c.paths.weights) {
    load_weights(net, *c.paths.weights);
  } else if (c.episode.mode == "mplusn" && !c.episode.pretrain_classes.empty() && !data.prototypes.empty()) {
    derive_frozen_from_classes(net, data.prototypes, c.episode.pretrain_classes, seed, c.episode.prototype_share);
  }
  return net;
}

struct EpisodeOutcome {
  EpisodeReport report;
  std::vector<std::uint8_t> weight_bytes;
};

inline EpisodeOutcome train_one(const RunConfig& c, std::uint64_t seed) {
  const EpisodeData data = load_episode_data(c, seed);
  Network net = prepared_network(c, seed, data);
  const EpisodeConfig ec = episode_config(c, seed);
  EpisodeOutcome out;
  if (c.episode.mode == "mplusn") {
    out.report = run_mplusn(net, c.episode.pretrain_classes, c.episode.novel_classes, ec, data.samples);
  } else {
    out.report = run_episode(net, ec, data.samples);
  }
  out.weight_bytes = encode_weight_file(weight_file_of(net));
  return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads; results keep index order.
template <class Fn>
auto parallel_map(std::size_t n, unsigned workers, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::optional<R>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::size_t next = 0;
  std::mutex m;
  auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(m);
        if (next >= n) return;
        i = next++;
      }
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned k = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (k == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < k; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

inline std::string weights_name(const RunConfig& c, std::uint64_t seed) {
  return c.episode.seeds.size() == 1 ? "weights.sgpw" : "weights_seed" + std::to_string(seed) + ".sgpw";
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct CalibrateResult {
  CalibrationRecord record;
  std::filesystem::path out_dir;
};

inline CalibrateResult cmd_calibrate(const RunConfig& config, const CommandOptions& opt = {}) {
  const RunConfig c = apply_overrides(config, opt);
  validate(c);
  CalibrateResult res;
  if (opt.dry_run) return res;
  ReadoutParams rp = readout_params(c);
  rp.b_err = c.episode.b_err ? *c.episode.b_err : solve_baseline_bias(rp, c.episode.baseline_period);
  res.record = calibrate_bias(rp, c.episode.calibration_window);
  res.out_dir = detail::prepare_out_dir(c);

  std::ostringstream rep;
  rep << "b = " << format_double(res.record.b) << '\n'
      << "b_perr = " << format_double(res.record.b_perr) << '\n'
      << "b_err = " << format_double(res.record.b_err) << '\n'
      << "period = " << res.record.period << '\n'
      << "spikes = " << res.record.spikes << '\n'
      << "window = " << res.record.window << '\n'
      << "average_steps = [" << res.record.average_from << ", " << res.record.average_to << ")\n";
  detail::write_text(res.out_dir / "calibration.txt", rep.str());
  detail::Manifest m("calibrate", c);
  m["calibration"] = detail::calibration_json(res.record);
  m.add_file(res.out_dir, "calibration.txt");
  m.write(res.out_dir);
  detail::say(opt, "calibration b=" + format_double(res.record.b) + " b_err=" + format_double(res.record.b_err) +
                       " period=" + std::to_string(res.record.period));
  return res;
}

struct TrainResult {
  std::vector<EpisodeReport> reports;  // seed order
  std::filesystem::path out_dir;
  double mean_test_accuracy = 0.0;
  double mean_train_accuracy = 0.0;
};

inline TrainResult cmd_train(const RunConfig& config, const CommandOptions& opt = {}) {
  const RunConfig c = apply_overrides(config, opt);
  validate(c);
  if (c.paths.dataset && !std::filesystem::exists(*c.paths.dataset))
    throw DataError("dataset '" + *c.paths.dataset + "' not found");
  if (c.paths.weights && !std::filesystem::exists(*c.paths.weights))
    throw DataError("weights '" + *c.paths.weights + "' not found");
  TrainResult res;
  if (opt.dry_run) return res;
  res.out_dir = detail::prepare_out_dir(c);

  const auto& seeds = c.episode.seeds;
  auto outcomes = detail::parallel_map(seeds.size(), opt.parallel_episodes,
                                       [&](std::size_t i) { return detail::train_one(c, seeds[i]); });

  std::ostringstream report, metrics;
  metrics << "seed\tn_way\tk_shot\tm\ttrain_accuracy\ttest_accuracy\ttest_zero_fraction\tb\tb_err\n";
  detail::Manifest m("train", c);
  json episodes = json::array();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const EpisodeReport& r = outcomes[i].report;
    const std::string wname = detail::weights_name(c, seeds[i]);
    write_bytes(res.out_dir / wname, outcomes[i].weight_bytes);
    report << "[episode " << i << "]\n" << format_report(r) << '\n';
    metrics << r.seed << '\t' << r.n_way << '\t' << r.k_shot << '\t' << r.m_pretrained << '\t'
            << format_double(r.train_accuracy) << '\t' << format_double(r.test_accuracy) << '\t'
            << format_double(r.test.zero_fraction()) << '\t' << format_double(r.calibration.b) << '\t'
            << format_double(r.calibration.b_err) << '\n';
    episodes.push_back({{"seed", r.seed},
                        {"weights", wname},
                        {"calibration", detail::calibration_json(r.calibration)},
                        {"rule", r.rule},
                        {"train_accuracy", r.train_accuracy},
                        {"test_accuracy", r.test_accuracy},
                        {"warnings", r.warnings}});
    res.mean_test_accuracy += r.test_accuracy / static_cast<double>(seeds.size());
    res.mean_train_accuracy += r.train_accuracy / static_cast<double>(seeds.size());
    for (const std::string& w : r.warnings) detail::say(opt, "warning: " + w);
    detail::say(opt, summary_line(r));
    res.reports.push_back(r);
  }
  report << "mean_train_accuracy = " << format_double(res.mean_train_accuracy) << '\n'
         << "mean_test_accuracy = " << format_double(res.mean_test_accuracy) << '\n';
  detail::write_text(res.out_dir / "report.txt", report.str());
  detail::write_text(res.out_dir / "metrics.tsv", metrics.str());
  m["episodes"] = episodes;
  m.add_file(res.out_dir, "report.txt");
  m.add_file(res.out_dir, "metrics.tsv");
  for (std::uint64_t s : seeds) m.add_file(res.out_dir, detail::weights_name(c, s));
  m.write(res.out_dir);
  return res;
}

struct EvalCommandResult {
  EvalResult eval;
  std::filesystem::path out_dir;
};

/// Plasticity-off evaluation of saved weights on the configured split of
/// the first seed's episode.
inline EvalCommandResult cmd_eval(const RunConfig& config, const CommandOptions& opt = {}) {
  const RunConfig c = apply_overrides(config, opt);
  validate(c);
  if (!c.paths.weights) throw ConfigError("eval needs a weights file (--weights or paths.weights)");
  if (!std::filesystem::exists(*c.paths.weights)) throw DataError("weights '" + *c.paths.weights + "' not found");
  EvalCommandResult res;
  if (opt.dry_run) return res;
  const std::uint64_t seed = c.episode.seeds.front();
  const detail::EpisodeData data = detail::load_episode_data(c, seed);
  Network net = network_of(c, seed);
  load_weights(net, *c.paths.weights);
  EpisodeConfig ec = episode_config(c, seed);
  const std::vector<LabeledSample> samples =
      c.episode.mode == "mplusn" ? select_classes(data.samples, c.episode.novel_classes) : data.samples;
  const CalibrationRecord cal = calibrate_network(net, ec);
  const ShotSplit split = split_shots(samples, ec);
  const auto& chosen = c.episode.eval_split == "train" ? split.train : split.test;
  if (chosen.empty()) throw DataError("eval split '" + c.episode.eval_split + "' is empty");
  res.eval = evaluate(net, chosen, ec.n_way);
  res.out_dir = detail::prepare_out_dir(c);

  std::ostringstream rep;
  rep << "split = " << c.episode.eval_split << '\n'
      << "samples = " << res.eval.total << '\n'
      << "accuracy = " << format_double(res.eval.accuracy()) << '\n'
      << "zero_count_fraction = " << format_double(res.eval.zero_fraction()) << '\n'
      << "\n[confusion]\n";
  write_confusion(rep, res.eval);
  detail::write_text(res.out_dir / "eval.txt", rep.str());
  detail::Manifest m("eval", c);
  m["calibration"] = detail::calibration_json(cal);
  m["weights_crc32"] = detail::file_crc(*c.paths.weights);
  m.add_file(res.out_dir, "eval.txt");
  m.write(res.out_dir);
  detail::say(opt, "eval split=" + c.episode.eval_split + " accuracy=" + format_double(res.eval.accuracy()));
  return res;
}

struct SimulateResult {
  std::vector<LabeledSample> raster;  // proximal output spikes, one block per input sample
  TrajectoryRecord trajectory;
  std::filesystem::path out_dir;
};

/// Forward-only run (no targets, no plasticity) over every sample of an
/// events file. Writes raster.events and trajectory.txt.
inline SimulateResult cmd_simulate(const RunConfig& config, const CommandOptions& opt = {}) {
  const RunConfig c = apply_overrides(config, opt);
  validate(c);
  if (!opt.events) throw ConfigError("simulate needs an events file (--events)");
  if (!std::filesystem::exists(*opt.events)) throw DataError("events file '" + *opt.events + "' not found");
  SimulateResult res;
  if (opt.dry_run) return res;
  const std::vector<LabeledSample> inputs = read_events(std::filesystem::path(*opt.events));
  const std::uint64_t seed = c.episode.seeds.front();
  Network net = network_of(c, seed);
  if (c.paths.weights) load_weights(net, *c.paths.weights);
  const CalibrationRecord cal = calibrate_network(net, episode_config(c, seed));

  const std::size_t n_out = net.plastic.size();
  TrajectoryRecord& tr = res.trajectory;
  tr.metadata = {{"seed", std::to_string(seed)}, {"config_hash", config_hash(c)},
                 {"b_err", format_double(cal.b_err)}, {"samples", std::to_string(inputs.size())}};
  tr.columns = {"sample", "t"};
  for (std::size_t l = 0; l < net.frozen_count(); ++l) tr.columns.push_back("layer" + std::to_string(l) + ".spikes");
  for (std::size_t i = 0; i < n_out; ++i) {
    const std::string p = "out" + std::to_string(i) + ".";
    for (const char* v : {"v_err", "p_err", "y1", "err_spike", "v_out", "spike"}) tr.columns.push_back(p + v);
  }
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const LabeledSample& in = inputs[s];
    require_shape(in.shape.size() == net.topology.input.size(), "events shape does not match network input");
    net.reset_state();
    SpikePlayer player(in);
    LabeledSample raster{.shape = Shape3{1, 1, n_out}, .label = in.label, .duration = in.duration};
    StepRecord rec;
    for (std::uint64_t t = 0; t < in.duration; ++t) {
      const SpikeVector out = forward_step(net, player.frame(t), {}, &rec);
      std::vector<double> row{static_cast<double>(s), static_cast<double>(t)};
      for (std::size_t l = 0; l < net.frozen_count(); ++l) {
        std::size_t count = 0;
        for (auto b : rec.layer_spikes[l]) count += b;
        row.push_back(static_cast<double>(count));
      }
      for (std::size_t i = 0; i < n_out; ++i) {
        const ErrorCompartment& d = net.plastic.distal[i];
        const OutputCompartment& o = net.plastic.proximal[i];
        row.insert(row.end(), {d.v_err, d.p_err, d.y1, static_cast<double>(rec.error_spikes[i]), o.v_out,
                               static_cast<double>(out[i])});
        if (out[i]) raster.events.push_back({t, i});
      }
      tr.add_row(std::move(row));
    }
    res.raster.push_back(std::move(raster));
  }
  res.out_dir = detail::prepare_out_dir(c);
  write_events(res.out_dir / "raster.events", res.raster);
  {
    std::ostringstream ss;
    write_trajectory(ss, tr);
    detail::write_text(res.out_dir / "trajectory.txt", ss.str());
  }
  detail::Manifest m("simulate", c);
  m["calibration"] = detail::calibration_json(cal);
  m["events_crc32"] = detail::file_crc(*opt.events);
  m.add_file(res.out_dir, "raster.events");
  m.add_file(res.out_dir, "trajectory.txt");
  m.write(res.out_dir);
  std::size_t spikes = 0;
  for (const auto& r : res.raster) spikes += r.events.size();
  detail::say(opt, "simulate samples=" + std::to_string(inputs.size()) + " output_spikes=" + std::to_string(spikes));
  return res;
}

struct GenDataResult {
  SyntheticTask task;
  std::filesystem::path out_dir;
};

/// Writes the synthetic task as dataset.events plus prototypes.tsv.
inline GenDataResult cmd_gen_data(const RunConfig& config, const CommandOptions& opt = {}) {
  const RunConfig c = apply_overrides(config, opt);
  validate(c);
  SyntheticTaskConfig tc = c.synthetic;
  tc.duration = c.episode.sample_duration;
  if (opt.seed) tc.seed = *opt.seed;
  if (tc.seed == 0) tc.seed = c.episode.seeds.front();
  GenDataResult res;
  if (opt.dry_run) return res;
  res.task = gen_synthetic_task(tc);
  res.out_dir = detail::prepare_out_dir(c);
  write_events(res.out_dir / "dataset.events", res.task.samples);
  std::ostringstream protos;
  for (std::size_t k = 0; k < res.task.prototypes.size(); ++k) {
    protos << k;
    for (double v : res.task.prototypes[k]) protos << '\t' << format_double(v);
    protos << '\n';
  }
  detail::write_text(res.out_dir / "prototypes.tsv", protos.str());
  detail::Manifest m("gen-data", c);
  m["synthetic_seed"] = tc.seed;
  m.add_file(res.out_dir, "dataset.events");
  m.add_file(res.out_dir, "prototypes.tsv");
  m.write(res.out_dir);
  detail::say(opt, "gen-data samples=" + std::to_string(res.task.samples.size()) + " classes=" +
                       std::to_string(tc.n_classes));
  return res;
}

}  // namespace sgp
