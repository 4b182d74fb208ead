#pragma once

// Run configuration, read from JSON. Every block is optional and falls back
// to the defaults below; unknown keys anywhere are rejected.
//
//   {
//     "topology": {"input": "32", "hidden": ["64"], "outputs": 5},
//     "neuron": {...}, "output_neuron": {...},
//     "readout": {...}, "trace": {...}, "learning": {...}, "init": {...},
//     "rule": "dw = ...",
//     "episode": {...}, "synthetic": {...}, "paths": {...}
//   }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sgp/error.hpp"
#include "sgp/fewshot.hpp"
#include "sgp/network.hpp"
#include "sgp/spike_io.hpp"

namespace sgp {

using json = nlohmann::ordered_json;

struct TopologyConfig {
  std::string input = "32";
  std::vector<std::string> hidden{"64"};
  std::size_t outputs = 5;
};

struct TraceBlock {
  double y1_tau = 8.0;
  double y2_tau = 16.0;
  std::optional<double> saturation;
  std::optional<double> quant_step;
};

struct EpisodeBlock {
  std::string mode = "nway";  // "nway" or "mplusn"
  std::size_t k_shot = 5;
  std::vector<std::uint64_t> seeds{1};
  std::uint64_t sample_duration = 100;
  int epochs = 1;
  double train_pool_fraction = 0.6;
  std::uint64_t baseline_period = 20;
  std::uint64_t calibration_window = 2000;
  std::optional<double> b_err;
  std::vector<long> pretrain_classes;  // M classes (mplusn only)
  std::vector<long> novel_classes;     // N classes (mplusn only)
  double prototype_share = 0.5;        // mplusn on synthetic data: contrast share of the derived hidden layer
  std::string eval_split = "test";     // "train" or "test" for eval
};

struct PathsBlock {
  std::optional<std::string> weights;
  std::optional<std::string> dataset;  // events file; synthetic data when unset
  std::optional<std::string> out_dir;
};

struct RunConfig {
  TopologyConfig topology;
  NeuronParams neuron{.tau_u = 4.0, .tau_v = 8.0, .v_th = 1.0};
  NeuronParams output_neuron{.tau_u = 4.0, .tau_v = 8.0, .v_th = 1.0};
  double w_tgt = 0.5, r_tgt = 0.5;
  std::optional<double> proximal_v_th;
  bool reset_in_u_err = false;
  TraceBlock trace;
  LearningSchedule learning{.lr_exp = -2, .learn_period = 1};
  NetworkInit init;
  std::string rule = kDefaultRuleTemplate;
  EpisodeBlock episode;
  SyntheticTaskConfig synthetic{.seed = 0};  // seed 0: each episode generates its data from its own seed
  PathsBlock paths;

  std::size_t n_way() const {
    return episode.mode == "mplusn" ? episode.novel_classes.size() : topology.outputs;
  }
};

namespace detail {

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items())
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read_opt(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
void read_opt(const json& obj, const char* key, std::optional<T>& out, const std::string& where) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read_opt(obj, key, v, where);
  out = v;
}

inline void read_neuron(const json& j, NeuronParams& n, const std::string& where) {
  reject_unknown(j, where, {"tau_u", "tau_v", "tau_r", "v_th", "bias", "quantize", "frac_bits", "total_bits"});
  read_opt(j, "tau_u", n.tau_u, where);
  read_opt(j, "tau_v", n.tau_v, where);
  read_opt(j, "tau_r", n.tau_r, where);
  read_opt(j, "v_th", n.v_th, where);
  read_opt(j, "bias", n.bias, where);
  read_opt(j, "quantize", n.quant.enabled, where);
  read_opt(j, "frac_bits", n.quant.frac_bits, where);
  read_opt(j, "total_bits", n.quant.total_bits, where);
}

inline json neuron_json(const NeuronParams& n) {
  json j;
  j["tau_u"] = n.tau_u;
  j["tau_v"] = n.tau_v;
  j["tau_r"] = n.tau_r ? json(*n.tau_r) : json(nullptr);
  j["v_th"] = n.v_th;
  j["bias"] = n.bias;
  j["quantize"] = n.quant.enabled;
  j["frac_bits"] = n.quant.frac_bits;
  j["total_bits"] = n.quant.total_bits;
  return j;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  c.neuron.validate();
  c.output_neuron.validate();
  c.learning.validate();
  if (c.episode.mode != "nway" && c.episode.mode != "mplusn")
    throw ConfigError("episode.mode must be 'nway' or 'mplusn'");
  if (c.episode.eval_split != "train" && c.episode.eval_split != "test")
    throw ConfigError("episode.eval_split must be 'train' or 'test'");
  if (c.episode.seeds.empty()) throw ConfigError("episode.seeds must not be empty");
  if (c.episode.mode == "mplusn") {
    if (c.episode.novel_classes.empty()) throw ConfigError("mplusn needs episode.novel_classes");
    if (c.topology.outputs != c.episode.novel_classes.size())
      throw ConfigError("topology.outputs must equal the number of novel classes");
  }
  if (c.output_neuron.tau_u == c.output_neuron.tau_v)
    throw ConfigError("output_neuron tau_u and tau_v must differ for the trace construction");
  ReadoutParams rp;
  rp.w_tgt = c.w_tgt;
  rp.r_tgt = c.r_tgt;
  rp.proximal_v_th = c.proximal_v_th;
  rp.y1.tau = c.trace.y1_tau;
  rp.y2.tau = c.trace.y2_tau;
  rp.validate();
  EpisodeConfig ec;
  ec.n_way = c.n_way();
  ec.k_shot = c.episode.k_shot;
  ec.epochs = c.episode.epochs;
  ec.sample_duration = c.episode.sample_duration;
  ec.train_pool_fraction = c.episode.train_pool_fraction;
  ec.learning = c.learning;
  ec.validate(c.episode.mode == "mplusn" ? 1 : 2);
  parse_rule(instantiate_rule_template(c.rule, 0.5));  // syntax check
  parse_topology(c.topology.input, c.topology.hidden, c.topology.outputs, c.neuron, c.output_neuron);
}

inline RunConfig config_from_json(const json& j) {
  using detail::read_opt;
  RunConfig c;
  detail::reject_unknown(j, "", {"topology", "neuron", "output_neuron", "readout", "trace", "learning", "init", "rule",
                                 "episode", "synthetic", "paths"});
  if (j.contains("topology")) {
    const json& t = j["topology"];
    detail::reject_unknown(t, "topology", {"input", "hidden", "outputs"});
    read_opt(t, "input", c.topology.input, "topology");
    read_opt(t, "hidden", c.topology.hidden, "topology");
    read_opt(t, "outputs", c.topology.outputs, "topology");
  }
  if (j.contains("neuron")) detail::read_neuron(j["neuron"], c.neuron, "neuron");
  if (j.contains("output_neuron")) detail::read_neuron(j["output_neuron"], c.output_neuron, "output_neuron");
  if (j.contains("readout")) {
    const json& r = j["readout"];
    detail::reject_unknown(r, "readout", {"w_tgt", "r_tgt", "proximal_v_th", "reset_in_u_err"});
    read_opt(r, "w_tgt", c.w_tgt, "readout");
    read_opt(r, "r_tgt", c.r_tgt, "readout");
    read_opt(r, "proximal_v_th", c.proximal_v_th, "readout");
    read_opt(r, "reset_in_u_err", c.reset_in_u_err, "readout");
  }
  if (j.contains("trace")) {
    const json& t = j["trace"];
    detail::reject_unknown(t, "trace", {"y1_tau", "y2_tau", "saturation", "quant_step"});
    read_opt(t, "y1_tau", c.trace.y1_tau, "trace");
    read_opt(t, "y2_tau", c.trace.y2_tau, "trace");
    read_opt(t, "saturation", c.trace.saturation, "trace");
    read_opt(t, "quant_step", c.trace.quant_step, "trace");
  }
  if (j.contains("learning")) {
    const json& l = j["learning"];
    detail::reject_unknown(l, "learning", {"lr_exp", "learn_period"});
    read_opt(l, "lr_exp", c.learning.lr_exp, "learning");
    read_opt(l, "learn_period", c.learning.learn_period, "learning");
  }
  if (j.contains("init")) {
    const json& i = j["init"];
    detail::reject_unknown(i, "init", {"frozen_range", "frozen_scale_exp", "balanced_rows", "plastic_scale_exp",
                                       "plastic_random_range"});
    read_opt(i, "frozen_range", c.init.frozen_range, "init");
    read_opt(i, "frozen_scale_exp", c.init.frozen_scale_exp, "init");
    read_opt(i, "balanced_rows", c.init.balanced_rows, "init");
    read_opt(i, "plastic_scale_exp", c.init.plastic_scale_exp, "init");
    read_opt(i, "plastic_random_range", c.init.plastic_random_range, "init");
  }
  read_opt(j, "rule", c.rule, "");
  if (j.contains("episode")) {
    const json& e = j["episode"];
    detail::reject_unknown(e, "episode", {"mode", "k_shot", "seeds", "sample_duration", "epochs", "train_pool_fraction",
                                          "baseline_period", "calibration_window", "b_err", "pretrain_classes",
                                          "novel_classes", "prototype_share", "eval_split"});
    read_opt(e, "mode", c.episode.mode, "episode");
    read_opt(e, "k_shot", c.episode.k_shot, "episode");
    read_opt(e, "seeds", c.episode.seeds, "episode");
    read_opt(e, "sample_duration", c.episode.sample_duration, "episode");
    read_opt(e, "epochs", c.episode.epochs, "episode");
    read_opt(e, "train_pool_fraction", c.episode.train_pool_fraction, "episode");
    read_opt(e, "baseline_period", c.episode.baseline_period, "episode");
    read_opt(e, "calibration_window", c.episode.calibration_window, "episode");
    read_opt(e, "b_err", c.episode.b_err, "episode");
    read_opt(e, "pretrain_classes", c.episode.pretrain_classes, "episode");
    read_opt(e, "novel_classes", c.episode.novel_classes, "episode");
    read_opt(e, "prototype_share", c.episode.prototype_share, "episode");
    read_opt(e, "eval_split", c.episode.eval_split, "episode");
  }
  if (j.contains("synthetic")) {
    const json& s = j["synthetic"];
    detail::reject_unknown(s, "synthetic", {"n_classes", "n_per_class", "dim", "separation", "jitter", "r_max",
                                            "poisson", "seed"});
    read_opt(s, "n_classes", c.synthetic.n_classes, "synthetic");
    read_opt(s, "n_per_class", c.synthetic.n_per_class, "synthetic");
    read_opt(s, "dim", c.synthetic.dim, "synthetic");
    read_opt(s, "separation", c.synthetic.separation, "synthetic");
    read_opt(s, "jitter", c.synthetic.jitter, "synthetic");
    read_opt(s, "r_max", c.synthetic.r_max, "synthetic");
    read_opt(s, "poisson", c.synthetic.poisson, "synthetic");
    read_opt(s, "seed", c.synthetic.seed, "synthetic");
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    detail::reject_unknown(p, "paths", {"weights", "dataset", "out_dir"});
    read_opt(p, "weights", c.paths.weights, "paths");
    read_opt(p, "dataset", c.paths.dataset, "paths");
    read_opt(p, "out_dir", c.paths.out_dir, "paths");
  }
  c.synthetic.duration = c.episode.sample_duration;
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Fully merged view; config_from_json(to_json(c)) reproduces c.
inline json to_json(const RunConfig& c) {
  using detail::opt_json;
  json j;
  j["topology"] = {{"input", c.topology.input}, {"hidden", c.topology.hidden}, {"outputs", c.topology.outputs}};
  j["neuron"] = detail::neuron_json(c.neuron);
  j["output_neuron"] = detail::neuron_json(c.output_neuron);
  j["readout"] = {{"w_tgt", c.w_tgt},
                  {"r_tgt", c.r_tgt},
                  {"proximal_v_th", opt_json(c.proximal_v_th)},
                  {"reset_in_u_err", c.reset_in_u_err}};
  j["trace"] = {{"y1_tau", c.trace.y1_tau},
                {"y2_tau", c.trace.y2_tau},
                {"saturation", opt_json(c.trace.saturation)},
                {"quant_step", opt_json(c.trace.quant_step)}};
  j["learning"] = {{"lr_exp", c.learning.lr_exp}, {"learn_period", c.learning.learn_period}};
  j["init"] = {{"frozen_range", c.init.frozen_range},
               {"frozen_scale_exp", c.init.frozen_scale_exp},
               {"balanced_rows", c.init.balanced_rows},
               {"plastic_scale_exp", c.init.plastic_scale_exp},
               {"plastic_random_range", opt_json(c.init.plastic_random_range)}};
  j["rule"] = c.rule;
  j["episode"] = {{"mode", c.episode.mode},
                  {"k_shot", c.episode.k_shot},
                  {"seeds", c.episode.seeds},
                  {"sample_duration", c.episode.sample_duration},
                  {"epochs", c.episode.epochs},
                  {"train_pool_fraction", c.episode.train_pool_fraction},
                  {"baseline_period", c.episode.baseline_period},
                  {"calibration_window", c.episode.calibration_window},
                  {"b_err", opt_json(c.episode.b_err)},
                  {"pretrain_classes", c.episode.pretrain_classes},
                  {"novel_classes", c.episode.novel_classes},
                  {"prototype_share", c.episode.prototype_share},
                  {"eval_split", c.episode.eval_split}};
  j["synthetic"] = {{"n_classes", c.synthetic.n_classes},
                    {"n_per_class", c.synthetic.n_per_class},
                    {"dim", c.synthetic.dim},
                    {"separation", c.synthetic.separation},
                    {"jitter", c.synthetic.jitter},
                    {"r_max", c.synthetic.r_max},
                    {"poisson", c.synthetic.poisson},
                    {"seed", c.synthetic.seed}};
  j["paths"] = {{"weights", opt_json(c.paths.weights)},
                {"dataset", opt_json(c.paths.dataset)},
                {"out_dir", opt_json(c.paths.out_dir)}};
  return j;
}

// ---------------------------------------------------------------------------
// Derived objects

inline ReadoutParams readout_params(const RunConfig& c) {
  ReadoutParams rp;
  rp.neuron = c.output_neuron;
  rp.w_tgt = c.w_tgt;
  rp.r_tgt = c.r_tgt;
  rp.proximal_v_th = c.proximal_v_th;
  rp.reset_in_u_err = c.reset_in_u_err;
  rp.y1 = TraceConfig{.tau = c.trace.y1_tau, .saturation = c.trace.saturation, .quant_step = c.trace.quant_step};
  rp.y2 = TraceConfig{.tau = c.trace.y2_tau, .saturation = c.trace.saturation, .quant_step = c.trace.quant_step};
  return rp;
}

inline Topology topology_of(const RunConfig& c) {
  return parse_topology(c.topology.input, c.topology.hidden, c.topology.outputs, c.neuron, c.output_neuron);
}

inline Network network_of(const RunConfig& c, std::uint64_t seed) {
  NetworkInit init = c.init;
  init.readout = readout_params(c);
  return build_network(topology_of(c), seed, init);
}

inline EpisodeConfig episode_config(const RunConfig& c, std::uint64_t seed) {
  EpisodeConfig e;
  e.n_way = c.n_way();
  e.k_shot = c.episode.k_shot;
  e.m_pretrained = c.episode.mode == "mplusn" ? c.episode.pretrain_classes.size() : 0;
  e.sample_duration = c.episode.sample_duration;
  e.epochs = c.episode.epochs;
  e.seed = seed;
  e.rule = c.rule;
  e.learning = c.learning;
  e.train_pool_fraction = c.episode.train_pool_fraction;
  e.baseline_period = c.episode.baseline_period;
  e.calibration_window = c.episode.calibration_window;
  e.b_err = c.episode.b_err;
  return e;
}

}  // namespace sgp
