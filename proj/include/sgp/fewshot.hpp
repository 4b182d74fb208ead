#pragma once

// N-way K-shot episodes over a network with a plastic readout layer.
//
// An episode calibrates the error baseline, presents the K shots of each
// class once with targets and plasticity on, then classifies held-out
// samples by proximal spike count with plasticity off. Neuron states and
// traces are zeroed before every sample; weights carry over.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sgp/error.hpp"
#include "sgp/network.hpp"
#include "sgp/random.hpp"
#include "sgp/readout.hpp"
#include "sgp/rule.hpp"
#include "sgp/spike_io.hpp"
#include "sgp/weight_file.hpp"

namespace sgp {

/// Default rule: dw = (x2 - x1) * (b - y1), i.e. presynaptic PSP times the
/// negated error, written as a sum of products once b is known.
inline constexpr const char* kDefaultRuleTemplate = "dw = {b}*x2 - {b}*x1 - y1*x2 + y1*x1";

struct EpisodeConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
  std::size_t m_pretrained = 0;
  std::uint64_t sample_duration = 100;
  int epochs = 1;
  std::uint64_t seed = 1;
  std::string rule = kDefaultRuleTemplate;
  LearningSchedule learning{.lr_exp = -2, .learn_period = 1};
  double train_pool_fraction = 0.6;  // K shots come from the first part of each class, tests from the rest
  std::uint64_t baseline_period = 20;
  std::uint64_t calibration_window = 2000;
  std::optional<double> b_err;        // solved from baseline_period when unset

  void validate(std::size_t min_way = 2) const {
    if (n_way < min_way) throw ConfigError("n_way must be >= " + std::to_string(min_way));
    if (k_shot < 1) throw ConfigError("k_shot must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (sample_duration < 1) throw ConfigError("sample_duration must be >= 1");
    if (!(train_pool_fraction > 0.0 && train_pool_fraction < 1.0))
      throw ConfigError("train_pool_fraction must lie in (0, 1)");
    learning.validate();
  }
};

struct EvalResult {
  std::size_t n_way = 0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted]
  std::vector<std::vector<std::uint64_t>> counts;     // proximal spike counts per sample
  std::vector<long> labels;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t all_zero = 0;

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  double zero_fraction() const { return total == 0 ? 0.0 : static_cast<double>(all_zero) / static_cast<double>(total); }
};

struct EpisodeReport {
  std::uint64_t seed = 0;
  std::size_t n_way = 0, k_shot = 0, m_pretrained = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  EvalResult train, test;
  CalibrationRecord calibration;
  std::string rule;             // canonical text of the rule that ran
  std::uint32_t weight_crc = 0; // CRC32 of the plastic weight payload after training
  std::vector<std::string> warnings;
};

struct ShotSplit {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

/// Per class (labels 0..n_way-1, dataset order): K shots are drawn with the
/// seed from the first train_pool_fraction of the class, the test set is
/// everything after that pool. The train set is returned in a seeded
/// presentation order.
inline ShotSplit split_shots(const std::vector<LabeledSample>& dataset, const EpisodeConfig& cfg) {
  std::vector<std::vector<std::size_t>> by_class(cfg.n_way);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const long label = dataset[i].label;
    if (label >= 0 && static_cast<std::size_t>(label) < cfg.n_way) by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  CounterRng rng{.seed = derive_seed(cfg.seed, 0x5b17)};
  ShotSplit split;
  for (std::size_t c = 0; c < cfg.n_way; ++c) {
    const auto& idx = by_class[c];
    if (idx.size() < cfg.k_shot + 1)
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) + " samples, need >= " +
                      std::to_string(cfg.k_shot + 1));
    auto pool = static_cast<std::size_t>(std::llround(cfg.train_pool_fraction * static_cast<double>(idx.size())));
    pool = std::clamp(pool, cfg.k_shot, idx.size() - 1);
    std::vector<std::size_t> candidates(idx.begin(), idx.begin() + static_cast<long>(pool));
    for (std::size_t k = 0; k < cfg.k_shot; ++k) {  // partial Fisher-Yates
      const std::size_t pick = k + rng.below(candidates.size() - k);
      std::swap(candidates[k], candidates[pick]);
      split.train.push_back(dataset[candidates[k]]);
    }
    for (std::size_t k = pool; k < idx.size(); ++k) split.test.push_back(dataset[idx[k]]);
  }
  for (std::size_t k = split.train.size(); k > 1; --k) std::swap(split.train[k - 1], split.train[rng.below(k)]);
  return split;
}

/// Argmax with ties resolved to the lowest index.
inline std::size_t classify(const std::vector<std::uint64_t>& counts) {
  if (counts.empty()) throw DataError("classify: empty spike-count vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] > counts[best]) best = i;
  return best;
}

/// Runs one sample from a zeroed state and returns per-output spike counts.
/// With `label` set and a rule given, targets are wired and plasticity is on.
inline std::vector<std::uint64_t> present_sample(Network& net, const LabeledSample& sample,
                                                 const SumOfProductsRule* rule, const LearningSchedule& schedule,
                                                 std::optional<std::size_t> label = std::nullopt) {
  require_shape(sample.shape.size() == net.topology.input.size(), "sample shape does not match network input");
  net.reset_state();
  StepContext ctx;
  ctx.rule = rule;
  ctx.schedule = schedule;
  const std::size_t n_out = net.plastic.size();
  if (label) ctx.targets = wire_targets(n_out, *label, Phase::train, net.plastic.readout.r_tgt);
  SpikePlayer player(sample);
  for (std::uint64_t t = 0; t < sample.duration; ++t) forward_step(net, player.frame(t), ctx);
  std::vector<std::uint64_t> counts(n_out);
  for (std::size_t i = 0; i < n_out; ++i) counts[i] = net.plastic.proximal[i].spike_count;
  return counts;
}

/// Plasticity-off classification of `samples`; never modifies weights.
inline EvalResult evaluate(Network& net, const std::vector<LabeledSample>& samples, std::size_t n_way) {
  EvalResult r;
  r.n_way = n_way;
  r.confusion.assign(n_way, std::vector<std::uint64_t>(n_way, 0));
  for (const LabeledSample& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= n_way) throw DataError("sample label out of range");
    auto counts = present_sample(net, s, nullptr, {});
    const std::size_t predicted = classify(counts);
    if (std::ranges::all_of(counts, [](std::uint64_t c) { return c == 0; })) ++r.all_zero;
    const auto truth = static_cast<std::size_t>(s.label);
    ++r.confusion[truth][std::min(predicted, n_way - 1)];
    if (predicted == truth) ++r.correct;
    ++r.total;
    r.counts.push_back(std::move(counts));
    r.labels.push_back(s.label);
  }
  return r;
}

/// Baseline bias (solved unless configured) and calibration record.
inline CalibrationRecord calibrate_network(Network& net, const EpisodeConfig& cfg) {
  ReadoutParams rp = net.plastic.readout;
  rp.b_err = cfg.b_err ? *cfg.b_err : solve_baseline_bias(rp, cfg.baseline_period);
  net.set_readout(rp);
  return calibrate_bias(rp, cfg.calibration_window);
}

inline SumOfProductsRule rule_for(const EpisodeConfig& cfg, const CalibrationRecord& cal) {
  return parse_rule(instantiate_rule_template(cfg.rule, cal.b));
}

inline std::uint32_t plastic_weight_crc(const Network& net) {
  const auto& w = net.plastic_store().weights;
  return detail::crc32_of(reinterpret_cast<const std::uint8_t*>(w.data()), w.size());
}

namespace detail {

inline EpisodeReport run_episode_impl(Network& net, const EpisodeConfig& cfg, const std::vector<LabeledSample>& dataset) {
  if (net.plastic.size() != cfg.n_way)
    throw ConfigError("plastic layer has " + std::to_string(net.plastic.size()) + " outputs but n_way is " +
                      std::to_string(cfg.n_way));
  EpisodeReport rep;
  rep.seed = cfg.seed;
  rep.n_way = cfg.n_way;
  rep.k_shot = cfg.k_shot;
  rep.m_pretrained = cfg.m_pretrained;
  rep.calibration = calibrate_network(net, cfg);
  const SumOfProductsRule rule = rule_for(cfg, rep.calibration);
  rep.rule = to_string(rule);

  const ShotSplit split = split_shots(dataset, cfg);
  for (int e = 0; e < cfg.epochs; ++e)
    for (const LabeledSample& s : split.train)
      present_sample(net, s, &rule, cfg.learning, static_cast<std::size_t>(s.label));
  rep.weight_crc = plastic_weight_crc(net);

  rep.test = evaluate(net, split.test, cfg.n_way);
  rep.train = evaluate(net, split.train, cfg.n_way);
  rep.test_accuracy = rep.test.accuracy();
  rep.train_accuracy = rep.train.accuracy();
  return rep;
}

}  // namespace detail

inline EpisodeReport run_episode(Network& net, const EpisodeConfig& cfg, const std::vector<LabeledSample>& dataset) {
  cfg.validate();
  return detail::run_episode_impl(net, cfg, dataset);
}

inline std::string provenance_for_classes(const std::vector<long>& classes) {
  std::string s = "classes=";
  for (std::size_t i = 0; i < classes.size(); ++i) s += (i ? "," : "") + std::to_string(classes[i]);
  return s;
}

/// Stand-in for pre-training the first (dense) frozen layer on a set of
/// classes: unit i gets the contrast direction between one pair of those
/// classes' prototypes, mixed with random weights, then rows are balanced.
/// `prototype_share` in [0, 1] weights the contrast part. Sets provenance.
inline void derive_frozen_from_classes(Network& net, const std::vector<std::vector<double>>& prototypes,
                                       const std::vector<long>& classes, std::uint64_t seed,
                                       double prototype_share = 0.5) {
  if (net.frozen_count() == 0 || net.topology.layers[0].kind != LayerKind::dense)
    throw ConfigError("first layer must be a frozen dense layer");
  if (classes.size() < 2) throw ConfigError("need at least two pre-training classes");
  if (!(prototype_share >= 0.0 && prototype_share <= 1.0)) throw ConfigError("prototype_share must lie in [0, 1]");
  QuantizedWeightStore& store = net.weights[0];
  for (long c : classes)
    if (c < 0 || static_cast<std::size_t>(c) >= prototypes.size() || prototypes[static_cast<std::size_t>(c)].size() != store.cols)
      throw ShapeError("prototype for class " + std::to_string(c) + " missing or of wrong dimension");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < classes.size(); ++a)
    for (std::size_t b = a + 1; b < classes.size(); ++b) pairs.emplace_back(a, b);
  CounterRng rng{.seed = derive_seed(seed, 0x9e7)};
  for (std::size_t i = 0; i < store.rows; ++i) {
    const auto [a, b] = pairs[i % pairs.size()];
    const auto& pa = prototypes[static_cast<std::size_t>(classes[a])];
    const auto& pb = prototypes[static_cast<std::size_t>(classes[b])];
    const double sign = (i / pairs.size()) % 2 == 0 ? 1.0 : -1.0;
    double peak = 0.0;
    for (std::size_t j = 0; j < store.cols; ++j) peak = std::max(peak, std::abs(pa[j] - pb[j]));
    for (std::size_t j = 0; j < store.cols; ++j) {
      const double contrast = peak > 0.0 ? sign * (pa[j] - pb[j]) / peak : 0.0;
      const double w = 127.0 * (prototype_share * contrast + (1.0 - prototype_share) * rng.uniform(-1.0, 1.0));
      store.set(i, j, static_cast<int>(std::lround(w)));
    }
  }
  balance_rows(store);
  net.provenance = provenance_for_classes(classes);
  net.refresh_effective();
}

/// M+N transfer: zero the plastic weights, then few-shot train on the novel
/// classes (relabelled 0..N-1) and evaluate on their held-out samples.
inline EpisodeReport run_mplusn(Network& net, const std::vector<long>& pretrain_classes,
                                const std::vector<long>& novel_classes, EpisodeConfig cfg,
                                const std::vector<LabeledSample>& dataset) {
  cfg.n_way = novel_classes.size();
  cfg.m_pretrained = pretrain_classes.size();
  cfg.validate(1);
  for (long c : novel_classes)
    if (std::ranges::find(pretrain_classes, c) != pretrain_classes.end())
      throw ConfigError("novel class " + std::to_string(c) + " was also used for pre-training");
  std::vector<std::string> warnings;
  if (!pretrain_classes.empty() && net.provenance != provenance_for_classes(pretrain_classes))
    warnings.push_back("frozen weights lack provenance for pre-training classes (have '" + net.provenance + "')");
  std::ranges::fill(net.plastic_store().weights, std::int8_t{0});
  net.refresh_effective();
  EpisodeReport rep = detail::run_episode_impl(net, cfg, select_classes(dataset, novel_classes));
  rep.warnings = std::move(warnings);
  return rep;
}

// ---------------------------------------------------------------------------
// Report output

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string summary_line(const EpisodeReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "episode seed=%llu n_way=%zu k_shot=%zu m=%zu train_acc=%.6f test_acc=%.6f zero_frac=%.6f",
                static_cast<unsigned long long>(r.seed), r.n_way, r.k_shot, r.m_pretrained, r.train_accuracy,
                r.test_accuracy, r.test.zero_fraction());
  return buf;
}

inline void write_confusion(std::ostream& out, const EvalResult& e) {
  out << "true\\pred";
  for (std::size_t c = 0; c < e.n_way; ++c) out << ' ' << c;
  out << '\n';
  for (std::size_t t = 0; t < e.n_way; ++t) {
    out << t;
    for (std::size_t c = 0; c < e.n_way; ++c) out << ' ' << e.confusion[t][c];
    out << '\n';
  }
}

inline std::string format_report(const EpisodeReport& r) {
  std::ostringstream out;
  out << "seed = " << r.seed << '\n'
      << "n_way = " << r.n_way << '\n'
      << "k_shot = " << r.k_shot << '\n'
      << "m_pretrained = " << r.m_pretrained << '\n'
      << "rule = " << r.rule << '\n'
      << "calibration.b = " << format_double(r.calibration.b) << '\n'
      << "calibration.b_perr = " << format_double(r.calibration.b_perr) << '\n'
      << "calibration.b_err = " << format_double(r.calibration.b_err) << '\n'
      << "calibration.period = " << r.calibration.period << '\n'
      << "train_samples = " << r.train.total << '\n'
      << "test_samples = " << r.test.total << '\n'
      << "train_accuracy = " << format_double(r.train_accuracy) << '\n'
      << "test_accuracy = " << format_double(r.test_accuracy) << '\n'
      << "test_zero_count_fraction = " << format_double(r.test.zero_fraction()) << '\n'
      << "plastic_weight_crc32 = " << r.weight_crc << '\n';
  for (const std::string& w : r.warnings) out << "warning = " << w << '\n';
  out << "\n[test confusion]\n";
  write_confusion(out, r.test);
  out << "\n[train confusion]\n";
  write_confusion(out, r.train);
  out << "\n[test spike counts]\nlabel counts...\n";
  for (std::size_t s = 0; s < r.test.counts.size(); ++s) {
    out << r.test.labels[s];
    for (std::uint64_t c : r.test.counts[s]) out << ' ' << c;
    out << '\n';
  }
  out << '\n' << summary_line(r) << '\n';
  return out.str();
}

}  // namespace sgp
