// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "oracle/reference_oracle.hpp"
#include "sgp/commands.hpp"
#include "support.hpp"

using namespace sgp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// -- 1 ---------------------------------------------------------------------

Outcome kernels() {
  double worst_closed = 0.0, worst_diff = 0.0;
  for (auto [tu, tv] : {std::pair{4.0, 8.0}, std::pair{2.0, 5.0}, std::pair{12.0, 3.0}}) {
    const NeuronParams p{.tau_u = tu, .tau_v = tv, .v_th = 1e12};
    LayerState s(1, 1);
    DenseMatrix w(1, 1);
    w.data[0] = 1.0;
    const auto [c1, c2] = difference_kernel_traces(p);
    double x1 = 0.0, x2 = 0.0;
    for (std::uint64_t n = 0; n < 500; ++n) {
      const std::uint8_t in = n == 0;
      step_layer(s, w, std::span(&in, 1), p);
      x1 = update_trace(x1, in, c1);
      x2 = update_trace(x2, in, c2);
      worst_closed = std::max(worst_closed, std::abs(s.v[0] - static_cast<double>(oracle::psp_closed_form(p, n))));
      worst_diff = std::max(worst_diff, std::abs((x2 - x1) - s.p[0]));
    }
  }
  return {worst_closed <= 1e-9 && worst_diff <= 1e-6,
          fmt("max |P - closed form| = %.3g, max |x2-x1 - P| = %.3g", worst_closed, worst_diff)};
}

// -- 2 ---------------------------------------------------------------------

// Random expression over the rule variables with dyadic constants, printed
// as text; `eval` computes its value directly.
struct Expr {
  std::string text;
  std::function<double(const TraceView&, double)> eval;
};

Expr random_expr(CounterRng& rng, int depth) {
  static const char* names[] = {"w", "x0", "x1", "x2", "y0", "y1", "y2"};
  if (depth == 0 || rng.uniform() < 0.3) {
    if (rng.uniform() < 0.4) {
      const double c = static_cast<double>(static_cast<int>(rng.below(33)) - 16) / 8.0;
      return {"(" + fmt("%.17g", c) + ")", [c](const TraceView&, double) { return c; }};
    }
    const std::size_t k = rng.below(7);
    return {names[k], [k](const TraceView& t, double w) {
              const double v[] = {w, t.x0, t.x1, t.x2, t.y0, t.y1, t.y2};
              return v[k];
            }};
  }
  Expr a = random_expr(rng, depth - 1), b = random_expr(rng, depth - 1);
  switch (rng.below(3)) {
    case 0:
      return {"(" + a.text + " + " + b.text + ")", [a, b](const TraceView& t, double w) { return a.eval(t, w) + b.eval(t, w); }};
    case 1:
      return {"(" + a.text + " - " + b.text + ")", [a, b](const TraceView& t, double w) { return a.eval(t, w) - b.eval(t, w); }};
    default:
      return {a.text + " * " + b.text, [a, b](const TraceView& t, double w) { return a.eval(t, w) * b.eval(t, w); }};
  }
}

Outcome rule_parser() {
  const SumOfProductsRule golden = parse_rule("dw = 2*y1*(x2 - x1) + 2*x1 - 2*x2");
  const SumOfProductsRule expected{{{2.0, {{RuleVar::x1}}},
                                    {-2.0, {{RuleVar::x1}, {RuleVar::y1}}},
                                    {-2.0, {{RuleVar::x2}}},
                                    {2.0, {{RuleVar::x2}, {RuleVar::y1}}}}};
  const bool golden_ok = golden == expected && to_string(golden) == "dw = 2*x1 - 2*x1*y1 - 2*x2 + 2*x2*y1";
  CounterRng rng{.seed = 2024};
  int passed = 0, cases = 0;
  double worst = 0.0;
  while (cases < 200) {
    const Expr e = random_expr(rng, 4);
    SumOfProductsRule r;
    try {
      r = parse_rule("dw = " + e.text);
    } catch (const EmptyRuleError&) {
      continue;  // folded to zero; draw another
    }
    ++cases;
    bool ok = true;
    for (int k = 0; k < 20; ++k) {
      TraceView t{.x0 = static_cast<double>(rng.below(2)), .x1 = rng.uniform(-2, 2), .x2 = rng.uniform(-2, 2),
                  .y0 = static_cast<double>(rng.below(2)), .y1 = rng.uniform(-2, 2), .y2 = rng.uniform(-2, 2)};
      const double w = rng.uniform(-2, 2);
      const double want = e.eval(t, w), got = evaluate_rule(r, t, w);
      const double err = std::abs(want - got) / std::max(1.0, std::abs(want));
      worst = std::max(worst, err);
      ok = ok && err <= 1e-12;
    }
    passed += ok;
  }
  return {golden_ok && passed == 200, fmt("golden %s, property %d/200, worst rel err %.3g", golden_ok ? "ok" : "MISMATCH", passed, worst)};
}

// -- 3 ---------------------------------------------------------------------

Outcome rounding() {
  bool ok = true;
  std::string detail;
  for (double frac : {0.1, 0.25, 0.5, 0.9}) {
    const std::size_t draws = 100000;
    QuantizedWeightStore store(1, 1, 0, 77);
    std::size_t ups = 0;
    for (std::size_t k = 0; k < draws; ++k) {
      store.weights[0] = 0;
      apply_update(store, 0, 0, frac, 0);
      ups += store.weights[0] == 1;
    }
    const double f = static_cast<double>(ups) / draws;
    const double se = std::sqrt(frac * (1 - frac) / draws);
    const double z = (f - frac) / se;
    ok = ok && std::abs(z) <= 3.0;
    detail += fmt("%s%.2f->%.4f (z=%+.2f)", detail.empty() ? "" : ", ", frac, f, z);
  }
  return {ok, detail};
}

// -- 4 and 5 ---------------------------------------------------------------

// One input channel straight into one plastic output neuron.
Network single_synapse(double w_tgt, double r_tgt) {
  const NeuronParams p{.tau_u = 4.0, .tau_v = 8.0, .v_th = 1.0};
  NetworkInit init;
  init.readout.w_tgt = w_tgt;
  init.readout.r_tgt = r_tgt;
  return build_network(parse_topology("1", {}, 1, p, p), 1, init);
}

// Raw rule value at the current traces of synapse (0, 0).
double raw_delta(const Network& net, const SumOfProductsRule& rule) {
  const PlasticLayer& pl = net.plastic;
  const TraceView t{.x0 = static_cast<double>(pl.pre.spike[0]), .x1 = pl.pre.t1[0], .x2 = pl.pre.t2[0],
                    .y0 = static_cast<double>(pl.post.spike[0]), .y1 = pl.post.t1[0], .y2 = pl.post.t2[0]};
  return evaluate_rule(rule, t, net.plastic_store().effective(0, 0));
}

Outcome stationarity() {
  Network net = single_synapse(0.5, 0.5);
  const EpisodeConfig cfg;
  const CalibrationRecord cal = calibrate_network(net, cfg);
  const SumOfProductsRule rule = rule_for(cfg, cal);
  // w = 0 and no target: the error neuron sits at baseline while the
  // presynaptic channel fires every step.
  const SpikeVector in{1};
  StepRecord rec;
  std::vector<std::uint64_t> spikes;
  std::vector<double> deltas;
  for (std::uint64_t n = 0; n < 3000 + 21 * cal.period; ++n) {
    forward_step(net, in, {}, &rec);
    deltas.push_back(raw_delta(net, rule));
    if (n >= 3000 && rec.error_spikes[0]) spikes.push_back(n);
  }
  if (spikes.size() < 21) return {false, fmt("only %zu error spikes after settling", spikes.size())};
  double sum = 0.0, peak = 0.0;
  for (std::uint64_t n = spikes[0]; n < spikes[20]; ++n) {
    sum += deltas[n];
    peak = std::max(peak, std::abs(deltas[n]));
  }
  const double mean = sum / static_cast<double>(spikes[20] - spikes[0]);
  return {std::abs(mean) <= 1e-3 * peak, fmt("|mean dw| = %.3g, max |dw| = %.3g, ratio %.3g over %llu steps",
                                             std::abs(mean), peak, std::abs(mean) / peak,
                                             static_cast<unsigned long long>(spikes[20] - spikes[0]))};
}

double mean_update(bool with_target) {
  Network net = single_synapse(2.0, 1.0);
  const EpisodeConfig cfg;
  const CalibrationRecord cal = calibrate_network(net, cfg);
  const SumOfProductsRule rule = rule_for(cfg, cal);
  net.plastic_store().weights[0] = 32;  // positive effective weight 0.5
  net.refresh_effective();
  StepContext ctx;
  if (with_target) ctx.targets = wire_targets(1, 0, Phase::train, 1.0);
  const SpikeVector in{1};
  double sum = 0.0;
  const int warmup = 500, steps = 4000;
  for (int n = 0; n < warmup + steps; ++n) {
    forward_step(net, in, ctx);
    if (n >= warmup) sum += raw_delta(net, rule);
  }
  return sum / steps;
}

Outcome delta_sign() {
  const double absent = mean_update(false), present = mean_update(true);
  return {absent < 0.0 && present > 0.0, fmt("mean dw: target absent %.4g, target present %.4g", absent, present)};
}

// -- 6 and 7 ---------------------------------------------------------------

std::vector<std::uint64_t> seeds_1_to_20() {
  std::vector<std::uint64_t> s(20);
  for (std::size_t i = 0; i < 20; ++i) s[i] = i + 1;
  return s;
}

double mean_accuracy(const RunConfig& c) {
  const auto seeds = seeds_1_to_20();
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  const auto accs = detail::parallel_map(seeds.size(), workers, [&](std::size_t i) {
    return detail::train_one(c, seeds[i]).report.test_accuracy;
  });
  double sum = 0.0;
  for (double a : accs) sum += a;
  return sum / static_cast<double>(accs.size());
}

Outcome fewshot() {
  RunConfig c;  // 5-way, 32 -> 64 -> 5, synthetic clusters
  c.episode.k_shot = 5;
  const double k5 = mean_accuracy(c);
  c.episode.k_shot = 1;
  const double k1 = mean_accuracy(c);
  return {k5 >= 0.8 && k1 >= 0.4 && k5 >= k1, fmt("mean test accuracy K=5 %.3f (>= 0.80), K=1 %.3f (>= 0.40)", k5, k1)};
}

Outcome mplusn() {
  RunConfig c;
  c.episode.mode = "mplusn";
  c.episode.pretrain_classes = {0, 1, 2};
  c.episode.novel_classes = {3, 4, 5};
  c.topology.outputs = 3;
  c.synthetic.n_classes = 6;
  const double acc = mean_accuracy(c);
  const double bar = 1.0 / 3.0 + 0.15;
  return {acc > bar, fmt("3+3 mean test accuracy %.3f (> %.3f)", acc, bar)};
}

// -- 8 ---------------------------------------------------------------------

Outcome oracle_equivalence() {
  std::size_t identical = 0, total_spikes = 0;
  std::string where;
  for (std::uint64_t cfg = 1; cfg <= 5; ++cfg) {
    CounterRng rng{.seed = 900 + cfg};
    const NeuronParams hp{.tau_u = 2.0 + rng.below(6), .tau_v = 9.0 + rng.below(6), .v_th = 1.0};
    const NeuronParams op{.tau_u = 3.0 + rng.below(3), .tau_v = 7.0 + rng.below(4), .v_th = 1.0};
    const std::size_t n_in = 8 + rng.below(9);
    std::vector<std::string> hidden{std::to_string(6 + rng.below(10))};
    if (cfg % 2 == 0) hidden.push_back(std::to_string(4 + rng.below(6)));
    const std::size_t n_out = 2 + rng.below(3);
    Network net = build_network(parse_topology(std::to_string(n_in), hidden, n_out, hp, op), cfg,
                                NetworkInit{.plastic_random_range = 80});
    ReadoutParams rp = net.plastic.readout;
    rp.b_err = solve_baseline_bias(rp, 20);
    net.set_readout(rp);
    const auto frames = testing_support::random_frames(n_in, 10000, 0.5, cfg);
    // Target label changes every 1000 steps, with quiet stretches.
    std::vector<long> schedule(frames.size(), -1);
    Network sim_net = net;
    TrajectoryRecord sim;
    {
      sim = TrajectoryRecord{};
      TrajectoryRecord part;
      for (std::size_t block = 0; block < 10; ++block) {
        const std::size_t label = block % (n_out + 1);
        TargetRouting tr = label < n_out ? wire_targets(n_out, label, Phase::train, 0.5) : TargetRouting{};
        const std::vector<SpikeVector> chunk(frames.begin() + block * 1000, frames.begin() + (block + 1) * 1000);
        // Routing is keyed on the global step, so the schedule follows net.step.
        const std::uint64_t base = sim_net.step;
        part = testing_support::simulator_trajectory(sim_net, chunk, tr);
        if (sim.columns.empty()) sim.columns = part.columns;
        for (auto& row : part.rows) sim.rows.push_back(std::move(row));
        for (std::size_t n = 0; n < 1000; ++n)
          if (tr.spike(tr.active() ? *tr.neuron : 0, base + n)) schedule[block * 1000 + n] = static_cast<long>(*tr.neuron);
      }
    }
    const TrajectoryRecord ref = oracle::simulate(oracle::model_of(net), frames, schedule);
    // Spike columns must match exactly; membrane and trace columns are
    // continuous and differ only by float rounding, so they are skipped.
    TrajectoryRecord a, b;
    std::vector<std::size_t> cols;
    for (std::size_t k = 0; k < sim.columns.size(); ++k)
      if (!sim.columns[k].starts_with("v_err") && !sim.columns[k].starts_with("y1_")) cols.push_back(k);
    for (std::size_t k : cols) a.columns.push_back(sim.columns[k]), b.columns.push_back(ref.columns[k]);
    for (std::size_t n = 0; n < sim.rows.size(); ++n) {
      std::vector<double> ra, rb;
      for (std::size_t k : cols) ra.push_back(sim.rows[n][k]), rb.push_back(ref.rows[n][k]);
      for (double v : ra) total_spikes += v != 0.0;
      a.add_row(std::move(ra));
      b.add_row(std::move(rb));
    }
    const DivergenceReport r = compare_trajectories(a, b);
    if (r.pass) {
      ++identical;
    } else if (where.empty()) {
      where = fmt(", config %llu diverges at step %llu", static_cast<unsigned long long>(cfg),
                  static_cast<unsigned long long>(*r.first_divergence));
    }
  }
  return {identical == 5, fmt("%zu/5 rasters identical over 10000 steps, %zu spikes compared%s", identical, total_spikes,
                              where.c_str())};
}

// -- 9 ---------------------------------------------------------------------

Outcome determinism() {
  const auto root = testing_support::scratch_dir("acceptance_determinism");
  RunConfig c;
  c.episode.seeds = {1, 2};
  auto run = [&](const char* name, unsigned workers) {
    RunConfig r = c;
    r.paths.out_dir = (root / name).string();
    CommandOptions o;
    o.parallel_episodes = workers;
    cmd_train(r, o);
    return root / name;
  };
  const auto a = run("a", 1), b = run("b", 2);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  std::size_t same = 0, files = 0;
  for (const char* f : {"weights_seed1.sgpw", "weights_seed2.sgpw", "report.txt", "metrics.tsv", "manifest.json"}) {
    ++files;
    same += slurp(a / f) == slurp(b / f) && !slurp(a / f).empty();
  }
  return {same == files, fmt("%zu/%zu output files byte-identical", same, files)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"kernel identities", kernels},
      {"rule parser golden and property tests", rule_parser},
      {"stochastic rounding unbiasedness", rounding},
      {"zero-error stationarity", stationarity},
      {"delta-rule sign", delta_sign},
      {"synthetic 5-way few-shot", fewshot},
      {"3+3 transfer", mplusn},
      {"oracle raster equivalence", oracle_equivalence},
      {"train determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %zu %s: %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
