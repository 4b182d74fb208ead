// sgp: calibrate | train | eval | simulate | gen-data
//
// Exit codes: 0 ok, 2 config, 3 data (including checksum and shape), 4 calibration.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sgp/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, weights, rule, events;
  bool dry_run = false;
  unsigned parallel = 1;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config,-c", f.config, "JSON run configuration (defaults apply when omitted)");
  sub->add_option("--seed", f.seed, "Run a single episode with this seed");
  sub->add_option("--out,-o", f.out, "Output directory (else paths.out_dir, else $SGP_OUT_DIR, else ./sgp_out)");
  sub->add_option("--weights", f.weights, "Weight file");
  sub->add_option("--rule", f.rule, "Learning rule text; {b} is replaced by the calibrated baseline");
  sub->add_flag("--dry-run", f.dry_run, "Validate the configuration and inputs, then stop");
}

int run(const std::string& cmd, const Flags& f) {
  sgp::RunConfig cfg = f.config.empty() ? sgp::RunConfig{} : sgp::load_config(f.config);
  sgp::CommandOptions opt;
  opt.seed = f.seed;
  opt.out_dir = f.out;
  opt.weights = f.weights;
  opt.rule = f.rule;
  opt.events = f.events;
  opt.dry_run = f.dry_run;
  opt.parallel_episodes = f.parallel;
  opt.log = &std::cout;
  if (f.dry_run) {
    sgp::RunConfig merged = sgp::apply_overrides(cfg, opt);
    sgp::validate(merged);
    std::cout << sgp::to_json(merged).dump(2) << '\n';
  }
  if (cmd == "calibrate") sgp::cmd_calibrate(cfg, opt);
  else if (cmd == "train") sgp::cmd_train(cfg, opt);
  else if (cmd == "eval") sgp::cmd_eval(cfg, opt);
  else if (cmd == "simulate") sgp::cmd_simulate(cfg, opt);
  else if (cmd == "gen-data") sgp::cmd_gen_data(cfg, opt);
  if (f.dry_run) std::cout << "dry run: configuration valid\n";
  return sgp::exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot spiking readout simulator"};
  app.require_subcommand(1);
  Flags f;
  CLI::App* cal = app.add_subcommand("calibrate", "Solve and report the error-baseline bias");
  CLI::App* train = app.add_subcommand("train", "Run few-shot episodes and save weights");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate saved weights with plasticity off");
  CLI::App* sim = app.add_subcommand("simulate", "Forward-only run over an events file");
  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic rate-coded dataset");
  for (CLI::App* s : {cal, train, eval, sim, gen}) add_common(s, f);
  train->add_option("--parallel-episodes,-j", f.parallel, "Worker threads across seeds")->check(CLI::PositiveNumber);
  sim->add_option("--events", f.events, "Input events file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : sgp::exit_config;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sgp::exit_code_for(e);
  }
}
