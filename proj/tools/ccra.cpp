// ccra: command-line driver for sweeps, frame simulation, density evolution,
// rate bounds and threshold calibration.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ccra/sweep.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config_path;
  std::string sweep;
  int trials = 100;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode = "abstract";
  unsigned workers = ccra::default_workers();
  bool strict_de = false;
  bool de_overlay = false;
  std::string capture_table;
  double target_pfa = 1e-3;
  std::string colliders = "1,2,4";
  std::string jsonl;
  std::string telemetry;
  std::string dump_dir;
};

ccra::SystemConfig load(const Common& c) {
  ccra::SystemConfig cfg = c.config_path.empty() ? ccra::SystemConfig{} : ccra::load_config(c.config_path);
  if (c.seed) cfg.master_seed = *c.seed;
  ccra::validate(cfg);
  return cfg;
}

ccra::SweepSpec sweep_or(const Common& c, const std::string& fallback) {
  return ccra::parse_sweep(c.sweep.empty() ? fallback : c.sweep);
}

void emit(const Common& c, const std::string& text) {
  if (c.out.empty() || c.out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(c.out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + c.out + "'");
  f << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressive coded random access simulator"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config_path, "Config file (key = value)");
    sub->add_option("--seed", c.seed, "Override master_seed");
    sub->add_option("--out", c.out, "Output CSV (default stdout)");
    sub->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto add_sweep = [&](CLI::App* sub) {
    sub->add_option("--sweep", c.sweep, "NAME=START:STEP:STOP or NAME=v1,v2,...");
    sub->add_option("--trials", c.trials, "Trials per grid point")->check(CLI::PositiveNumber);
  };

  auto* phy = app.add_subcommand("phy-sweep", "Full-phy SER / detection sweep");
  add_common(phy);
  add_sweep(phy);
  phy->add_option("--jsonl", c.jsonl, "Per-trial FrameResult JSON lines");
  phy->add_option("--telemetry", c.telemetry, "Solver telemetry CSV (trial 0 of each point)");
  phy->add_option("--dump-dir", c.dump_dir, "Binary signal dumps (trial 0 of each point)");

  auto* mac = app.add_subcommand("mac-sim", "Frame simulator over a load or config sweep");
  add_common(mac);
  add_sweep(mac);
  mac->add_option("--mode", c.mode, "abstract | full-phy")->check(CLI::IsMember({"abstract", "full-phy"}));
  mac->add_flag("--de-overlay", c.de_overlay, "Add the DE-predicted loss column");
  mac->add_option("--capture-table", c.capture_table, "CSV j,t,pi for abstract table capture");
  mac->add_flag("--strict-paper-de", c.strict_de, "Use the printed slot update for the overlay");
  mac->add_option("--jsonl", c.jsonl, "Per-trial FrameResult JSON lines");

  auto* de = app.add_subcommand("de", "Density evolution curves and threshold");
  add_common(de);
  de->add_option("--sweep", c.sweep, "load_G grid");
  de->add_option("--capture-table", c.capture_table, "CSV j,t,pi (default singleton-only)");
  de->add_flag("--strict-paper-de", c.strict_de, "Also emit the printed-formula columns");

  auto* bounds = app.add_subcommand("bounds", "Achievable-rate lower bounds over alpha");
  add_common(bounds);
  bounds->add_option("--sweep", c.sweep, "alpha grid");
  bounds->add_option("--trials", c.trials, "Channel draws for the expectation term")->check(CLI::PositiveNumber);
  bounds->add_option("--colliders", c.colliders, "Collider counts, comma separated");

  auto* cal = app.add_subcommand("calibrate", "Calibrate the activity threshold xi");
  add_common(cal);
  cal->add_option("--trials", c.trials, "Monte Carlo trials")->check(CLI::PositiveNumber);
  cal->add_option("--target-pfa", c.target_pfa, "Per-user false-alarm target");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  ccra::SystemConfig cfg;
  std::optional<ccra::CaptureTable> table;
  try {
    cfg = load(c);
    if (!c.capture_table.empty()) table = ccra::CaptureTable::load(c.capture_table);
  } catch (const std::exception& e) {
    std::cerr << "ccra: invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    ccra::RunOptions opt;
    opt.trials = c.trials;
    opt.workers = c.workers;
    opt.jsonl_path = c.jsonl;
    opt.telemetry_path = c.telemetry;
    opt.dump_dir = c.dump_dir;
    const ccra::CaptureTable* tp = table ? &*table : nullptr;
    std::string text;
    if (*phy) {
      text = ccra::cmd_phy_sweep(cfg, sweep_or(c, "alpha=0.01,0.11,0.21,0.31,0.41,0.51,0.61,0.71,0.81,0.91,1"), opt);
    } else if (*mac) {
      const auto mode = c.mode == "full-phy" ? ccra::FrameMode::full_phy : ccra::FrameMode::abstract;
      text = ccra::cmd_mac_sim(cfg, sweep_or(c, "load_G=0.1:0.1:1.0"), opt, mode, c.de_overlay, tp, c.strict_de);
    } else if (*de) {
      const auto s = sweep_or(c, "load_G=0:0.05:1.2");
      if (s.name != "load_G") throw std::invalid_argument("de: sweep must be over load_G");
      text = ccra::cmd_de(cfg, s.grid, tp, c.strict_de);
    } else if (*bounds) {
      const auto s = sweep_or(c, "alpha=0.05:0.05:1");
      if (s.name != "alpha") throw std::invalid_argument("bounds: sweep must be over alpha");
      std::vector<int> cols;
      for (const auto& tok : ccra::detail::split(c.colliders, ','))
        if (!tok.empty()) cols.push_back(std::stoi(tok));
      text = ccra::cmd_bounds(cfg, s.grid, cols, c.trials, cfg.master_seed);
    } else if (*cal) {
      text = ccra::cmd_calibrate(cfg, c.target_pfa, c.trials, c.workers);
    }
    emit(c, text);
  } catch (const ccra::ConfigError& e) {
    std::cerr << "ccra: invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "ccra: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "ccra: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
