#pragma once

// Experiment orchestration: sweep grids, per-point trial scheduling and CSV output.
//
// Every CSV starts with a `#` comment line carrying the command, the hash of
// the resolved config text and the master seed. Trial (point, trial) always
// draws from seeds derived from (master_seed, point, trial), so the worker
// count never changes results.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccra/analysis.hpp"
#include "ccra/config.hpp"
#include "ccra/format.hpp"
#include "ccra/mac.hpp"
#include "ccra/parallel.hpp"
#include "ccra/recovery.hpp"
#include "ccra/stats.hpp"

namespace ccra {

struct SweepSpec {
  std::string name;  // alpha | active_users | load_G | snr_db
  std::vector<double> grid;
};

inline const std::set<std::string>& sweep_names() {
  static const std::set<std::string> names{"alpha", "active_users", "load_G", "snr_db"};
  return names;
}

/// `NAME=start:step:stop` (inclusive) or `NAME=v1,v2,...`.
inline SweepSpec parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("sweep: expected NAME=grid");
  SweepSpec s;
  s.name = detail::trim(text.substr(0, eq));
  if (!sweep_names().count(s.name)) throw std::invalid_argument("sweep: unknown parameter '" + s.name + "'");
  const std::string grid = detail::trim(text.substr(eq + 1));
  if (grid.find(':') != std::string::npos) {
    const auto parts = detail::split(grid, ':');
    if (parts.size() != 3) throw std::invalid_argument("sweep: range must be start:step:stop");
    const double a = detail::parse_real("sweep", parts[0]);
    const double step = detail::parse_real("sweep", parts[1]);
    const double b = detail::parse_real("sweep", parts[2]);
    if (!(step > 0.0) || b < a) throw std::invalid_argument("sweep: need step > 0 and stop >= start");
    const auto count = static_cast<long long>(std::floor((b - a) / step + 1e-9)) + 1;
    if (count > 100000) throw std::invalid_argument("sweep: grid too large");
    for (long long i = 0; i < count; ++i) s.grid.push_back(std::round((a + static_cast<double>(i) * step) * 1e12) / 1e12);
  } else {
    for (const auto& tok : detail::split(grid, ','))
      if (!tok.empty()) s.grid.push_back(detail::parse_real("sweep", tok));
  }
  if (s.grid.empty()) throw std::invalid_argument("sweep: empty grid");
  return s;
}

/// Config for one grid point. Load G sets k2 = round(G * num_data_slots).
inline SystemConfig apply_point(SystemConfig cfg, const std::string& name, double v) {
  if (name == "alpha") cfg.alpha = v;
  else if (name == "active_users") cfg.k2 = static_cast<int>(std::lround(v));
  else if (name == "load_G") cfg.k2 = static_cast<int>(std::lround(v * cfg.num_data_slots));
  else if (name == "snr_db") cfg.noise_var = snr_db_to_noise_var(v);
  else throw std::invalid_argument("sweep: unknown parameter '" + name + "'");
  return cfg;
}

inline std::string csv_preamble(const std::string& command, const SystemConfig& cfg) {
  return "# ccra " + command + " config_hash=" + hex64(config_hash(cfg)) +
         " master_seed=" + std::to_string(cfg.master_seed) + "\n";
}

namespace detail {

inline std::string csv_row(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ",";
    out += cells[i];
  }
  return out + "\n";
}

}  // namespace detail

struct RunOptions {
  int trials = 1;
  unsigned workers = 1;
  std::string jsonl_path;      // per-trial FrameResult dump (mac-sim, phy-sweep)
  std::string telemetry_path;  // solver telemetry of trial 0 at every point
  std::string dump_dir;        // binary (y, ground truth) dumps of trial 0 at every point
};

// ---------------------------------------------------------------------------
// phy-sweep

struct PhyPoint {
  double param = 0.0;
  int trials = 0;
  SerEstimate ser;
  DetectionRates detection;
  double mean_solver_iterations = 0.0;
  std::size_t non_converged = 0;
};

inline std::vector<FrameResult> run_phy_point(const PhyContext& ctx, std::uint64_t point, const RunOptions& opt,
                                              std::vector<TelemetryRow>* telemetry = nullptr,
                                              FrameDump* dump = nullptr) {
  std::vector<FrameResult> frames(static_cast<std::size_t>(opt.trials));
  parallel_for(frames.size(), opt.workers, [&](std::size_t t) {
    frames[t] = run_frame_phy(ctx, point, t, t == 0 ? dump : nullptr, t == 0 ? telemetry : nullptr);
  });
  return frames;
}

inline PhyPoint summarize_phy(const CheckedConfig& cc, double param, const std::vector<FrameResult>& frames) {
  PhyPoint p;
  p.param = param;
  p.trials = static_cast<int>(frames.size());
  double iters = 0.0;
  for (const auto& f : frames) {
    std::set<int> used;
    for (const auto& u : f.users) {
      p.ser.errors += u.symbol_errors;
      p.ser.total += u.symbols;
      ++p.detection.active_total;
      p.detection.missed += !u.detected;
      used.insert(u.preamble);
    }
    p.detection.inactive_total += static_cast<std::size_t>(cc->U) - used.size();
    p.detection.false_alarms += static_cast<std::size_t>(f.false_alarms);
    iters += f.solver_iterations;
    p.non_converged += !f.solver_converged;
  }
  p.ser.ser = p.ser.total ? static_cast<double>(p.ser.errors) / static_cast<double>(p.ser.total) : 0.0;
  p.ser.ci = wilson_interval(p.ser.errors, p.ser.total);
  auto& d = p.detection;
  d.pmd = d.active_total ? static_cast<double>(d.missed) / static_cast<double>(d.active_total) : 0.0;
  d.pfa = d.inactive_total ? static_cast<double>(d.false_alarms) / static_cast<double>(d.inactive_total) : 0.0;
  d.pmd_ci = wilson_interval(d.missed, d.active_total);
  d.pfa_ci = wilson_interval(d.false_alarms, d.inactive_total);
  p.mean_solver_iterations = frames.empty() ? 0.0 : iters / static_cast<double>(frames.size());
  return p;
}

namespace detail {

inline void append_jsonl(const std::string& path, std::size_t point, const std::vector<FrameResult>& frames,
                         bool truncate) {
  if (path.empty()) return;
  std::ofstream f(path, truncate ? std::ios::trunc : std::ios::app);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  for (std::size_t t = 0; t < frames.size(); ++t) {
    auto j = to_json(frames[t]);
    j["point"] = point;
    j["trial"] = t;
    f << j.dump() << "\n";
  }
}

inline void append_telemetry(const std::string& path, std::size_t point, const std::vector<TelemetryRow>& rows,
                             bool truncate) {
  if (path.empty()) return;
  std::ofstream f(path, truncate ? std::ios::trunc : std::ios::app);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  if (truncate) f << "point,iteration,residual,objective,lambda\n";
  for (const auto& r : rows)
    f << csv_row({std::to_string(point), std::to_string(r.iteration), fmt_double(r.residual), fmt_double(r.objective),
                  fmt_double(r.lambda)});
}

inline void write_frame_dump(const std::string& dir, std::size_t point, const FrameDump& d) {
  if (dir.empty()) return;
  const std::string stem = dir + "/point" + std::to_string(point);
  write_dump(stem + "_y.bin", d.y.samples);
  nlohmann::json truth;
  for (std::size_t i = 0; i < d.tx.size(); ++i) {
    nlohmann::json taps = nlohmann::json::array();
    for (const auto& t : d.channels[i].taps) taps.push_back({t.delay, t.gain.real(), t.gain.imag()});
    truth["users"].push_back({{"device", d.tx[i].device},
                              {"preamble", d.tx[i].preamble},
                              {"taps", taps},
                              {"amplitude", d.payload.users[i].amplitude},
                              {"symbols", d.payload.users[i].symbols}});
  }
  truth["detected"] = d.estimate.detected;
  truth["threshold"] = d.estimate.threshold;
  std::ofstream f(stem + "_truth.json");
  if (!f) throw std::runtime_error("cannot write '" + stem + "_truth.json'");
  f << truth.dump() << "\n";
}

}  // namespace detail

inline std::string cmd_phy_sweep(const SystemConfig& base, const SweepSpec& sweep, const RunOptions& opt) {
  if (opt.trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::string out = csv_preamble("phy-sweep", base);
  out += sweep.name == "alpha" ? "alpha" : sweep.name;
  out += ",trials,ser,ser_ci_lo,ser_ci_hi,pmd,pfa,mean_solver_iters,nonconverged\n";
  for (std::size_t i = 0; i < sweep.grid.size(); ++i) {
    const auto cc = validate(apply_point(base, sweep.name, sweep.grid[i]));
    const PhyContext ctx(cc);
    std::vector<TelemetryRow> tel;
    FrameDump dump;
    const auto frames = run_phy_point(ctx, i, opt, opt.telemetry_path.empty() ? nullptr : &tel,
                                      opt.dump_dir.empty() ? nullptr : &dump);
    detail::append_jsonl(opt.jsonl_path, i, frames, i == 0);
    detail::append_telemetry(opt.telemetry_path, i, tel, i == 0);
    detail::write_frame_dump(opt.dump_dir, i, dump);
    const auto p = summarize_phy(cc, sweep.grid[i], frames);
    out += detail::csv_row({fmt_double(p.param), std::to_string(p.trials), fmt_double(p.ser.ser),
                            fmt_double(p.ser.ci.lo), fmt_double(p.ser.ci.hi), fmt_double(p.detection.pmd),
                            fmt_double(p.detection.pfa), fmt_double(p.mean_solver_iterations),
                            std::to_string(p.non_converged)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// mac-sim

enum class FrameMode { abstract, full_phy };

/// DE-predicted node loss for the abstract capture model; NaN where DE has no
/// counterpart (SINR capture).
inline double de_predicted_loss(const CheckedConfig& cc, const CaptureTable* table, bool strict) {
  const auto& cfg = cc.config();
  const double G = static_cast<double>(cfg.k2) / cfg.num_data_slots;
  DeOptions o;
  o.strict_paper = strict;
  if (cfg.abstract_capture == AbstractCapture::sinr) return std::nan("");
  const CaptureTable pi = cfg.abstract_capture == AbstractCapture::table && table
                              ? *table
                              : CaptureTable::singleton_only(poisson_truncation(std::max(G, 1e-9), cfg.degree_dist));
  return 1.0 - and_or_tree_at_load(G, cfg.degree_dist, pi, o).pd_node;
}

inline std::string cmd_mac_sim(const SystemConfig& base, const SweepSpec& sweep, const RunOptions& opt,
                               FrameMode mode, bool de_overlay, const CaptureTable* table = nullptr,
                               bool strict_de = false) {
  if (opt.trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::string out = csv_preamble(mode == FrameMode::abstract ? "mac-sim abstract" : "mac-sim full-phy", base);
  out += sweep.name == "load_G" ? "G" : sweep.name;
  out += ",frames,active,T,T_se,p_loss,p_loss_lo,p_loss_hi,p_loss_se,lost_preamble_collision,lost_undetected,lost_undecodable";
  if (de_overlay) out += ",de_p_loss";
  out += "\n";
  for (std::size_t i = 0; i < sweep.grid.size(); ++i) {
    const auto cc = validate(apply_point(base, sweep.name, sweep.grid[i]));
    std::vector<FrameResult> frames(static_cast<std::size_t>(opt.trials));
    if (mode == FrameMode::abstract) {
      parallel_for(frames.size(), opt.workers, [&](std::size_t t) { frames[t] = run_frame_abstract(cc, i, t, table); });
    } else {
      const PhyContext ctx(cc);
      frames = run_phy_point(ctx, i, opt);
    }
    detail::append_jsonl(opt.jsonl_path, i, frames, i == 0);
    const auto s = throughput(frames);
    auto cause = [&](LossCause c) {
      auto it = s.causes.find(c);
      return std::to_string(it == s.causes.end() ? 0 : it->second);
    };
    std::vector<std::string> row{fmt_double(sweep.grid[i]),
                                 std::to_string(s.frames),
                                 std::to_string(s.active),
                                 fmt_double(s.T),
                                 fmt_double(s.T_se),
                                 fmt_double(s.p_loss),
                                 fmt_double(s.p_loss_ci.lo),
                                 fmt_double(s.p_loss_ci.hi),
                                 fmt_double(s.p_loss_se),
                                 cause(LossCause::preamble_collision),
                                 cause(LossCause::undetected),
                                 cause(LossCause::undecodable)};
    if (de_overlay) row.push_back(fmt_double(de_predicted_loss(cc, table, strict_de)));
    out += detail::csv_row(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// de

inline std::string cmd_de(const SystemConfig& base, const std::vector<double>& loads, const CaptureTable* table,
                          bool with_strict) {
  const auto& dd = base.degree_dist;
  auto pi_for = [&](double G) {
    return table ? *table : CaptureTable::singleton_only(poisson_truncation(std::max(G, 1e-9), dd));
  };
  std::string out = csv_preamble("de", base);
  out += "G,pd_node,pd_edge,iterations,converged";
  if (with_strict) out += ",pd_node_strict,pd_edge_strict";
  out += "\n";
  for (double G : loads) {
    const auto pi = pi_for(G);
    const auto r = and_or_tree_at_load(G, dd, pi);
    std::vector<std::string> row{fmt_double(G), fmt_double(r.pd_node), fmt_double(r.pd_edge),
                                 std::to_string(r.iterations), r.converged ? "1" : "0"};
    if (with_strict) {
      DeOptions o;
      o.strict_paper = true;
      const auto s = and_or_tree_at_load(G, dd, pi, o);
      row.push_back(fmt_double(s.pd_node));
      row.push_back(fmt_double(s.pd_edge));
    }
    out += detail::csv_row(row);
  }
  const auto pi = table ? *table : CaptureTable::singleton_only(poisson_truncation(2.0, dd));
  out += "# threshold=" + fmt_double(de_threshold(dd, pi)) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// bounds

inline std::string cmd_bounds(const SystemConfig& base, const std::vector<double>& alphas,
                              const std::vector<int>& colliders, int trials, std::uint64_t seed) {
  std::string out = csv_preamble("bounds", base);
  out += "alpha,e_log,pmd_bar,singleton";
  for (int c : colliders) out += ",collision_" + std::to_string(c);
  out += "\n";
  for (double a : alphas) {
    auto cfg = base;
    cfg.alpha = a;
    const auto cc = validate(cfg);
    const auto lt = expected_log_term(cc, cfg.xi, trials, seed);
    RateBoundInputs in;
    in.alpha = a;
    in.noise_var = cfg.noise_var;
    in.m = cc.m();
    in.n = cfg.n;
    in.k2 = std::max(cfg.k2, 1);
    in.delta_2k = cfg.delta_2k;
    in.pmd_bar = lt.acceptance;
    in.e_log = lt.conditional;
    std::vector<std::string> row{fmt_double(a), fmt_double(lt.conditional), fmt_double(lt.acceptance),
                                 fmt_double(rate_bound_singleton(in))};
    for (int c : colliders) {
      in.colliders = c;
      row.push_back(fmt_double(rate_bound_collision(in)));
    }
    out += detail::csv_row(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// calibrate

struct Calibration {
  double xi = 0.0;
  DetectionRates rates;
};

/// Calibrates on trial stream `seed`, then evaluates on an independent stream.
inline Calibration calibrate(const CheckedConfig& cc, double target_pfa, int trials, std::uint64_t seed,
                             unsigned workers) {
  Calibration c;
  c.xi = calibrate_threshold(cc, target_pfa, trials, derive_seed(seed, 0, 0, Stream::calibration), workers);
  c.rates = estimate_pmd_pfa(cc, c.xi, trials, derive_seed(seed, 1, 0, Stream::calibration), workers);
  return c;
}

inline std::string cmd_calibrate(const SystemConfig& base, double target_pfa, int trials, unsigned workers) {
  const auto cc = validate(base);
  const auto c = calibrate(cc, target_pfa, trials, base.master_seed, workers);
  std::string out = csv_preamble("calibrate", base);
  out += "target_pfa,trials,xi,pmd,pmd_lo,pmd_hi,pfa,pfa_lo,pfa_hi,mean_solver_iters\n";
  out += detail::csv_row({fmt_double(target_pfa), std::to_string(trials), fmt_double(c.xi), fmt_double(c.rates.pmd),
                          fmt_double(c.rates.pmd_ci.lo), fmt_double(c.rates.pmd_ci.hi), fmt_double(c.rates.pfa),
                          fmt_double(c.rates.pfa_ci.lo), fmt_double(c.rates.pfa_ci.hi),
                          fmt_double(c.rates.mean_solver_iterations)});
  return out;
}

}  // namespace ccra
