#pragma once

// And-or tree density evolution with capture, degree-distribution algebra,
// achievable-rate lower bounds and reference SER curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccra/config.hpp"
#include "ccra/fft.hpp"
#include "ccra/parallel.hpp"
#include "ccra/phy.hpp"
#include "ccra/recovery.hpp"
#include "ccra/seed.hpp"
#include "ccra/signal.hpp"

namespace ccra {

// ---------------------------------------------------------------------------
// Degree distributions

/// Edge-oriented user degrees: lambda[k] = k Lambda_k / Lambda'(1).
inline std::vector<double> edge_from_node(const DegreeDistribution& node) {
  const double mean = node.mean();
  if (!(mean > 0.0)) throw std::domain_error("edge_from_node: all mass at degree 0");
  std::vector<double> lambda(node.coeff.size(), 0.0);
  for (std::size_t k = 1; k < node.coeff.size(); ++k) lambda[k] = static_cast<double>(k) * node.coeff[k] / mean;
  return lambda;
}

/// Inverse of edge_from_node.
inline DegreeDistribution node_from_edge(const std::vector<double>& lambda) {
  DegreeDistribution out;
  out.coeff.assign(lambda.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 1; k < lambda.size(); ++k) total += lambda[k] / static_cast<double>(k);
  if (!(total > 0.0)) throw std::domain_error("node_from_edge: empty distribution");
  for (std::size_t k = 1; k < lambda.size(); ++k) out.coeff[k] = lambda[k] / static_cast<double>(k) / total;
  return out;
}

inline int poisson_truncation(double G, const DegreeDistribution& node) {
  return std::max(50, static_cast<int>(std::ceil(10.0 * G * node.mean())));
}

/// Poisson(mu) pmf on 0..j_max with the tail folded into j_max.
inline std::vector<double> poisson_pmf(double mu, int j_max) {
  std::vector<double> psi(static_cast<std::size_t>(j_max) + 1, 0.0);
  double acc = 0.0;
  for (int j = 0; j < j_max; ++j) {
    psi[static_cast<std::size_t>(j)] =
        mu > 0.0 ? std::exp(-mu + j * std::log(mu) - std::lgamma(j + 1.0)) : (j == 0 ? 1.0 : 0.0);
    acc += psi[static_cast<std::size_t>(j)];
  }
  psi[static_cast<std::size_t>(j_max)] = std::max(0.0, 1.0 - acc);
  return psi;
}

/// Edge-oriented slot degrees omega[j] induced by Poisson(G Lambda'(1)) slot degrees.
inline std::vector<double> slot_edge_dist(double G, const DegreeDistribution& node, int j_max = 0) {
  if (!(G > 0.0)) throw std::domain_error("slot_edge_dist: load must be positive");
  const double mean = node.mean();
  if (!(mean > 0.0)) throw std::domain_error("slot_edge_dist: all mass at degree 0");
  if (j_max <= 0) j_max = poisson_truncation(G, node);
  const auto psi = poisson_pmf(G * mean, j_max);
  std::vector<double> omega(psi.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 1; j < psi.size(); ++j) total += static_cast<double>(j) * psi[j];
  for (std::size_t j = 1; j < psi.size(); ++j) omega[j] = static_cast<double>(j) * psi[j] / total;
  return omega;
}

// ---------------------------------------------------------------------------
// Capture table

/// pi(t, j): probability of decoding a packet in a degree-j slot after t of its
/// j-1 interferers were cancelled. Degrees above j_max are looked up by the
/// number of remaining interferers, j - 1 - t.
class CaptureTable {
public:
  CaptureTable() = default;
  explicit CaptureTable(int j_max) : j_max_(j_max), pi_(static_cast<std::size_t>(j_max) + 1) {
    if (j_max < 1) throw std::invalid_argument("CaptureTable: j_max must be >= 1");
    for (int j = 1; j <= j_max; ++j) pi_[static_cast<std::size_t>(j)].assign(static_cast<std::size_t>(j), 0.0);
  }

  static CaptureTable singleton_only(int j_max) {
    CaptureTable c(j_max);
    for (int j = 1; j <= j_max; ++j) c.set(j - 1, j, 1.0);
    return c;
  }
  static CaptureTable all_ones(int j_max) {
    CaptureTable c(j_max);
    for (int j = 1; j <= j_max; ++j)
      for (int t = 0; t < j; ++t) c.set(t, j, 1.0);
    return c;
  }

  int j_max() const { return j_max_; }

  void set(int t, int j, double v) {
    check(t, j);
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("CaptureTable: value outside [0, 1]");
    pi_[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)] = v;
  }

  double operator()(int t, int j) const {
    if (j < 1 || t < 0 || t >= j) throw std::out_of_range("CaptureTable: need 0 <= t < j");
    if (j > j_max_) {
      const int remaining = j - 1 - t;
      if (remaining >= j_max_) return 0.0;
      j = j_max_;
      t = j_max_ - 1 - remaining;
    }
    return pi_[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)];
  }

  /// Forces pi non-decreasing in t for every j (pool-adjacent-violators,
  /// unweighted). Returns the number of j rows that needed adjusting.
  int monotonize() {
    int touched = 0;
    for (int j = 1; j <= j_max_; ++j) {
      auto& row = pi_[static_cast<std::size_t>(j)];
      std::vector<double> val;
      std::vector<int> len;
      for (double v : row) {
        val.push_back(v);
        len.push_back(1);
        while (val.size() > 1 && val[val.size() - 2] > val.back()) {
          const double merged = (val[val.size() - 2] * len[len.size() - 2] + val.back() * len.back()) /
                                (len[len.size() - 2] + len.back());
          const int l = len[len.size() - 2] + len.back();
          val.pop_back();
          len.pop_back();
          val.back() = merged;
          len.back() = l;
        }
      }
      std::vector<double> fitted;
      for (std::size_t b = 0; b < val.size(); ++b) fitted.insert(fitted.end(), static_cast<std::size_t>(len[b]), val[b]);
      if (fitted != row) ++touched;
      row = std::move(fitted);
    }
    return touched;
  }

  bool is_monotone() const {
    for (int j = 1; j <= j_max_; ++j) {
      const auto& row = pi_[static_cast<std::size_t>(j)];
      for (std::size_t t = 1; t < row.size(); ++t)
        if (row[t] < row[t - 1]) return false;
    }
    return true;
  }

  /// CSV lines `j,t,pi`; `#` lines and a `j,t,pi` header are skipped.
  std::string to_csv() const {
    std::string out = "j,t,pi\n";
    for (int j = 1; j <= j_max_; ++j)
      for (int t = 0; t < j; ++t) out += std::to_string(j) + "," + std::to_string(t) + "," + fmt_double((*this)(t, j)) + "\n";
    return out;
  }

  static CaptureTable from_csv(const std::string& text) {
    struct Entry {
      int j, t;
      double v;
    };
    std::vector<Entry> entries;
    std::istringstream in(text);
    std::string line;
    int j_max = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("j,", 0) == 0) continue;
      const auto parts = detail::split(line, ',');
      if (parts.size() != 3) throw std::invalid_argument("capture table: expected j,t,pi");
      Entry e{std::stoi(parts[0]), std::stoi(parts[1]), std::stod(parts[2])};
      j_max = std::max(j_max, e.j);
      entries.push_back(e);
    }
    CaptureTable c(j_max);
    for (const auto& e : entries) c.set(e.t, e.j, e.v);
    return c;
  }

  static CaptureTable load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open capture table '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return from_csv(ss.str());
  }

private:
  void check(int t, int j) const {
    if (j < 1 || j > j_max_ || t < 0 || t >= j) throw std::out_of_range("CaptureTable: index out of range");
  }

  int j_max_ = 0;
  std::vector<std::vector<double>> pi_;
};

// ---------------------------------------------------------------------------
// Density evolution

struct DeOptions {
  double tol = 1e-12;
  int max_iter = 10000;
  bool strict_paper = false;  // evaluate the slot update with the printed weights
};

struct DEResult {
  std::vector<double> p;  // p_1 .. p_I
  std::vector<double> q;  // q_0 .. q_I
  double p_inf = 1.0;
  double q_inf = 1.0;
  double pd_edge = 0.0;  // 1 - q_inf
  double pd_node = 0.0;  // 1 - Lambda(p_inf)
  int iterations = 0;
  bool converged = false;
  bool monotone = true;
};

namespace detail {

inline double binom_weight(int n, int t, double a, double b) {
  // C(n, t) a^t b^(n-t), exact at the endpoints
  if ((a == 0.0 && t > 0) || (b == 0.0 && t < n)) return 0.0;
  const double logc = std::lgamma(n + 1.0) - std::lgamma(t + 1.0) - std::lgamma(n - t + 1.0);
  double lw = logc;
  if (t > 0) lw += t * std::log(a);
  if (n - t > 0) lw += (n - t) * std::log(b);
  return std::exp(lw);
}

}  // namespace detail

/// Slot-node update. Consistent form: probability of not decoding given each
/// other edge was cancelled with probability 1 - q. Strict form: the printed
/// expression, with q^t (1-q)^(j-1-t) weights and no complement.
inline double de_slot_update(const std::vector<double>& omega, const CaptureTable& pi, double q, bool strict) {
  double s = 0.0;
  for (std::size_t jj = 1; jj < omega.size(); ++jj) {
    if (omega[jj] == 0.0) continue;
    const int j = static_cast<int>(jj);
    double inner = 0.0;
    for (int t = 0; t < j; ++t) {
      const double w = strict ? detail::binom_weight(j - 1, t, q, 1.0 - q) : detail::binom_weight(j - 1, t, 1.0 - q, q);
      if (w != 0.0) inner += w * pi(t, j);
    }
    s += omega[jj] * inner;
  }
  return strict ? std::clamp(s, 0.0, 1.0) : std::clamp(1.0 - s, 0.0, 1.0);
}

inline double de_user_update(const std::vector<double>& lambda, double p) {
  double s = 0.0;
  for (std::size_t k = 1; k < lambda.size(); ++k)
    if (lambda[k] != 0.0) s += lambda[k] * std::pow(p, static_cast<double>(k - 1));
  return std::clamp(s, 0.0, 1.0);
}

inline DEResult and_or_tree(const std::vector<double>& omega, const std::vector<double>& lambda,
                            const CaptureTable& pi, const DeOptions& opts = {}) {
  const auto node = node_from_edge(lambda);
  DEResult r;
  double q = 1.0;
  r.q.push_back(q);
  for (int i = 1; i <= opts.max_iter; ++i) {
    const double p = de_slot_update(omega, pi, q, opts.strict_paper);
    const double qn = de_user_update(lambda, p);
    r.p.push_back(p);
    r.q.push_back(qn);
    r.iterations = i;
    if (qn > q + 1e-14) r.monotone = false;
    const bool done = std::abs(qn - q) < opts.tol;
    q = qn;
    if (done) {
      r.converged = true;
      break;
    }
  }
  r.q_inf = q;
  r.p_inf = r.p.empty() ? 1.0 : r.p.back();
  r.pd_edge = 1.0 - r.q_inf;
  r.pd_node = 1.0 - node.eval(r.p_inf);
  return r;
}

/// DE at offered load G with Poisson slot degrees. G = 0 resolves everything.
inline DEResult and_or_tree_at_load(double G, const DegreeDistribution& node, const CaptureTable& pi,
                                    const DeOptions& opts = {}) {
  if (G <= 0.0) {
    DEResult r;
    r.q = {1.0};
    r.p_inf = 0.0;
    r.q_inf = 0.0;
    r.pd_edge = 1.0;
    r.pd_node = 1.0;
    r.converged = true;
    return r;
  }
  return and_or_tree(slot_edge_dist(G, node), edge_from_node(node), pi, opts);
}

/// Largest load whose DE node loss Lambda(p_inf) stays below `loss_target`,
/// by bisection on [lo, hi] to width `tol`.
inline double de_threshold(const DegreeDistribution& node, const CaptureTable& pi, double lo = 0.05,
                           double hi = 2.0, double tol = 1e-3, double loss_target = 1e-6,
                           const DeOptions& opts = {}) {
  auto ok = [&](double G) { return 1.0 - and_or_tree_at_load(G, node, pi, opts).pd_node <= loss_target; };
  if (!ok(lo)) return lo;
  if (ok(hi)) return hi;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Rate bounds and reference curves

inline double c1_of_delta(double delta) {
  const double denom = 1.0 - (1.0 + std::numbers::sqrt2) * delta;
  if (!(delta >= 0.0) || !(denom > 0.0)) throw std::domain_error("c1_of_delta: need 0 <= delta < sqrt(2)-1");
  return 4.0 * std::sqrt(1.0 + delta) / denom;
}

struct RateBoundInputs {
  double alpha = 0.2;
  double noise_var = 0.01;
  int m = 839;
  int n = 24576;
  int k2 = 10;
  double delta_2k = 0.2;
  double pmd_bar = 1.0;  // 1 - P_md
  int colliders = 0;
  double e_log = 0.0;  // conditional expectation of log2(1 + (1-alpha)|h|^2 / sigma^2)
};

namespace detail {

inline double rate_penalty(const RateBoundInputs& in, int multiplicity) {
  if (!(in.alpha >= 0.0 && in.alpha <= 1.0)) throw std::domain_error("rate bound: alpha outside [0, 1]");
  if (!(in.noise_var > 0.0) || in.m <= 0 || in.n <= 0 || in.k2 <= 0)
    throw std::domain_error("rate bound: need noise_var > 0 and positive m, n, k2");
  if (in.colliders < 0 || !(in.pmd_bar >= 0.0 && in.pmd_bar <= 1.0))
    throw std::domain_error("rate bound: bad collider count or detection probability");
  if (in.alpha == 1.0) return 0.0;
  if (in.alpha == 0.0) return std::numeric_limits<double>::infinity();
  const double c1 = c1_of_delta(in.delta_2k);
  const double x = multiplicity * (1.0 - in.alpha) * c1 * c1 * in.m /
                   (in.noise_var * in.alpha * static_cast<double>(in.n) * in.k2);
  return std::log2(1.0 + x);
}

}  // namespace detail

inline double rate_bound_singleton(const RateBoundInputs& in) {
  return in.e_log * in.pmd_bar - detail::rate_penalty(in, 1);
}

inline double rate_bound_collision(const RateBoundInputs& in) {
  return in.e_log * in.pmd_bar - detail::rate_penalty(in, in.colliders + 1);
}

inline double rayleigh_bpsk_ser(double mean_snr) {
  if (!(mean_snr >= 0.0)) throw std::domain_error("rayleigh_bpsk_ser: negative SNR");
  if (std::isinf(mean_snr)) return 0.0;
  return 0.5 * (1.0 - std::sqrt(mean_snr / (1.0 + mean_snr)));
}

struct LogTerm {
  double conditional = 0.0;  // E[log2(1 + (1-alpha)|H_f|^2/sigma^2) | ||h||^2 > xi]
  double acceptance = 0.0;   // P(||h||^2 > xi)
  double value = 0.0;        // conditional * acceptance
  std::size_t accepted = 0;
};

/// Monte Carlo over generated channels; per-subcarrier gains from the n-point response.
inline LogTerm expected_log_term(const CheckedConfig& cc, double xi, int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("expected_log_term: trials must be >= 1");
  const auto& cfg = cc.config();
  const double a = 1.0 - cfg.alpha;
  LogTerm out;
  double acc = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto rng = make_rng(seed, 0, static_cast<std::uint64_t>(t), Stream::channel);
    const auto h = gen_channel(cc, 0, rng);
    if (!(h.energy() > xi)) continue;
    ++out.accepted;
    const CVec H = frequency_response(h, cfg.n);
    double s = 0.0;
    for (const auto& v : H)
      s += cfg.noise_var > 0.0 ? std::log2(1.0 + a * std::norm(v) / cfg.noise_var)
                               : (a * std::norm(v) > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    acc += s / static_cast<double>(H.size());
  }
  out.acceptance = static_cast<double>(out.accepted) / trials;
  if (out.acceptance < 1e-3) throw std::domain_error("expected_log_term: conditioning event too rare");
  out.conditional = acc / static_cast<double>(out.accepted);
  out.value = out.conditional * out.acceptance;
  return out;
}

// ---------------------------------------------------------------------------
// Capture probabilities from the physical layer

struct CaptureTableEstimate {
  CaptureTable table;
  std::vector<std::vector<std::size_t>> successes;  // [j][t]
  int trials = 0;
  int monotonized_rows = 0;
};

/// Monte Carlo over single-slot instances. Each trial estimates the channels of
/// j_max users with the configured control-channel receiver, stacks users
/// 0..j-1 in a slot, cancels users 1..t with their estimates and asks the
/// configured capture rule whether user 0 decodes.
inline CaptureTableEstimate capture_table_from_phy(const CheckedConfig& cc, int j_max, int trials,
                                                   std::uint64_t seed, unsigned workers = 1) {
  const auto& cfg = cc.config();
  if (j_max < 1) throw std::invalid_argument("capture_table_from_phy: j_max must be >= 1");
  if (trials < 1) throw std::invalid_argument("capture_table_from_phy: trials must be >= 1");
  if (cfg.k2 < 1) throw std::invalid_argument("capture_table_from_phy: needs k2 >= 1");
  const auto ps = gen_preamble_set(cc, cfg.master_seed);
  const MeasurementOperator A(ps, cfg.s_d);
  const auto& sc = cc.slot(0);
  const auto w = sc.size();
  const double proxy_var = proxy_error_variance(c1_of_delta(cfg.delta_2k), cc.epsilon(), cfg.alpha, cfg.n, cfg.k2);

  using Counts = std::vector<std::vector<std::size_t>>;
  std::vector<Counts> per_trial(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), workers, [&](std::size_t trial) {
    struct UserState {
      CVec H, H_hat;
      std::vector<std::uint8_t> symbols;
      double amplitude = 0.0;
    };
    std::vector<UserState> users;
    for (int batch = 0; static_cast<int>(users.size()) < j_max; ++batch) {
      const std::uint64_t sub = trial * 1024 + static_cast<std::uint64_t>(batch);
      auto rng = make_rng(seed, 1, sub, Stream::activity);
      const auto active = draw_distinct(cfg.U, cfg.k2, rng);
      std::vector<ActiveUser> tx;
      for (std::size_t i = 0; i < active.size(); ++i) tx.push_back({static_cast<int>(i), active[i]});
      const auto channels = gen_channels(cc, active, derive_seed(seed, 1, sub, Stream::channel));
      const CVec y = simulate_control(cc, A, tx, channels, derive_seed(seed, 1, sub, Stream::noise));
      const auto sol = run_control_solver(cc, A, y);
      const auto norms = block_energies(sol.h, cfg.s_d);
      auto prng = make_rng(seed, 1, sub, Stream::payload);
      std::discrete_distribution<int> deg(cfg.degree_dist.coeff.begin(), cfg.degree_dist.coeff.end());
      std::uniform_int_distribution<int> sym(0, (1 << bits_per_symbol(cfg.modulation)) - 1);
      for (std::size_t i = 0; i < active.size() && static_cast<int>(users.size()) < j_max; ++i) {
        UserState us;
        us.H = response_at(channels[i], cfg.n, sc);
        ChannelRealization est;
        if (norms[static_cast<std::size_t>(active[i])] > cfg.xi) {
          for (int l = 0; l < cfg.s_d; ++l) {
            const cplx g = sol.h[static_cast<std::size_t>(active[i]) * cfg.s_d + l];
            if (g != cplx{}) est.taps.push_back({l, g});
          }
        }
        us.H_hat = response_at(est, cfg.n, sc);
        us.amplitude = std::sqrt(cc.symbol_energy(deg(prng)));
        us.symbols.resize(w);
        for (auto& s : us.symbols) s = static_cast<std::uint8_t>(sym(prng));
        users.push_back(std::move(us));
      }
    }
    auto nrng = make_rng(seed, 1, trial, Stream::noise);
    CVec noise(w);
    for (auto& v : noise) v = cfg.noise_var > 0.0 ? complex_gaussian(nrng, cfg.noise_var) : cplx{};

    Counts counts(static_cast<std::size_t>(j_max) + 1);
    for (int j = 1; j <= j_max; ++j) {
      counts[static_cast<std::size_t>(j)].assign(static_cast<std::size_t>(j), 0);
      SlotObservation base;
      base.subcarriers = sc;
      base.y = noise;
      base.residual_power.assign(w, 0.0);
      for (int i = 0; i < j; ++i) {
        const auto& us = users[static_cast<std::size_t>(i)];
        for (std::size_t f = 0; f < w; ++f)
          base.y[f] += us.H[f] * us.amplitude * constellation_point(us.symbols[f], cfg.modulation);
        base.incident.push_back(i);
      }
      for (int t = 0; t < j; ++t) {
        SlotObservation obs = base;
        for (int i = 1; i <= t; ++i) {
          const auto& us = users[static_cast<std::size_t>(i)];
          const auto res = residue_power(cfg.residual_model, us.H_hat, us.H, us.amplitude * us.amplitude, proxy_var);
          cancel_replica(obs, i, us.H_hat, us.symbols, us.amplitude, cfg.modulation, res);
        }
        CaptureContext ctx;
        ctx.mode = cfg.capture_mode;
        ctx.gamma_cap_db = cfg.gamma_cap_db;
        ctx.noise_var = cfg.noise_var;
        ctx.modulation = cfg.modulation;
        for (int i = t + 1; i < j; ++i) {
          const auto& us = users[static_cast<std::size_t>(i)];
          ctx.colliders.push_back({us.H_hat, us.amplitude * us.amplitude});
        }
        const auto& target = users[0];
        CaptureCandidate cand{target.H_hat, target.amplitude, &target.symbols};
        counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)] += capture_decide(obs, cand, ctx).decodable;
      }
    }
    per_trial[trial] = std::move(counts);
  });

  CaptureTableEstimate out;
  out.table = CaptureTable(j_max);
  out.trials = trials;
  out.successes.resize(static_cast<std::size_t>(j_max) + 1);
  for (int j = 1; j <= j_max; ++j) {
    auto& row = out.successes[static_cast<std::size_t>(j)];
    row.assign(static_cast<std::size_t>(j), 0);
    for (const auto& c : per_trial)
      for (int t = 0; t < j; ++t) row[static_cast<std::size_t>(t)] += c[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)];
    for (int t = 0; t < j; ++t) out.table.set(t, j, static_cast<double>(row[static_cast<std::size_t>(t)]) / trials);
  }
  out.monotonized_rows = out.table.monotonize();
  return out;
}

}  // namespace ccra
