#pragma once

// System configuration, its validation, and the plain-text config format.
//
// The config file is flat `key = value` text with `#` comments. The control
// band is either an explicit index list (`3, 17, 40` or `[3,17,40]`) or
// `centered:m`, meaning m contiguous subcarriers centered in [0, n), or
// `comb:m`, meaning subcarriers floor(k n / m) for k = 0..m-1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ccra/common.hpp"
#include "ccra/format.hpp"

namespace ccra {

enum class Modulation { bpsk, qpsk };
enum class PreambleSelection { random, distinct };
enum class SolverKind { hicosamp, bpdn };
enum class CaptureMode { genie_crc, sinr_threshold };
enum class ResidualModel { genie, proxy };
enum class AbstractCapture { singleton, sinr, table };

inline int bits_per_symbol(Modulation m) { return m == Modulation::bpsk ? 1 : 2; }

/// Node-oriented replica-count distribution Lambda: coeff[d] = P(degree d).
struct DegreeDistribution {
  std::vector<double> coeff;

  static DegreeDistribution regular(int d) {
    DegreeDistribution out;
    out.coeff.assign(static_cast<std::size_t>(d) + 1, 0.0);
    out.coeff[static_cast<std::size_t>(d)] = 1.0;
    return out;
  }

  int max_degree() const { return static_cast<int>(coeff.size()) - 1; }

  /// Lambda'(1), the mean degree.
  double mean() const {
    double s = 0.0;
    for (std::size_t d = 0; d < coeff.size(); ++d) s += static_cast<double>(d) * coeff[d];
    return s;
  }

  /// Lambda(x) = sum_d Lambda_d x^d.
  double eval(double x) const {
    double s = 0.0;
    for (std::size_t d = coeff.size(); d-- > 0;) s = s * x + coeff[d];
    return s;
  }

  bool operator==(const DegreeDistribution&) const = default;
};

struct SystemConfig {
  int n = 24576;
  std::vector<int> control_band;  // empty means centered:839 after defaults
  int s_cp = 3000;
  int s_d = 300;
  int k1 = 6;
  int U = 100;
  int k2 = 10;
  double alpha = 0.2;
  double noise_var = 0.01;
  int num_data_slots = 40;
  Modulation modulation = Modulation::bpsk;
  std::uint64_t master_seed = 1;

  DegreeDistribution degree_dist = DegreeDistribution::regular(3);
  PreambleSelection preamble_selection = PreambleSelection::random;
  SolverKind solver = SolverKind::hicosamp;
  double xi = 0.0;             // activity threshold on ||h_u||^2
  double eps_slack = 0.1;      // epsilon = sigma sqrt(m) (1 + eps_slack)
  CaptureMode capture_mode = CaptureMode::genie_crc;
  double gamma_cap_db = 6.0;
  ResidualModel residual_model = ResidualModel::genie;
  double delta_2k = 0.0;       // user-supplied RIP constant for the proxy residual
  AbstractCapture abstract_capture = AbstractCapture::singleton;
  double ic_residual = 0.0;    // abstract mode: fraction of cancelled power left behind

  bool operator==(const SystemConfig&) const = default;
};

inline std::vector<int> comb_band(int n, int m) {
  std::vector<int> out(static_cast<std::size_t>(std::max(m, 0)));
  for (int k = 0; k < m; ++k)
    out[static_cast<std::size_t>(k)] = static_cast<int>(static_cast<long long>(k) * n / m);
  return out;
}

inline std::vector<int> centered_band(int n, int m) {
  std::vector<int> out(static_cast<std::size_t>(std::max(m, 0)));
  const int start = (n - m) / 2;
  for (int i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = start + i;
  return out;
}

inline double snr_db_to_noise_var(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

/// A configuration whose invariants have been checked, with derived quantities.
class CheckedConfig {
public:
  const SystemConfig& config() const { return cfg_; }
  const SystemConfig* operator->() const { return &cfg_; }

  int m() const { return static_cast<int>(cfg_.control_band.size()); }
  int slot_width() const { return slot_width_; }
  const std::vector<int>& data_subcarriers() const { return data_; }
  const std::vector<std::vector<int>>& slots() const { return slots_; }
  const std::vector<int>& slot(int b) const { return slots_[static_cast<std::size_t>(b)]; }

  /// Per-subcarrier data symbol energy for a user with `degree` replicas.
  double symbol_energy(int degree) const {
    const double occupied = static_cast<double>(degree) * slot_width_;
    return static_cast<double>(cfg_.n) * (1.0 - cfg_.alpha) / occupied;
  }

  double epsilon() const {
    return std::sqrt(cfg_.noise_var * m()) * (1.0 + cfg_.eps_slack);
  }

private:
  friend CheckedConfig validate(SystemConfig cfg);
  SystemConfig cfg_;
  int slot_width_ = 0;
  std::vector<int> data_;
  std::vector<std::vector<int>> slots_;
};

inline CheckedConfig validate(SystemConfig cfg) {
  if (cfg.n <= 0) throw ConfigError("n", "must be positive");
  if (cfg.control_band.empty()) cfg.control_band = centered_band(cfg.n, std::min(839, cfg.n - 1));
  const int m = static_cast<int>(cfg.control_band.size());
  if (m >= cfg.n) throw ConfigError("control_band", "size must be smaller than n");
  {
    std::set<int> seen;
    for (int f : cfg.control_band) {
      if (f < 0 || f >= cfg.n) throw ConfigError("control_band", "index out of [0, n)");
      if (!seen.insert(f).second) throw ConfigError("control_band", "repeated index");
    }
    std::sort(cfg.control_band.begin(), cfg.control_band.end());
  }
  if (cfg.s_cp <= 0) throw ConfigError("s_cp", "must be positive");
  if (cfg.s_d <= 0) throw ConfigError("s_d", "must be positive");
  if (cfg.k1 <= 0) throw ConfigError("k1", "must be positive");
  if (cfg.k1 > cfg.s_d) throw ConfigError("k1", "must not exceed s_d");
  if (cfg.s_d > cfg.s_cp) throw ConfigError("s_d", "must not exceed s_cp");
  if (cfg.s_cp >= cfg.n) throw ConfigError("s_cp", "must be smaller than n");
  if (cfg.U <= 0) throw ConfigError("U", "must be positive");
  if (cfg.k2 < 0) throw ConfigError("k2", "must be nonnegative");
  if (cfg.k2 > cfg.U) throw ConfigError("k2", "must not exceed U");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw ConfigError("alpha", "must lie in [0, 1]");
  if (!(cfg.noise_var >= 0.0) || !std::isfinite(cfg.noise_var))
    throw ConfigError("noise_var", "must be a nonnegative real");
  if (cfg.num_data_slots <= 0) throw ConfigError("num_data_slots", "must be positive");
  if (!(cfg.xi >= 0.0)) throw ConfigError("xi", "must be nonnegative");
  if (!(cfg.eps_slack >= 0.0)) throw ConfigError("eps_slack", "must be nonnegative");
  if (!(cfg.delta_2k >= 0.0 && cfg.delta_2k < std::sqrt(2.0) - 1.0))
    throw ConfigError("delta_2k", "must lie in [0, sqrt(2)-1)");
  if (!(cfg.ic_residual >= 0.0 && cfg.ic_residual <= 1.0))
    throw ConfigError("ic_residual", "must lie in [0, 1]");

  {
    const auto& c = cfg.degree_dist.coeff;
    if (c.size() < 2) throw ConfigError("degree_dist", "needs a degree >= 1");
    double total = 0.0;
    for (double v : c) {
      if (!(v >= 0.0)) throw ConfigError("degree_dist", "coefficients must be nonnegative");
      total += v;
    }
    if (c[0] > 0.0) throw ConfigError("degree_dist", "degree 0 is not allowed");
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("degree_dist", "must sum to 1");
    if (cfg.degree_dist.max_degree() > cfg.num_data_slots)
      throw ConfigError("degree_dist", "max degree exceeds num_data_slots");
  }

  CheckedConfig out;
  {
    std::vector<char> in_band(static_cast<std::size_t>(cfg.n), 0);
    for (int f : cfg.control_band) in_band[static_cast<std::size_t>(f)] = 1;
    for (int f = 0; f < cfg.n; ++f)
      if (!in_band[static_cast<std::size_t>(f)]) out.data_.push_back(f);
  }
  out.slot_width_ = static_cast<int>(out.data_.size()) / cfg.num_data_slots;
  if (out.slot_width_ < 1) throw ConfigError("num_data_slots", "more slots than data subcarriers");
  out.slots_.resize(static_cast<std::size_t>(cfg.num_data_slots));
  for (int b = 0; b < cfg.num_data_slots; ++b) {
    auto first = out.data_.begin() + static_cast<std::ptrdiff_t>(b) * out.slot_width_;
    out.slots_[static_cast<std::size_t>(b)].assign(first, first + out.slot_width_);
  }
  out.cfg_ = std::move(cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Text format

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline long long parse_integer(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (...) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (...) {
    throw ConfigError(key, "expected a real, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key, "expected a real, got '" + v + "'");
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace detail

inline DegreeDistribution parse_degree_dist(const std::string& text) {
  // "3:1" or "2:0.5, 4:0.5"
  DegreeDistribution out;
  for (const auto& item : detail::split(text, ',')) {
    const auto kv = detail::split(item, ':');
    if (kv.size() != 2) throw ConfigError("degree_dist", "expected degree:probability pairs");
    const auto d = detail::parse_integer("degree_dist", kv[0]);
    if (d < 0 || d > 10000) throw ConfigError("degree_dist", "degree out of range");
    if (out.coeff.size() <= static_cast<std::size_t>(d)) out.coeff.resize(static_cast<std::size_t>(d) + 1, 0.0);
    out.coeff[static_cast<std::size_t>(d)] += detail::parse_real("degree_dist", kv[1]);
  }
  return out;
}

inline std::string format_degree_dist(const DegreeDistribution& dd) {
  std::string out;
  for (std::size_t d = 0; d < dd.coeff.size(); ++d) {
    if (dd.coeff[d] == 0.0) continue;
    if (!out.empty()) out += ",";
    out += std::to_string(d) + ":" + fmt_double(dd.coeff[d]);
  }
  return out;
}

/// Parses config text. Unknown keys are errors. `control_band` may precede or
/// follow `n`; `centered:m` and `comb:m` are resolved after all keys are read.
inline SystemConfig parse_config(const std::string& text) {
  SystemConfig cfg;
  long long shorthand_m = -1;  // band size from centered:m / comb:m, -1 if an explicit list
  bool comb = false;
  std::optional<double> snr_db;
  bool noise_given = false;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected key = value");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string val = detail::trim(body.substr(eq + 1));
    auto as_int = [&] { return static_cast<int>(detail::parse_integer(key, val)); };
    auto as_real = [&] { return detail::parse_real(key, val); };
    auto pick = [&](std::initializer_list<std::pair<const char*, int>> opts) {
      for (auto [name, v] : opts)
        if (val == name) return v;
      throw ConfigError(key, "unknown option '" + val + "'");
    };

    if (key == "n") cfg.n = as_int();
    else if (key == "control_band") {
      if (val.rfind("centered:", 0) == 0 || val.rfind("comb:", 0) == 0) {
        comb = val[1] == 'o';
        shorthand_m = detail::parse_integer(key, val.substr(val.find(':') + 1));
        cfg.control_band.clear();
      } else {
        std::string list = val;
        if (!list.empty() && list.front() == '[') list.erase(0, 1);
        if (!list.empty() && list.back() == ']') list.pop_back();
        cfg.control_band.clear();
        shorthand_m = -1;
        for (const auto& tok : detail::split(list, ','))
          if (!tok.empty()) cfg.control_band.push_back(static_cast<int>(detail::parse_integer(key, tok)));
        if (cfg.control_band.empty()) throw ConfigError(key, "empty control band");
      }
    } else if (key == "s_cp") cfg.s_cp = as_int();
    else if (key == "s_d") cfg.s_d = as_int();
    else if (key == "k1") cfg.k1 = as_int();
    else if (key == "U") cfg.U = as_int();
    else if (key == "k2") cfg.k2 = as_int();
    else if (key == "alpha") cfg.alpha = as_real();
    else if (key == "noise_var") {
      cfg.noise_var = as_real();
      noise_given = true;
    } else if (key == "snr_db") snr_db = as_real();
    else if (key == "num_data_slots") cfg.num_data_slots = as_int();
    else if (key == "modulation")
      cfg.modulation = static_cast<Modulation>(pick({{"bpsk", 0}, {"qpsk", 1}}));
    else if (key == "master_seed") {
      try {
        cfg.master_seed = std::stoull(val);
      } catch (...) {
        throw ConfigError(key, "expected an unsigned integer");
      }
    } else if (key == "degree_dist") cfg.degree_dist = parse_degree_dist(val);
    else if (key == "preamble_selection")
      cfg.preamble_selection =
          static_cast<PreambleSelection>(pick({{"random", 0}, {"distinct", 1}}));
    else if (key == "solver")
      cfg.solver = static_cast<SolverKind>(pick({{"hicosamp", 0}, {"bpdn", 1}}));
    else if (key == "xi") cfg.xi = as_real();
    else if (key == "eps_slack") cfg.eps_slack = as_real();
    else if (key == "capture_mode")
      cfg.capture_mode = static_cast<CaptureMode>(pick({{"genie_crc", 0}, {"sinr", 1}}));
    else if (key == "gamma_cap_db") cfg.gamma_cap_db = as_real();
    else if (key == "residual_model")
      cfg.residual_model = static_cast<ResidualModel>(pick({{"genie", 0}, {"proxy", 1}}));
    else if (key == "delta_2k") cfg.delta_2k = as_real();
    else if (key == "abstract_capture")
      cfg.abstract_capture =
          static_cast<AbstractCapture>(pick({{"singleton", 0}, {"sinr", 1}, {"table", 2}}));
    else if (key == "ic_residual") cfg.ic_residual = as_real();
    else throw ConfigError(key, "unknown key");
  }
  if (snr_db) {
    const double nv = snr_db_to_noise_var(*snr_db);
    if (noise_given && std::abs(nv - cfg.noise_var) > 1e-12 * nv)
      throw ConfigError("snr_db", "conflicts with noise_var");
    cfg.noise_var = nv;
  }
  if (shorthand_m != -1) {
    if (shorthand_m <= 0 || shorthand_m >= cfg.n)
      throw ConfigError("control_band", "band size must lie in (0, n)");
    const int m = static_cast<int>(shorthand_m);
    cfg.control_band = comb ? comb_band(cfg.n, m) : centered_band(cfg.n, m);
  }
  return cfg;
}

inline SystemConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text form: fixed key order, shortest round-trip numbers.
inline std::string to_config_text(const SystemConfig& cfg) {
  static const char* mod[] = {"bpsk", "qpsk"};
  static const char* sel[] = {"random", "distinct"};
  static const char* solv[] = {"hicosamp", "bpdn"};
  static const char* cap[] = {"genie_crc", "sinr"};
  static const char* res[] = {"genie", "proxy"};
  static const char* acap[] = {"singleton", "sinr", "table"};
  std::string band;
  const int m = static_cast<int>(cfg.control_band.size());
  if (!cfg.control_band.empty() && cfg.control_band == centered_band(cfg.n, m)) {
    band = "centered:" + std::to_string(m);
  } else if (!cfg.control_band.empty() && cfg.control_band == comb_band(cfg.n, m)) {
    band = "comb:" + std::to_string(m);
  } else {
    for (std::size_t i = 0; i < cfg.control_band.size(); ++i) {
      if (i) band += ",";
      band += std::to_string(cfg.control_band[i]);
    }
  }
  std::ostringstream o;
  o << "n = " << cfg.n << "\n"
    << "control_band = " << band << "\n"
    << "s_cp = " << cfg.s_cp << "\n"
    << "s_d = " << cfg.s_d << "\n"
    << "k1 = " << cfg.k1 << "\n"
    << "U = " << cfg.U << "\n"
    << "k2 = " << cfg.k2 << "\n"
    << "alpha = " << fmt_double(cfg.alpha) << "\n"
    << "noise_var = " << fmt_double(cfg.noise_var) << "\n"
    << "num_data_slots = " << cfg.num_data_slots << "\n"
    << "modulation = " << mod[static_cast<int>(cfg.modulation)] << "\n"
    << "master_seed = " << cfg.master_seed << "\n"
    << "degree_dist = " << format_degree_dist(cfg.degree_dist) << "\n"
    << "preamble_selection = " << sel[static_cast<int>(cfg.preamble_selection)] << "\n"
    << "solver = " << solv[static_cast<int>(cfg.solver)] << "\n"
    << "xi = " << fmt_double(cfg.xi) << "\n"
    << "eps_slack = " << fmt_double(cfg.eps_slack) << "\n"
    << "capture_mode = " << cap[static_cast<int>(cfg.capture_mode)] << "\n"
    << "gamma_cap_db = " << fmt_double(cfg.gamma_cap_db) << "\n"
    << "residual_model = " << res[static_cast<int>(cfg.residual_model)] << "\n"
    << "delta_2k = " << fmt_double(cfg.delta_2k) << "\n"
    << "abstract_capture = " << acap[static_cast<int>(cfg.abstract_capture)] << "\n"
    << "ic_residual = " << fmt_double(cfg.ic_residual) << "\n";
  return o.str();
}

inline std::uint64_t config_hash(const SystemConfig& cfg) { return fnv1a64(to_config_text(cfg)); }

}  // namespace ccra
