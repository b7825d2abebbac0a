#pragma once

// Coded slotted ALOHA over frequency slots: the user/slot graph, the
// round-based SIC loop, and frame simulation in abstract and full-phy modes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccra/analysis.hpp"
#include "ccra/config.hpp"
#include "ccra/model.hpp"
#include "ccra/phy.hpp"
#include "ccra/recovery.hpp"
#include "ccra/seed.hpp"
#include "ccra/signal.hpp"
#include "ccra/stats.hpp"

namespace ccra {

enum class LossCause { none, preamble_collision, undetected, undecodable };

inline const char* to_string(LossCause c) {
  switch (c) {
    case LossCause::none: return "none";
    case LossCause::preamble_collision: return "preamble_collision";
    case LossCause::undetected: return "undetected";
    case LossCause::undecodable: return "undecodable";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph

struct UserNode {
  int device = 0;
  int preamble = 0;
  std::vector<int> slots;
  bool preamble_collided = false;
};

struct SlotGraph {
  int num_slots = 0;
  std::vector<UserNode> users;
  std::vector<std::vector<int>> slot_users;  // user indices per slot, ascending

  std::size_t edges() const {
    std::size_t e = 0;
    for (const auto& u : users) e += u.slots.size();
    return e;
  }
  int slot_degree(int b) const { return static_cast<int>(slot_users[static_cast<std::size_t>(b)].size()); }
};

/// `patterns[i]` belongs to `tx[i]`. Transmitters sharing a preamble are flagged.
inline SlotGraph build_graph(int num_slots, std::span<const ActiveUser> tx, std::span<const ReplicaPattern> patterns) {
  if (patterns.size() != tx.size()) throw DimensionError("build_graph: one pattern per transmitter");
  SlotGraph g;
  g.num_slots = num_slots;
  g.slot_users.resize(static_cast<std::size_t>(num_slots));
  std::map<int, int> uses;
  for (const auto& t : tx) ++uses[t.preamble];
  for (std::size_t i = 0; i < tx.size(); ++i) {
    UserNode u;
    u.device = tx[i].device;
    u.preamble = tx[i].preamble;
    u.slots = patterns[i].slots;
    u.preamble_collided = uses[tx[i].preamble] > 1;
    for (int b : u.slots) {
      if (b < 0 || b >= num_slots) throw DimensionError("build_graph: slot index out of range");
      g.slot_users[static_cast<std::size_t>(b)].push_back(static_cast<int>(i));
    }
    g.users.push_back(std::move(u));
  }
  return g;
}

inline SlotGraph build_graph(const CheckedConfig& cc, std::span<const ActiveUser> tx, const PreambleSet& ps) {
  std::vector<ReplicaPattern> pats;
  for (const auto& t : tx) pats.push_back(ps.patterns.at(static_cast<std::size_t>(t.preamble)));
  return build_graph(cc->num_data_slots, tx, pats);
}

// ---------------------------------------------------------------------------
// SIC loop

struct SicTrace {
  std::vector<int> round_of;  // per node: round in which it decoded, -1 if never
  std::vector<int> slot_of;   // per node: slot it decoded from, -1 if never
  std::vector<std::vector<int>> incident;  // final uncancelled nodes per slot
  int rounds = 0;
};

inline constexpr int kMaxSicRounds = 100;

/// Round-based SIC. Each round attempts every eligible, undecoded node in
/// every slot against the state left by the previous round (a node that
/// succeeds in one slot is still offered its later slots in the same round);
/// all nodes decoded in the round are then cancelled from every slot they occupy.
///
/// try_decode(node, slot, incident) -> bool; on_decoded(node, slot) runs the
/// cancellation side effects before the node leaves the incident lists.
template <typename TryDecode, typename OnDecoded>
SicTrace sic_decode(const std::vector<std::vector<int>>& node_slots, int num_slots, const std::vector<char>& eligible,
                    TryDecode&& try_decode, OnDecoded&& on_decoded, int max_rounds = kMaxSicRounds) {
  const std::size_t N = node_slots.size();
  SicTrace tr;
  tr.round_of.assign(N, -1);
  tr.slot_of.assign(N, -1);
  tr.incident.assign(static_cast<std::size_t>(num_slots), {});
  std::size_t remaining_edges = 0;
  for (std::size_t u = 0; u < N; ++u)
    for (int b : node_slots[u]) {
      tr.incident[static_cast<std::size_t>(b)].push_back(static_cast<int>(u));
      ++remaining_edges;
    }

  for (int round = 1; round <= max_rounds; ++round) {
    std::vector<int> fresh;
    for (int b = 0; b < num_slots; ++b) {
      const auto& inc = tr.incident[static_cast<std::size_t>(b)];
      for (int u : inc) {
        const auto uu = static_cast<std::size_t>(u);
        if (!eligible[uu] || (tr.round_of[uu] != -1 && tr.round_of[uu] != round)) continue;
        if (try_decode(u, b, inc) && tr.round_of[uu] == -1) {
          tr.round_of[uu] = round;
          tr.slot_of[uu] = b;
          fresh.push_back(u);
        }
      }
    }
    if (fresh.empty()) break;
    tr.rounds = round;
    const std::size_t before = remaining_edges;
    for (int u : fresh) {
      on_decoded(u, tr.slot_of[static_cast<std::size_t>(u)]);
      for (int b : node_slots[static_cast<std::size_t>(u)]) {
        auto& inc = tr.incident[static_cast<std::size_t>(b)];
        inc.erase(std::remove(inc.begin(), inc.end(), u), inc.end());
        --remaining_edges;
      }
    }
    if (remaining_edges >= before) throw std::logic_error("sic_decode: no progress after a decoding round");
  }
  return tr;
}

/// Plain peeling on a graph: a node resolves when it is alone in a slot.
inline SicTrace peel(const SlotGraph& g) {
  std::vector<std::vector<int>> ns;
  std::vector<char> eligible;
  for (const auto& u : g.users) {
    ns.push_back(u.slots);
    eligible.push_back(!u.preamble_collided);
  }
  return sic_decode(
      ns, g.num_slots, eligible, [](int, int, const std::vector<int>& inc) { return inc.size() == 1; },
      [](int, int) {});
}

// ---------------------------------------------------------------------------
// Frame results

struct UserOutcome {
  int device = 0;
  int preamble = 0;
  bool detected = true;
  bool decoded = false;
  int round = -1;
  LossCause cause = LossCause::none;
  std::size_t symbol_errors = 0;
  std::size_t symbols = 0;
};

struct FrameResult {
  std::vector<UserOutcome> users;
  std::vector<int> slot_final_degree;
  int num_slots = 0;
  int iterations = 0;
  int false_alarms = 0;
  int solver_iterations = 0;
  bool solver_converged = true;

  std::size_t active() const { return users.size(); }
  std::size_t decoded() const {
    return static_cast<std::size_t>(std::count_if(users.begin(), users.end(), [](const auto& u) { return u.decoded; }));
  }
  std::size_t lost(LossCause c) const {
    return static_cast<std::size_t>(std::count_if(users.begin(), users.end(), [&](const auto& u) { return u.cause == c; }));
  }
  double throughput() const { return num_slots ? static_cast<double>(decoded()) / num_slots : 0.0; }
};

inline nlohmann::json to_json(const FrameResult& r) {
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : r.users)
    users.push_back({{"device", u.device},
                     {"preamble", u.preamble},
                     {"detected", u.detected},
                     {"decoded", u.decoded},
                     {"round", u.round},
                     {"cause", to_string(u.cause)},
                     {"symbol_errors", u.symbol_errors},
                     {"symbols", u.symbols}});
  return {{"users", users},
          {"slot_final_degree", r.slot_final_degree},
          {"iterations", r.iterations},
          {"false_alarms", r.false_alarms},
          {"solver_iterations", r.solver_iterations},
          {"solver_converged", r.solver_converged},
          {"throughput", r.throughput()}};
}

struct ThroughputSummary {
  double T = 0.0;
  double T_se = 0.0;
  double p_loss = 0.0;
  Interval p_loss_ci;
  double p_loss_se = 0.0;  // frame-level standard error
  std::size_t active = 0;
  std::size_t decoded = 0;
  std::size_t frames = 0;
  std::map<LossCause, std::size_t> causes;
};

inline ThroughputSummary throughput(std::span<const FrameResult> frames) {
  if (frames.empty()) throw std::invalid_argument("throughput: need at least one frame");
  ThroughputSummary s;
  RunningStats t_stats, loss_stats;
  for (const auto& f : frames) {
    s.active += f.active();
    s.decoded += f.decoded();
    t_stats.add(f.throughput());
    if (f.active()) loss_stats.add(1.0 - static_cast<double>(f.decoded()) / static_cast<double>(f.active()));
    for (const auto& u : f.users)
      if (u.cause != LossCause::none) ++s.causes[u.cause];
  }
  s.frames = frames.size();
  s.T = t_stats.mean();
  s.T_se = t_stats.std_error();
  s.p_loss = s.active ? 1.0 - static_cast<double>(s.decoded) / static_cast<double>(s.active) : 0.0;
  s.p_loss_ci = wilson_interval(s.active - s.decoded, s.active);
  s.p_loss_se = loss_stats.std_error();
  return s;
}

// ---------------------------------------------------------------------------
// Abstract frames

namespace detail {

inline double unit_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed ^ a) ^ b) ^ c);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Preamble indices for `count` transmitters per the selection policy.
inline std::vector<int> choose_preambles(const SystemConfig& cfg, int count, Rng& rng) {
  if (cfg.preamble_selection == PreambleSelection::distinct) {
    if (count > cfg.U) throw ConfigError("preamble_selection", "distinct selection needs k2 <= U");
    auto pool = draw_distinct(cfg.U, count, rng);
    std::shuffle(pool.begin(), pool.end(), rng);
    return pool;
  }
  std::uniform_int_distribution<int> pick(0, cfg.U - 1);
  std::vector<int> out(static_cast<std::size_t>(count));
  for (auto& p : out) p = pick(rng);
  return out;
}

}  // namespace detail

/// Abstract frame: no waveform. Detection succeeds for every transmitter
/// whose preamble is unique; capture follows `abstract_capture`. Replica
/// patterns are redrawn per frame. With a capture table, one uniform per
/// (node, slot, t) decides, so repeated attempts in an unchanged slot agree.
inline FrameResult run_frame_abstract(const CheckedConfig& cc, std::uint64_t point, std::uint64_t trial,
                                      const CaptureTable* table = nullptr) {
  const auto& cfg = cc.config();
  if (cfg.abstract_capture == AbstractCapture::table && table == nullptr)
    throw std::invalid_argument("run_frame_abstract: table capture needs a capture table");
  auto rng = make_rng(cfg.master_seed, point, trial, Stream::preamble_choice);
  const auto pre = detail::choose_preambles(cfg, cfg.k2, rng);
  std::vector<ActiveUser> tx;
  std::vector<ReplicaPattern> pats;
  const std::uint64_t pattern_seed = derive_seed(cfg.master_seed, point, trial, Stream::replica_pattern);
  for (int i = 0; i < cfg.k2; ++i) {
    tx.push_back({i, pre[static_cast<std::size_t>(i)]});
    pats.push_back(replica_pattern(cc, pre[static_cast<std::size_t>(i)], pattern_seed));
  }
  const SlotGraph g = build_graph(cfg.num_data_slots, tx, pats);
  const std::uint64_t cap_seed = derive_seed(cfg.master_seed, point, trial, Stream::capture);

  std::vector<std::vector<int>> ns;
  std::vector<char> eligible;
  for (const auto& u : g.users) {
    ns.push_back(u.slots);
    eligible.push_back(!u.preamble_collided);
  }
  auto gain = [&](int u, int b) {
    // Rayleigh power of node u in slot b
    return -std::log(1.0 - detail::unit_uniform(cap_seed, static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(b), 0x9a1));
  };
  const double gamma = std::pow(10.0, cfg.gamma_cap_db / 10.0);
  auto try_decode = [&](int u, int b, const std::vector<int>& inc) {
    const int j = g.slot_degree(b);
    const int t = j - static_cast<int>(inc.size());
    switch (cfg.abstract_capture) {
      case AbstractCapture::singleton: return inc.size() == 1;
      case AbstractCapture::table: {
        const double x = detail::unit_uniform(cap_seed, static_cast<std::uint64_t>(u),
                                              static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(t) + 1);
        return x < (*table)(t, j);
      }
      case AbstractCapture::sinr: {
        double interf = cfg.noise_var;
        for (int c : g.slot_users[static_cast<std::size_t>(b)]) {
          if (c == u) continue;
          const bool live = std::find(inc.begin(), inc.end(), c) != inc.end();
          interf += (live ? 1.0 : cfg.ic_residual) * gain(c, b);
        }
        return interf > 0.0 ? gain(u, b) / interf >= gamma : true;
      }
    }
    return false;
  };
  const auto tr = sic_decode(ns, g.num_slots, eligible, try_decode, [](int, int) {});

  FrameResult r;
  r.num_slots = g.num_slots;
  r.iterations = tr.rounds;
  for (const auto& inc : tr.incident) r.slot_final_degree.push_back(static_cast<int>(inc.size()));
  for (std::size_t i = 0; i < g.users.size(); ++i) {
    UserOutcome o;
    o.device = g.users[i].device;
    o.preamble = g.users[i].preamble;
    o.round = tr.round_of[i];
    o.decoded = o.round != -1;
    o.cause = o.decoded                      ? LossCause::none
              : g.users[i].preamble_collided ? LossCause::preamble_collision
                                             : LossCause::undecodable;
    r.users.push_back(o);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Full-phy frames

/// Frame-invariant receiver state: preamble set, operator and threshold.
struct PhyContext {
  CheckedConfig cc;
  PreambleSet ps;
  MeasurementOperator A;
  double xi = 0.0;

  PhyContext(CheckedConfig c, double threshold)
      : cc(std::move(c)), ps(gen_preamble_set(cc, cc->master_seed)), A(ps, cc->s_d), xi(threshold) {}
  explicit PhyContext(CheckedConfig c) : PhyContext(c, c->xi) {}
};

struct FrameDump {
  TimeSignal y;
  std::vector<ActiveUser> tx;
  std::vector<ChannelRealization> channels;
  TxPayload payload;
  ActivityEstimate estimate;
};

/// Synthesize, detect, then SIC over slots with the configured capture rule.
/// SER bookkeeping: decoded users are scored on their decoded symbols; a
/// detected but undecoded user is demodulated from its least-loaded replica
/// after SIC; an undetected user is scored against uniform random guesses.
inline FrameResult run_frame_phy(const PhyContext& ctx, std::uint64_t point, std::uint64_t trial,
                                 FrameDump* dump = nullptr, std::vector<TelemetryRow>* telemetry = nullptr) {
  const auto& cc = ctx.cc;
  const auto& cfg = cc.config();
  const auto& ps = ctx.ps;
  const std::uint64_t master = cfg.master_seed;

  std::vector<int> devices(static_cast<std::size_t>(cfg.k2));
  std::iota(devices.begin(), devices.end(), 0);
  auto prng = make_rng(master, point, trial, Stream::preamble_choice);
  const auto pre = detail::choose_preambles(cfg, cfg.k2, prng);
  std::vector<ActiveUser> tx;
  for (int i = 0; i < cfg.k2; ++i) tx.push_back({i, pre[static_cast<std::size_t>(i)]});

  const auto channels = gen_channels(cc, devices, derive_seed(master, point, trial, Stream::channel));
  const auto payload = gen_payload(cc, ps, tx, derive_seed(master, point, trial, Stream::payload));
  const TimeSignal y = synthesize_rx(cc, ps, tx, channels, payload, derive_seed(master, point, trial, Stream::noise));

  const auto yb = measure_control(y, cc);
  auto sol = run_control_solver(cc, ctx.A, yb.y_b, telemetry != nullptr);
  if (telemetry) *telemetry = sol.telemetry;
  auto est = detect_activity(std::move(sol.h), cfg.s_d, ctx.xi);
  const FreqSignal Y = to_freq(y);

  // Receiver nodes: detected preambles.
  std::map<int, std::vector<int>> users_of_preamble;
  for (std::size_t i = 0; i < tx.size(); ++i) users_of_preamble[tx[i].preamble].push_back(static_cast<int>(i));
  const auto& det = est.detected;
  const std::size_t N = det.size();
  std::vector<std::vector<int>> node_slots(N);
  std::vector<std::vector<CVec>> h_hat(N);  // per node, per pattern slot
  std::vector<double> amp(N);
  std::vector<int> truth_user(N, -1);
  std::vector<char> eligible(N, 1);
  FrameResult r;
  for (std::size_t k = 0; k < N; ++k) {
    const int p = det[k];
    const auto& pat = ps.patterns[static_cast<std::size_t>(p)];
    node_slots[k] = pat.slots;
    amp[k] = std::sqrt(cc.symbol_energy(pat.degree));
    ChannelRealization e;
    for (int l = 0; l < cfg.s_d; ++l) {
      const cplx g = est.h_hat[static_cast<std::size_t>(p) * cfg.s_d + l];
      if (g != cplx{}) e.taps.push_back({l, g});
    }
    for (int b : pat.slots) h_hat[k].push_back(response_at(e, cfg.n, cc.slot(b)));
    auto it = users_of_preamble.find(p);
    if (it == users_of_preamble.end()) ++r.false_alarms;
    else if (it->second.size() == 1) truth_user[k] = it->second[0];
  }
  auto local = [&](std::size_t k, int b) {
    const auto& s = node_slots[k];
    return static_cast<std::size_t>(std::find(s.begin(), s.end(), b) - s.begin());
  };

  std::vector<SlotObservation> obs;
  for (int b = 0; b < cfg.num_data_slots; ++b) {
    std::vector<int> inc;
    for (std::size_t k = 0; k < N; ++k)
      if (std::find(node_slots[k].begin(), node_slots[k].end(), b) != node_slots[k].end()) inc.push_back(static_cast<int>(k));
    obs.push_back(observe_slot(cc, Y, b, std::move(inc)));
  }

  const double proxy_var = proxy_error_variance(c1_of_delta(cfg.delta_2k), cc.epsilon(), cfg.alpha, cfg.n, std::max(cfg.k2, 1));
  std::vector<std::vector<std::uint8_t>> decoded_symbols(N);  // from the first successful replica
  auto make_ctx = [&](int u, int b, const std::vector<int>& inc) {
    CaptureContext c;
    c.mode = cfg.capture_mode;
    c.gamma_cap_db = cfg.gamma_cap_db;
    c.noise_var = cfg.noise_var;
    c.modulation = cfg.modulation;
    for (int o : inc)
      if (o != u) {
        const auto oo = static_cast<std::size_t>(o);
        c.colliders.push_back({h_hat[oo][local(oo, b)], amp[oo] * amp[oo]});
      }
    return c;
  };
  auto try_decode = [&](int u, int b, const std::vector<int>& inc) {
    const auto uu = static_cast<std::size_t>(u);
    const std::vector<std::uint8_t>* truth =
        truth_user[uu] >= 0 ? &payload.users[static_cast<std::size_t>(truth_user[uu])].symbols : nullptr;
    const CaptureCandidate cand{h_hat[uu][local(uu, b)], amp[uu], truth};
    auto out = capture_decide(obs[static_cast<std::size_t>(b)], cand, make_ctx(u, b, inc));
    if (out.decodable && decoded_symbols[uu].empty()) decoded_symbols[uu] = std::move(out.demod.symbols);
    return out.decodable;
  };
  auto on_decoded = [&](int u, int) {
    const auto uu = static_cast<std::size_t>(u);
    const auto tu = static_cast<std::size_t>(truth_user[uu]);
    for (std::size_t i = 0; i < node_slots[uu].size(); ++i) {
      const int b = node_slots[uu][i];
      const CVec H_true = response_at(channels[tu], cfg.n, cc.slot(b));
      const auto res = residue_power(cfg.residual_model, h_hat[uu][i], H_true, amp[uu] * amp[uu], proxy_var);
      cancel_replica(obs[static_cast<std::size_t>(b)], u, h_hat[uu][i], decoded_symbols[uu], amp[uu], cfg.modulation, res);
    }
  };
  const auto tr = sic_decode(node_slots, cfg.num_data_slots, eligible, try_decode, on_decoded);

  r.num_slots = cfg.num_data_slots;
  r.iterations = tr.rounds;
  r.solver_iterations = sol.iterations;
  r.solver_converged = sol.converged;
  for (const auto& inc : tr.incident) r.slot_final_degree.push_back(static_cast<int>(inc.size()));

  std::map<int, std::size_t> node_of_preamble;
  for (std::size_t k = 0; k < N; ++k) node_of_preamble[det[k]] = k;
  auto guess_rng = make_rng(master, point, trial, Stream::capture);
  std::uniform_int_distribution<int> guess(0, (1 << bits_per_symbol(cfg.modulation)) - 1);
  for (std::size_t i = 0; i < tx.size(); ++i) {
    UserOutcome o;
    o.device = tx[i].device;
    o.preamble = tx[i].preamble;
    const auto& truth = payload.users[i].symbols;
    o.symbols = truth.size();
    std::vector<std::uint8_t> rx(truth.size());
    const bool collided = users_of_preamble[tx[i].preamble].size() > 1;
    auto it = node_of_preamble.find(tx[i].preamble);
    if (it == node_of_preamble.end()) {
      o.detected = false;
      o.cause = collided ? LossCause::preamble_collision : LossCause::undetected;
      for (auto& s : rx) s = static_cast<std::uint8_t>(guess(guess_rng));
    } else {
      const std::size_t k = it->second;
      if (tr.round_of[k] != -1) {
        o.decoded = true;
        o.round = tr.round_of[k];
        rx = decoded_symbols[k];
      } else {
        o.cause = collided ? LossCause::preamble_collision : LossCause::undecodable;
        std::size_t best = 0;
        std::size_t best_load = static_cast<std::size_t>(-1);
        for (std::size_t s = 0; s < node_slots[k].size(); ++s) {
          const auto load = tr.incident[static_cast<std::size_t>(node_slots[k][s])].size();
          if (load < best_load) {
            best_load = load;
            best = s;
          }
        }
        if (!node_slots[k].empty()) {
          const auto d = equalize_demod(obs[static_cast<std::size_t>(node_slots[k][best])], h_hat[k][best],
                                        cfg.modulation, amp[k]);
          rx = d.symbols;
        }
      }
    }
    for (std::size_t s = 0; s < truth.size(); ++s) o.symbol_errors += truth[s] != rx[s];
    r.users.push_back(o);
  }
  if (dump) {
    dump->y = y;
    dump->tx = tx;
    dump->channels = channels;
    dump->payload = payload;
    dump->estimate = std::move(est);
  }
  return r;
}

}  // namespace ccra
