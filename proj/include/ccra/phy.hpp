#pragma once

// Per-slot data plane: one-tap equalization, hard demapping, capture
// decisions and replica cancellation with residual bookkeeping.
//
// All channel quantities here are unnormalized responses H_f = sqrt(n) h_hat_f,
// so a slot subcarrier reads y_f = sum_u H_{u,f} x_{u,f} + e_f.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "ccra/common.hpp"
#include "ccra/config.hpp"
#include "ccra/signal.hpp"
#include "ccra/stats.hpp"

namespace ccra {

struct SlotObservation {
  int slot = 0;
  std::vector<int> subcarriers;
  CVec y;                              // received samples on the slot subcarriers
  std::vector<double> residual_power;  // interference left behind by imperfect cancellation
  std::vector<int> incident;           // uncancelled receiver-side users mapped to this slot
  std::vector<int> cancelled;

  std::size_t width() const { return subcarriers.size(); }
};

inline SlotObservation observe_slot(const CheckedConfig& cc, const FreqSignal& y_hat, int slot,
                                    std::vector<int> incident) {
  SlotObservation s;
  s.slot = slot;
  s.subcarriers = cc.slot(slot);
  s.y.reserve(s.subcarriers.size());
  for (int f : s.subcarriers) s.y.push_back(y_hat[static_cast<std::size_t>(f)]);
  s.residual_power.assign(s.subcarriers.size(), 0.0);
  s.incident = std::move(incident);
  return s;
}

struct Demodulated {
  CVec equalized;                     // y_f / H_hat_f, in units of the symbol amplitude
  std::vector<std::uint8_t> symbols;  // hard decisions
  double evm = 0.0;                   // rms error vector, relative to unit constellation
  bool undecodable = false;           // channel estimate vanishes on the whole slot
};

inline Demodulated equalize_demod(const SlotObservation& slot, std::span<const cplx> h_hat, Modulation mod,
                                  double amplitude) {
  if (h_hat.size() != slot.width()) throw DimensionError("equalize_demod: estimate/slot size mismatch");
  Demodulated out;
  out.equalized.resize(slot.width());
  out.symbols.assign(slot.width(), 0);
  out.undecodable = std::all_of(h_hat.begin(), h_hat.end(), [](cplx v) { return v == cplx{}; });
  if (out.undecodable) {
    out.evm = std::numeric_limits<double>::infinity();
    return out;
  }
  double err = 0.0;
  for (std::size_t i = 0; i < slot.width(); ++i) {
    if (h_hat[i] == cplx{}) continue;
    const cplx z = slot.y[i] / h_hat[i];
    out.equalized[i] = amplitude > 0.0 ? z / amplitude : z;
    out.symbols[i] = nearest_symbol(z, mod);
    err += std::norm(out.equalized[i] - constellation_point(out.symbols[i], mod));
  }
  out.evm = amplitude > 0.0 ? std::sqrt(err / static_cast<double>(slot.width()))
                            : std::numeric_limits<double>::infinity();
  return out;
}

/// Expected per-subcarrier residue power E_s |H_hat - H|^2 left by cancelling
/// with an imperfect estimate. `h_true` is used by the genie model; the proxy
/// model uses the constant `proxy_error_var` instead.
inline std::vector<double> residue_power(ResidualModel model, std::span<const cplx> h_hat,
                                         std::span<const cplx> h_true, double symbol_energy,
                                         double proxy_error_var) {
  std::vector<double> out(h_hat.size());
  for (std::size_t i = 0; i < h_hat.size(); ++i)
    out[i] = symbol_energy * (model == ResidualModel::genie ? std::norm(h_hat[i] - h_true[i]) : proxy_error_var);
  return out;
}

/// Proxy for |H_hat - H|^2 from the CS error bound ||h_hat - h|| <= c1 eps / sqrt(n alpha),
/// shared across k2 users.
inline double proxy_error_variance(double c1, double epsilon, double alpha, int n, int k2) {
  if (alpha <= 0.0 || k2 <= 0) return std::numeric_limits<double>::infinity();
  return c1 * c1 * epsilon * epsilon / (alpha * n * k2);
}

/// Subtracts H_hat x_hat of `user` from the slot and books the expected residue.
inline void cancel_replica(SlotObservation& slot, int user, std::span<const cplx> h_hat,
                           std::span<const std::uint8_t> symbols, double amplitude, Modulation mod,
                           std::span<const double> residue) {
  auto it = std::find(slot.incident.begin(), slot.incident.end(), user);
  if (it == slot.incident.end()) throw std::invalid_argument("cancel_replica: user not mapped to this slot");
  if (h_hat.size() != slot.width() || symbols.size() != slot.width() || residue.size() != slot.width())
    throw DimensionError("cancel_replica: size mismatch");
  for (std::size_t i = 0; i < slot.width(); ++i) {
    slot.y[i] -= h_hat[i] * amplitude * constellation_point(symbols[i], mod);
    slot.residual_power[i] += residue[i];
  }
  slot.incident.erase(it);
  slot.cancelled.push_back(user);
}

/// Known interferer in a slot: its estimated response and symbol energy.
struct Interferer {
  std::span<const cplx> h_hat;
  double symbol_energy = 0.0;
};

/// Mean over the slot of |H_hat_u|^2 E_s / (sigma^2 + residual + uncancelled colliders).
inline double slot_sinr(const SlotObservation& slot, std::span<const cplx> h_hat, double symbol_energy,
                        double noise_var, std::span<const Interferer> colliders) {
  if (slot.width() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < slot.width(); ++i) {
    double denom = noise_var + slot.residual_power[i];
    for (const auto& c : colliders) denom += std::norm(c.h_hat[i]) * c.symbol_energy;
    const double sig = std::norm(h_hat[i]) * symbol_energy;
    acc += denom > 0.0 ? sig / denom : (sig > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  }
  return acc / static_cast<double>(slot.width());
}

struct CaptureCandidate {
  std::span<const cplx> h_hat;
  double amplitude = 0.0;
  const std::vector<std::uint8_t>* truth = nullptr;  // transmitted symbols; null if nobody sent them
};

struct CaptureContext {
  CaptureMode mode = CaptureMode::genie_crc;
  double gamma_cap_db = 6.0;
  double noise_var = 0.0;
  Modulation modulation = Modulation::bpsk;
  std::vector<Interferer> colliders;
};

struct CaptureOutcome {
  bool decodable = false;
  Demodulated demod;
  double sinr = 0.0;
};

/// genie_crc: decodable iff every demodulated symbol is correct.
/// sinr_threshold: decodable iff slot_sinr >= gamma_cap (and a transmitter exists).
inline CaptureOutcome capture_decide(const SlotObservation& slot, const CaptureCandidate& cand,
                                     const CaptureContext& ctx) {
  CaptureOutcome out;
  out.demod = equalize_demod(slot, cand.h_hat, ctx.modulation, cand.amplitude);
  const double es = cand.amplitude * cand.amplitude;
  out.sinr = slot_sinr(slot, cand.h_hat, es, ctx.noise_var, ctx.colliders);
  if (out.demod.undecodable || cand.truth == nullptr) return out;
  if (ctx.mode == CaptureMode::genie_crc) {
    out.decodable = out.demod.symbols == *cand.truth;
  } else {
    out.decodable = std::isfinite(ctx.gamma_cap_db) && out.sinr >= std::pow(10.0, ctx.gamma_cap_db / 10.0);
  }
  return out;
}

struct SerEstimate {
  std::size_t errors = 0;
  std::size_t total = 0;
  double ser = 0.0;
  Interval ci;
};

inline SerEstimate compute_ser(std::span<const std::uint8_t> tx, std::span<const std::uint8_t> rx) {
  if (tx.size() != rx.size()) throw DimensionError("compute_ser: length mismatch");
  SerEstimate s;
  s.total = tx.size();
  for (std::size_t i = 0; i < tx.size(); ++i) s.errors += tx[i] != rx[i];
  s.ser = s.total ? static_cast<double>(s.errors) / static_cast<double>(s.total) : 0.0;
  s.ci = wilson_interval(s.errors, s.total);
  return s;
}

}  // namespace ccra
