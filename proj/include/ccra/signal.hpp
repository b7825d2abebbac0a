#pragma once

// Transforms, circulant channels, preamble/channel/payload generation and
// received-signal synthesis
//
//   y = sum_u circ([h_u, 0]) (p_u + x_u) + e.
//
// Convention: W is the unitary DFT, so circ([h,0]) v = W^* (H .* W v) where
// H_f = sum_l h_l e^{-i 2 pi f l / n} is the unnormalized DFT of the taps.

#include <algorithm>
#include <array>
#include <bit>
#include <stdexcept>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ccra/common.hpp"
#include "ccra/config.hpp"
#include "ccra/fft.hpp"
#include "ccra/model.hpp"
#include "ccra/seed.hpp"

namespace ccra {

struct TimeDomain {};
struct FreqDomain {};

template <typename Domain>
struct Signal {
  CVec samples;

  Signal() = default;
  explicit Signal(std::size_t n) : samples(n) {}
  explicit Signal(CVec v) : samples(std::move(v)) {}

  std::size_t size() const { return samples.size(); }
  cplx& operator[](std::size_t i) { return samples[i]; }
  const cplx& operator[](std::size_t i) const { return samples[i]; }
  double energy() const { return norm2(samples); }
};

using TimeSignal = Signal<TimeDomain>;
using FreqSignal = Signal<FreqDomain>;

inline FreqSignal to_freq(const TimeSignal& x) { return FreqSignal(fft::unitary_forward(x.samples)); }
inline TimeSignal to_time(const FreqSignal& x) { return TimeSignal(fft::unitary_inverse(x.samples)); }

/// e^{-i 2 pi f l / n} with the phase reduced exactly in integers.
inline cplx twiddle(long long f, long long l, int n) {
  const long long k = ((f * l) % n + n) % n;
  return std::polar(1.0, -kTwoPi * static_cast<double>(k) / n);
}

/// H_f for every f in [0, n).
inline CVec frequency_response(const ChannelRealization& h, int n) {
  CVec padded(static_cast<std::size_t>(n));
  for (const auto& t : h.taps) {
    if (t.delay < 0 || t.delay >= n) throw DimensionError("tap delay out of range");
    padded[static_cast<std::size_t>(t.delay)] += t.gain;
  }
  CVec out(padded.size());
  fft::forward(padded, out);
  return out;
}

/// H_f on selected subcarriers, by direct summation.
inline CVec response_at(const ChannelRealization& h, int n, std::span<const int> subcarriers) {
  CVec out(subcarriers.size());
  for (std::size_t i = 0; i < subcarriers.size(); ++i) {
    cplx s{};
    for (const auto& t : h.taps) s += t.gain * twiddle(subcarriers[i], t.delay, n);
    out[i] = s;
  }
  return out;
}

/// Circular convolution of the zero-padded taps with v, evaluated in the
/// frequency domain. Delays must lie in [0, max_delay).
inline TimeSignal circ_apply(const ChannelRealization& h, const TimeSignal& v, int max_delay = -1) {
  const int n = static_cast<int>(v.size());
  if (max_delay < 0) max_delay = n;
  for (const auto& t : h.taps)
    if (t.delay < 0 || t.delay >= max_delay) throw DimensionError("circ_apply: delay out of range");
  const CVec H = frequency_response(h, n);
  FreqSignal vf = to_freq(v);
  for (std::size_t f = 0; f < vf.size(); ++f) vf[f] *= H[f];
  return to_time(vf);
}

// ---------------------------------------------------------------------------
// Preambles

struct PreambleSet {
  int n = 0;
  std::vector<int> band;                 // control band, ascending
  std::vector<CVec> on_band;             // U rows of length m: p_hat_{u,f}, f in band
  std::vector<ReplicaPattern> patterns;  // preamble index -> replica slots
  bool degenerate = false;               // alpha = 0 with active users: detection impossible

  int size() const { return static_cast<int>(on_band.size()); }

  FreqSignal freq(int u) const {
    FreqSignal out(static_cast<std::size_t>(n));
    const auto& row = on_band[static_cast<std::size_t>(u)];
    for (std::size_t i = 0; i < band.size(); ++i) out[static_cast<std::size_t>(band[i])] = row[i];
    return out;
  }
  TimeSignal time(int u) const { return to_time(freq(u)); }
};

/// Replica pattern addressed by preamble u: degree drawn from Lambda, slots
/// uniform without replacement. Pure function of (u, seed).
inline ReplicaPattern replica_pattern(const CheckedConfig& cc, int u, std::uint64_t seed) {
  auto rng = make_rng(seed, 0, static_cast<std::uint64_t>(u), Stream::replica_pattern);
  const auto& coeff = cc->degree_dist.coeff;
  std::discrete_distribution<int> deg(coeff.begin(), coeff.end());
  ReplicaPattern out;
  out.degree = deg(rng);
  std::vector<int> pool(static_cast<std::size_t>(cc->num_data_slots));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < out.degree; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  out.slots.assign(pool.begin(), pool.begin() + out.degree);
  std::sort(out.slots.begin(), out.slots.end());
  return out;
}

/// Random-phase constant-modulus preambles on the control band with
/// ||p_u||^2 = n alpha.
inline PreambleSet gen_preamble_set(const CheckedConfig& cc, std::uint64_t seed) {
  const auto& cfg = cc.config();
  PreambleSet ps;
  ps.n = cfg.n;
  ps.band = cfg.control_band;
  ps.degenerate = cfg.alpha == 0.0 && cfg.k2 > 0;
  const int m = cc.m();
  const double amp = std::sqrt(cfg.n * cfg.alpha / m);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  ps.on_band.resize(static_cast<std::size_t>(cfg.U));
  ps.patterns.resize(static_cast<std::size_t>(cfg.U));
  for (int u = 0; u < cfg.U; ++u) {
    auto rng = make_rng(seed, 0, static_cast<std::uint64_t>(u), Stream::preamble_phase);
    auto& row = ps.on_band[static_cast<std::size_t>(u)];
    row.resize(static_cast<std::size_t>(m));
    for (auto& v : row) v = std::polar(amp, phase(rng));
    ps.patterns[static_cast<std::size_t>(u)] = replica_pattern(cc, u, seed);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Channels

/// k1 taps per user, delays uniform without replacement on [0, s_d), gains
/// CN(0, 1/k1), so E||h||^2 = 1.
inline ChannelRealization gen_channel(const CheckedConfig& cc, int user_id, Rng& rng) {
  const auto& cfg = cc.config();
  ChannelRealization h;
  h.user_id = user_id;
  std::vector<int> delays(static_cast<std::size_t>(cfg.s_d));
  std::iota(delays.begin(), delays.end(), 0);
  for (int i = 0; i < cfg.k1; ++i) {
    std::uniform_int_distribution<int> pick(i, cfg.s_d - 1);
    std::swap(delays[static_cast<std::size_t>(i)], delays[static_cast<std::size_t>(pick(rng))]);
  }
  std::sort(delays.begin(), delays.begin() + cfg.k1);
  for (int i = 0; i < cfg.k1; ++i)
    h.taps.push_back({delays[static_cast<std::size_t>(i)], complex_gaussian(rng, 1.0 / cfg.k1)});
  return h;
}

/// One independent realization per entry of `active_users`; entry i uses the
/// i-th substream of `seed`.
inline std::vector<ChannelRealization> gen_channels(const CheckedConfig& cc,
                                                    std::span<const int> active_users,
                                                    std::uint64_t seed) {
  std::vector<ChannelRealization> out;
  out.reserve(active_users.size());
  for (std::size_t i = 0; i < active_users.size(); ++i) {
    auto rng = make_rng(seed, 0, i, Stream::channel);
    out.push_back(gen_channel(cc, active_users[i], rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Payload

/// Unit-energy constellation point. BPSK: 0 -> +1, 1 -> -1. QPSK (Gray):
/// bit 0 of the symbol picks the I sign, bit 1 the Q sign.
inline cplx constellation_point(std::uint8_t sym, Modulation mod) {
  if (mod == Modulation::bpsk) return {sym ? -1.0 : 1.0, 0.0};
  const double s = 1.0 / std::sqrt(2.0);
  return {(sym & 1) ? -s : s, (sym & 2) ? -s : s};
}

/// Nearest constellation point (amplitude independent since decisions are by sign).
inline std::uint8_t nearest_symbol(cplx z, Modulation mod) {
  if (mod == Modulation::bpsk) return z.real() < 0.0 ? 1 : 0;
  return static_cast<std::uint8_t>((z.real() < 0.0 ? 1 : 0) | (z.imag() < 0.0 ? 2 : 0));
}

struct UserPayload {
  int device = 0;
  int preamble = 0;
  double amplitude = 0.0;             // sqrt of per-subcarrier symbol energy
  std::vector<std::uint8_t> symbols;  // one per slot subcarrier; replicated in every slot
};

struct TxPayload {
  std::vector<UserPayload> users;  // parallel to the transmitter list
};

inline TxPayload gen_payload(const CheckedConfig& cc, const PreambleSet& ps,
                             std::span<const ActiveUser> tx, std::uint64_t seed) {
  const auto& cfg = cc.config();
  const int w = cc.slot_width();
  const int alphabet = 1 << bits_per_symbol(cfg.modulation);
  TxPayload out;
  out.users.reserve(tx.size());
  for (std::size_t i = 0; i < tx.size(); ++i) {
    auto rng = make_rng(seed, 0, i, Stream::payload);
    std::uniform_int_distribution<int> sym(0, alphabet - 1);
    UserPayload up;
    up.device = tx[i].device;
    up.preamble = tx[i].preamble;
    const int degree = ps.patterns[static_cast<std::size_t>(tx[i].preamble)].degree;
    up.amplitude = std::sqrt(cc.symbol_energy(degree));
    up.symbols.resize(static_cast<std::size_t>(w));
    for (auto& s : up.symbols) s = static_cast<std::uint8_t>(sym(rng));
    out.users.push_back(std::move(up));
  }
  return out;
}

/// x_hat_u on the full band: verbatim replicas in each slot of the user's pattern.
inline FreqSignal payload_freq(const CheckedConfig& cc, const PreambleSet& ps, const UserPayload& up) {
  FreqSignal out(static_cast<std::size_t>(cc->n));
  for (int b : ps.patterns[static_cast<std::size_t>(up.preamble)].slots) {
    const auto& sc = cc.slot(b);
    for (std::size_t i = 0; i < sc.size(); ++i)
      out[static_cast<std::size_t>(sc[i])] =
          up.amplitude * constellation_point(up.symbols[i], cc->modulation);
  }
  return out;
}

/// Superposition of all transmitters' preamble + data through their channels,
/// plus time-domain AWGN of variance noise_var per sample (skipped when 0).
/// `channels[i]` and `payload.users[i]` belong to `tx[i]`.
inline TimeSignal synthesize_rx(const CheckedConfig& cc, const PreambleSet& ps,
                                std::span<const ActiveUser> tx,
                                std::span<const ChannelRealization> channels,
                                const TxPayload& payload, std::uint64_t noise_seed) {
  const auto& cfg = cc.config();
  if (channels.size() != tx.size() || payload.users.size() != tx.size())
    throw DimensionError("synthesize_rx: inconsistent transmitter sets");
  const auto n = static_cast<std::size_t>(cfg.n);
  FreqSignal acc(n);
  for (std::size_t i = 0; i < tx.size(); ++i) {
    const CVec H = frequency_response(channels[i], cfg.n);
    FreqSignal s = payload_freq(cc, ps, payload.users[i]);
    const auto& row = ps.on_band[static_cast<std::size_t>(tx[i].preamble)];
    for (std::size_t k = 0; k < ps.band.size(); ++k) s[static_cast<std::size_t>(ps.band[k])] += row[k];
    for (std::size_t f = 0; f < n; ++f) acc[f] += H[f] * s[f];
  }
  TimeSignal y = to_time(acc);
  if (cfg.noise_var > 0.0) {
    auto rng = make_rng(noise_seed, 0, 0, Stream::noise);
    for (auto& v : y.samples) v += complex_gaussian(rng, cfg.noise_var);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Debug dump: 16-byte header (8-byte magic, u64 count) then little-endian
// interleaved complex64 samples.

inline constexpr std::array<char, 8> kDumpMagic = {'C', 'C', 'R', 'A', 'D', 'M', 'P', '1'};

inline void write_dump(const std::string& path, std::span<const cplx> data) {
  static_assert(std::endian::native == std::endian::little, "dump format assumes little endian");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(kDumpMagic.data(), kDumpMagic.size());
  const std::uint64_t count = data.size();
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& v : data) {
    const float re = static_cast<float>(v.real());
    const float im = static_cast<float>(v.imag());
    f.write(reinterpret_cast<const char*>(&re), sizeof(re));
    f.write(reinterpret_cast<const char*>(&im), sizeof(im));
  }
}

inline CVec read_dump(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::array<char, 8> magic{};
  f.read(magic.data(), magic.size());
  if (magic != kDumpMagic) throw std::runtime_error("bad dump magic in " + path);
  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  CVec out(count);
  for (auto& v : out) {
    float re = 0, im = 0;
    f.read(reinterpret_cast<char*>(&re), sizeof(re));
    f.read(reinterpret_cast<char*>(&im), sizeof(im));
    v = {re, im};
  }
  if (!f) throw std::runtime_error("truncated dump " + path);
  return out;
}

}  // namespace ccra
