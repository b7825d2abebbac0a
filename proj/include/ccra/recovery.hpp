#pragma once

// Compressed-sensing control-channel receiver.
//
// The stacked unknown h = [h_0; ...; h_{U-1}] has one block of s_d delay taps
// per preamble. On the control band the observation is
//
//   (A h)_f = sum_u p_hat_{u,f} sum_l h_{u,l} e^{-i 2 pi f l / n},  f in B,
//
// i.e. P_B W D(p) h with the circulant blocks of D(p) truncated to s_d taps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccra/common.hpp"
#include "ccra/config.hpp"
#include "ccra/fft.hpp"
#include "ccra/model.hpp"
#include "ccra/parallel.hpp"
#include "ccra/seed.hpp"
#include "ccra/signal.hpp"
#include "ccra/stats.hpp"

namespace ccra {

struct ControlMeasurement {
  CVec y_b;  // y_hat restricted to the control band
};

/// y_B = P_B W y.
inline ControlMeasurement measure_control(const TimeSignal& y, const CheckedConfig& cc) {
  if (static_cast<int>(y.size()) != cc->n) throw DimensionError("measure_control: |y| != n");
  const CVec yf = fft::unitary_forward(y.samples);
  ControlMeasurement out;
  out.y_b.reserve(static_cast<std::size_t>(cc.m()));
  for (int f : cc->control_band) out.y_b.push_back(yf[static_cast<std::size_t>(f)]);
  return out;
}

class MeasurementOperator {
public:
  MeasurementOperator(const PreambleSet& ps, int s_d)
      : n_(ps.n), s_d_(s_d), band_(ps.band), p_(ps.on_band) {
    if (s_d_ <= 0 || s_d_ > n_) throw DimensionError("MeasurementOperator: bad s_d");
    tw_.resize(static_cast<std::size_t>(n_));
    for (int k = 0; k < n_; ++k) tw_[static_cast<std::size_t>(k)] = std::polar(1.0, -kTwoPi * k / n_);
    const auto m = static_cast<std::size_t>(rows());
    // Dense phase table e^{-i 2 pi f l / n} (row l, column f in B) when it is small.
    if (m * static_cast<std::size_t>(s_d_) <= kMaxPhaseTable) {
      phase_.resize(m * static_cast<std::size_t>(s_d_));
      for (int l = 0; l < s_d_; ++l)
        for (std::size_t k = 0; k < m; ++k)
          phase_[static_cast<std::size_t>(l) * m + k] =
              tw_[static_cast<std::size_t>((static_cast<long long>(band_[k]) * l) % n_)];
    }
    const double fft_cost = 2.0 * n_ * std::log2(static_cast<double>(n_));
    direct_adjoint_ = !phase_.empty() && static_cast<double>(m) * s_d_ < 2.0 * fft_cost;
    direct_nnz_limit_ = phase_.empty() ? 0 : static_cast<int>(fft_cost / std::max<std::size_t>(1, m));
  }

  int rows() const { return static_cast<int>(band_.size()); }
  int cols() const { return users() * s_d_; }
  int users() const { return static_cast<int>(p_.size()); }
  int depth() const { return s_d_; }
  int n() const { return n_; }

  cplx entry(int row, int col) const {
    const int u = col / s_d_;
    const int l = col % s_d_;
    const auto k = static_cast<std::size_t>((static_cast<long long>(band_[static_cast<std::size_t>(row)]) * l) % n_);
    return p_[static_cast<std::size_t>(u)][static_cast<std::size_t>(row)] * tw_[k];
  }

  static constexpr std::size_t kMaxPhaseTable = std::size_t{1} << 22;

  CVec column(int col) const {
    CVec out(static_cast<std::size_t>(rows()));
    for (int r = 0; r < rows(); ++r) out[static_cast<std::size_t>(r)] = entry(r, col);
    return out;
  }

  CVec forward(std::span<const cplx> h) const {
    if (static_cast<int>(h.size()) != cols()) throw DimensionError("op_forward: expected U*s_d entries");
    const auto m = static_cast<std::size_t>(rows());
    CVec out(m);
    CVec buf(static_cast<std::size_t>(n_)), spec(static_cast<std::size_t>(n_));
    for (int u = 0; u < users(); ++u) {
      const auto block = h.subspan(static_cast<std::size_t>(u) * s_d_, static_cast<std::size_t>(s_d_));
      int nnz = 0;
      for (const auto& v : block) nnz += (v != cplx{});
      if (nnz == 0) continue;
      const auto& pu = p_[static_cast<std::size_t>(u)];
      if (nnz <= direct_nnz_limit_) {
        for (int l = 0; l < s_d_; ++l) {
          const cplx hl = block[static_cast<std::size_t>(l)];
          if (hl == cplx{}) continue;
          const cplx* ph = phase_.data() + static_cast<std::size_t>(l) * m;
          for (std::size_t r = 0; r < m; ++r) out[r] += pu[r] * (ph[r] * hl);
        }
        continue;
      }
      std::fill(buf.begin(), buf.end(), cplx{});
      std::copy(block.begin(), block.end(), buf.begin());
      fft::forward(buf, spec);
      for (std::size_t r = 0; r < m; ++r) out[r] += pu[r] * spec[static_cast<std::size_t>(band_[r])];
    }
    return out;
  }

  CVec adjoint(std::span<const cplx> r) const {
    if (static_cast<int>(r.size()) != rows()) throw DimensionError("op_adjoint: expected m entries");
    const auto m = static_cast<std::size_t>(rows());
    CVec out(static_cast<std::size_t>(cols()));
    CVec buf(static_cast<std::size_t>(n_)), time(static_cast<std::size_t>(n_)), z(m);
    for (int u = 0; u < users(); ++u) {
      const auto& pu = p_[static_cast<std::size_t>(u)];
      cplx* dst = out.data() + static_cast<std::size_t>(u) * s_d_;
      if (direct_adjoint_) {
        for (std::size_t k = 0; k < m; ++k) z[k] = std::conj(pu[k]) * r[k];
        for (int l = 0; l < s_d_; ++l) {
          const cplx* ph = phase_.data() + static_cast<std::size_t>(l) * m;
          double re = 0.0, im = 0.0;
          for (std::size_t k = 0; k < m; ++k) {
            // conj(ph) * z
            re += ph[k].real() * z[k].real() + ph[k].imag() * z[k].imag();
            im += ph[k].real() * z[k].imag() - ph[k].imag() * z[k].real();
          }
          dst[l] = {re, im};
        }
        continue;
      }
      std::fill(buf.begin(), buf.end(), cplx{});
      for (std::size_t k = 0; k < m; ++k) buf[static_cast<std::size_t>(band_[k])] = std::conj(pu[k]) * r[k];
      fft::backward(buf, time);
      std::copy(time.begin(), time.begin() + s_d_, dst);
    }
    return out;
  }

  /// ||A||^2 by power iteration.
  double norm_squared(int iterations = 50) const {
    CVec x(static_cast<std::size_t>(cols()));
    Rng rng(12345);
    for (auto& v : x) v = complex_gaussian(rng, 1.0);
    double lam = 0.0;
    for (int it = 0; it < iterations; ++it) {
      const double nx = std::sqrt(norm2(x));
      if (nx == 0.0) return 0.0;
      for (auto& v : x) v /= nx;
      x = adjoint(forward(x));
      lam = std::sqrt(norm2(x));
    }
    return lam;
  }

private:
  int n_;
  int s_d_;
  std::vector<int> band_;
  std::vector<CVec> p_;
  CVec tw_;
  CVec phase_;
  bool direct_adjoint_ = false;
  int direct_nnz_limit_ = 0;
};

/// Stacks per-transmitter taps into the U * s_d unknown (preamble-collided
/// transmitters superpose).
inline CVec stack_channels(std::span<const ActiveUser> tx, std::span<const ChannelRealization> channels,
                           int U, int s_d) {
  CVec h(static_cast<std::size_t>(U) * s_d);
  for (std::size_t i = 0; i < tx.size(); ++i)
    for (const auto& t : channels[i].taps) {
      if (t.delay >= s_d) throw DimensionError("stack_channels: delay beyond s_d");
      h[static_cast<std::size_t>(tx[i].preamble) * s_d + static_cast<std::size_t>(t.delay)] += t.gain;
    }
  return h;
}

inline std::vector<int> support_of(std::span<const cplx> x, double rel_tol = 0.0) {
  double peak = 0.0;
  for (const auto& v : x) peak = std::max(peak, std::abs(v));
  std::vector<int> out;
  if (peak == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) > rel_tol * peak) out.push_back(static_cast<int>(i));
  return out;
}

// ---------------------------------------------------------------------------
// Thresholding operators

namespace detail {

/// Indices of the `k` largest-magnitude entries, ties resolved towards lower index.
inline std::vector<int> top_k(std::span<const cplx> x, int k) {
  std::vector<int> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min<int>(k, static_cast<int>(idx.size()));
  auto cmp = [&](int a, int b) {
    const double ma = std::norm(x[static_cast<std::size_t>(a)]);
    const double mb = std::norm(x[static_cast<std::size_t>(b)]);
    return ma != mb ? ma > mb : a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), cmp);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace detail

/// Keeps the top-k1 entries inside each block of `block_len`, then the k2
/// blocks with the largest retained energy.
inline CVec hierarchical_threshold(std::span<const cplx> x, int block_len, int k2, int k1) {
  if (block_len <= 0 || x.size() % static_cast<std::size_t>(block_len) != 0)
    throw DimensionError("hierarchical_threshold: length not a multiple of block size");
  const int blocks = static_cast<int>(x.size()) / block_len;
  k1 = std::clamp(k1, 0, block_len);
  k2 = std::clamp(k2, 0, blocks);
  std::vector<std::vector<int>> kept(static_cast<std::size_t>(blocks));
  std::vector<double> energy(static_cast<std::size_t>(blocks), 0.0);
  for (int b = 0; b < blocks; ++b) {
    auto block = x.subspan(static_cast<std::size_t>(b) * block_len, static_cast<std::size_t>(block_len));
    kept[static_cast<std::size_t>(b)] = detail::top_k(block, k1);
    for (int i : kept[static_cast<std::size_t>(b)]) energy[static_cast<std::size_t>(b)] += std::norm(block[static_cast<std::size_t>(i)]);
  }
  std::vector<int> order(static_cast<std::size_t>(blocks));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k2, order.end(), [&](int a, int b) {
    const double ea = energy[static_cast<std::size_t>(a)];
    const double eb = energy[static_cast<std::size_t>(b)];
    return ea != eb ? ea > eb : a < b;
  });
  CVec out(x.size());
  for (int j = 0; j < k2; ++j) {
    const int b = order[static_cast<std::size_t>(j)];
    for (int i : kept[static_cast<std::size_t>(b)]) {
      const auto pos = static_cast<std::size_t>(b) * block_len + static_cast<std::size_t>(i);
      out[pos] = x[pos];
    }
  }
  return out;
}

inline CVec flat_threshold(std::span<const cplx> x, int k) {
  CVec out(x.size());
  for (int i : detail::top_k(x, k)) out[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
  return out;
}

// ---------------------------------------------------------------------------
// Solvers

struct TelemetryRow {
  int iteration = 0;
  double residual = 0.0;
  double objective = 0.0;
  double lambda = 0.0;
};

struct SolveResult {
  CVec h;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<TelemetryRow> telemetry;  // filled only when requested
};

/// Reported by solvers that hit their iteration cap; carries the final iterate.
class NonConvergence : public std::runtime_error {
public:
  NonConvergence(const std::string& what, SolveResult r)
      : std::runtime_error(what), result_(std::move(r)) {}
  const SolveResult& result() const { return result_; }

private:
  SolveResult result_;
};

inline double residual_norm(const MeasurementOperator& A, std::span<const cplx> h, std::span<const cplx> y) {
  const CVec Ah = A.forward(h);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::norm(Ah[i] - y[i]);
  return std::sqrt(s);
}

struct LeastSquaresOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

/// min ||A_T c - y|| over coefficients on support T by CGLS. Returns the full
/// stacked vector (zero off T).
inline CVec least_squares_on_support(const MeasurementOperator& A, std::span<const cplx> y,
                                     const std::vector<int>& support, LeastSquaresOptions opts = {}) {
  CVec out(static_cast<std::size_t>(A.cols()));
  if (support.empty()) return out;
  const auto m = static_cast<std::size_t>(A.rows());
  const std::size_t t = support.size();
  // Column readout of the operator restricted to T.
  std::vector<CVec> cols(t);
  for (std::size_t j = 0; j < t; ++j) cols[j] = A.column(support[j]);
  auto apply = [&](const CVec& c) {
    CVec r(m);
    for (std::size_t j = 0; j < t; ++j) {
      if (c[j] == cplx{}) continue;
      for (std::size_t i = 0; i < m; ++i) r[i] += cols[j][i] * c[j];
    }
    return r;
  };
  auto apply_adj = [&](const CVec& r) {
    CVec c(t);
    for (std::size_t j = 0; j < t; ++j) {
      cplx s{};
      for (std::size_t i = 0; i < m; ++i) s += std::conj(cols[j][i]) * r[i];
      c[j] = s;
    }
    return c;
  };
  CVec x(t);
  CVec r(y.begin(), y.end());
  CVec s = apply_adj(r);
  CVec p = s;
  double gamma = norm2(s);
  const double stop = opts.tol * std::sqrt(gamma);
  for (int it = 0; it < opts.max_iter && std::sqrt(gamma) > stop && gamma > 0.0; ++it) {
    const CVec q = apply(p);
    const double qq = norm2(q);
    if (qq == 0.0) break;
    const double step = gamma / qq;
    for (std::size_t j = 0; j < t; ++j) x[j] += step * p[j];
    for (std::size_t i = 0; i < m; ++i) r[i] -= step * q[i];
    s = apply_adj(r);
    const double gnew = norm2(s);
    const double beta = gnew / gamma;
    gamma = gnew;
    for (std::size_t j = 0; j < t; ++j) p[j] = s[j] + beta * p[j];
  }
  for (std::size_t j = 0; j < t; ++j) out[static_cast<std::size_t>(support[j])] = x[j];
  return out;
}

struct CosampOptions {
  int max_iter = 50;
  double tol = 1e-10;         // stop when ||r|| <= tol ||y||
  double epsilon = 0.0;       // or when ||r|| <= epsilon
  double stall_tol = 1e-6;    // relative residual improvement below which we stop
  bool refit_pruned = true;   // least squares again on the pruned support
  LeastSquaresOptions ls{};
  bool telemetry = false;
};

namespace detail {

template <typename Threshold, typename Expand>
SolveResult cosamp_skeleton(const MeasurementOperator& A, std::span<const cplx> y, const CosampOptions& opts,
                            Threshold prune, Expand expand) {
  SolveResult res;
  res.h.assign(static_cast<std::size_t>(A.cols()), cplx{});
  const double ynorm = std::sqrt(norm2(CVec(y.begin(), y.end())));
  res.residual = ynorm;
  if (ynorm == 0.0) {
    res.converged = true;
    return res;
  }
  const double target = std::max(opts.tol * ynorm, opts.epsilon);
  if (ynorm <= target) {
    res.converged = true;
    return res;
  }
  CVec r(y.begin(), y.end());
  for (int it = 1; it <= opts.max_iter; ++it) {
    const CVec proxy = A.adjoint(r);
    std::vector<int> T = support_of(expand(proxy));
    for (int i : support_of(res.h)) T.push_back(i);
    std::sort(T.begin(), T.end());
    T.erase(std::unique(T.begin(), T.end()), T.end());
    const CVec b = least_squares_on_support(A, y, T, opts.ls);
    CVec cand = prune(b);
    if (opts.refit_pruned) cand = least_squares_on_support(A, y, support_of(cand), opts.ls);
    const CVec Ax = A.forward(cand);
    CVec rnew(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) rnew[i] = y[i] - Ax[i];
    const double rn = std::sqrt(norm2(rnew));
    res.iterations = it;
    if (opts.telemetry) res.telemetry.push_back({it, rn, 0.0, 0.0});
    if (rn >= res.residual * (1.0 - opts.stall_tol)) {
      res.converged = true;  // stagnation: keep the better iterate
      break;
    }
    res.h = std::move(cand);
    r = std::move(rnew);
    res.residual = rn;
    if (rn <= target) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) throw NonConvergence("cosamp: iteration cap reached", res);
  // Debias on the final support.
  const auto S = support_of(res.h);
  if (!S.empty()) {
    CVec refit = least_squares_on_support(A, y, S, opts.ls);
    const double rr = residual_norm(A, refit, y);
    if (rr <= res.residual) {
      res.h = std::move(refit);
      res.residual = rr;
    }
  }
  return res;
}

}  // namespace detail

/// CoSaMP with hierarchical (k2 blocks, k1 taps each) support selection.
inline SolveResult hicosamp_solve(const MeasurementOperator& A, std::span<const cplx> y, int k2, int k1,
                                  const CosampOptions& opts = {}) {
  if (static_cast<int>(y.size()) != A.rows()) throw DimensionError("hicosamp: |y| != m");
  if (k1 <= 0 || k2 < 0) throw DimensionError("hicosamp: sparsity levels must be positive");
  if (static_cast<long long>(k1) * k2 > A.rows()) throw DimensionError("hicosamp: k1*k2 exceeds m");
  const int s_d = A.depth();
  if (k2 == 0) {
    SolveResult r;
    r.h.assign(static_cast<std::size_t>(A.cols()), cplx{});
    r.residual = std::sqrt(norm2(CVec(y.begin(), y.end())));
    r.converged = true;
    return r;
  }
  return detail::cosamp_skeleton(
      A, y, opts, [&](const CVec& b) { return hierarchical_threshold(b, s_d, k2, k1); },
      [&](const CVec& p) { return hierarchical_threshold(p, s_d, 2 * k2, 2 * k1); });
}

/// Classical CoSaMP with flat top-k selection; reference for the structured variant.
inline SolveResult cosamp_solve(const MeasurementOperator& A, std::span<const cplx> y, int k,
                                const CosampOptions& opts = {}) {
  if (static_cast<int>(y.size()) != A.rows()) throw DimensionError("cosamp: |y| != m");
  return detail::cosamp_skeleton(
      A, y, opts, [&](const CVec& b) { return flat_threshold(b, k); },
      [&](const CVec& p) { return flat_threshold(p, 2 * k); });
}

// ---------------------------------------------------------------------------
// BPDN: min ||h||_1 s.t. ||A h - y_B|| <= eps, via proximal gradient on
// 0.5||A h - y||^2 + lambda ||h||_1 with lambda tuned on the regularization path.

struct BpdnOptions {
  double tol_feas = 1e-2;      // accept |res - eps| <= tol_feas * eps
  int max_inner = 2000;        // proximal iterations per lambda
  double inner_tol = 1e-2;     // gradient-mapping norm relative to lambda
  int max_stages = 80;         // continuation stages
  double continuation = 0.2;   // lambda shrink factor per stage
  int max_bisect = 6;         // refinement steps towards the constraint boundary
  bool telemetry = false;
};

/// Complex soft threshold: shrinks magnitudes by tau, phase preserved.
inline cplx soft_threshold(cplx z, double tau) {
  const double a = std::abs(z);
  if (a <= tau) return {};
  return z * ((a - tau) / a);
}

inline double l1_norm(std::span<const cplx> x) {
  double s = 0.0;
  for (const auto& v : x) s += std::abs(v);
  return s;
}

struct ProxGradResult {
  CVec h;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> objective;  // per iteration, when requested
};

/// Monotone FISTA on 0.5||A h - y||^2 + lambda ||h||_1 from warm start x0.
/// Stops when the gradient-mapping norm L ||x_k - x_{k-1}|| falls below
/// rel_tol * lambda, on the cap, or as soon as the residual drops to
/// `stop_residual` (pass 0 to disable).
inline ProxGradResult prox_grad_solve(const MeasurementOperator& A, std::span<const cplx> y, double lambda,
                                      CVec x0, double lipschitz, int max_iter, double rel_tol,
                                      double stop_residual = 0.0, bool record = false) {
  const std::size_t N = static_cast<std::size_t>(A.cols());
  const std::size_t m = y.size();
  const double step = 1.0 / lipschitz;
  auto objective_of = [&](const CVec& h, const CVec& Ah, double* res) {
    double r2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) r2 += std::norm(Ah[i] - y[i]);
    if (res) *res = std::sqrt(r2);
    return 0.5 * r2 + lambda * l1_norm(h);
  };
  ProxGradResult out;
  CVec x = std::move(x0);
  if (x.size() != N) x.assign(N, cplx{});
  CVec Ax = A.forward(x);
  double fx = objective_of(x, Ax, &out.residual);
  CVec z = x, Az = Ax;
  double t = 1.0;
  for (int it = 1; it <= max_iter; ++it) {
    CVec g(m);
    for (std::size_t i = 0; i < m; ++i) g[i] = Az[i] - y[i];
    const CVec grad = A.adjoint(g);
    CVec cand(N);
    for (std::size_t j = 0; j < N; ++j) cand[j] = soft_threshold(z[j] - step * grad[j], step * lambda);
    const CVec Acand = A.forward(cand);
    double cres = 0.0;
    const double fc = objective_of(cand, Acand, &cres);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    CVec xprev = x;
    CVec Axprev = Ax;
    if (fc <= fx) {
      x = cand;
      Ax = Acand;
      fx = fc;
      out.residual = cres;
    }
    // z = x + (t/tn)(cand - x) + ((t-1)/tn)(x - xprev)
    for (std::size_t j = 0; j < N; ++j) z[j] = x[j] + (t / tn) * (cand[j] - x[j]) + ((t - 1.0) / tn) * (x[j] - xprev[j]);
    for (std::size_t i = 0; i < m; ++i)
      Az[i] = Ax[i] + (t / tn) * (Acand[i] - Ax[i]) + ((t - 1.0) / tn) * (Ax[i] - Axprev[i]);
    t = tn;
    out.iterations = it;
    if (record) out.objective.push_back(fx);
    double dx = 0.0;
    for (std::size_t j = 0; j < N; ++j) dx += std::norm(x[j] - xprev[j]);
    if (stop_residual > 0.0 && out.residual <= stop_residual) break;
    if (fc <= fx && lipschitz * std::sqrt(dx) <= std::max(rel_tol * lambda, 1e-13 * lipschitz * std::sqrt(norm2(x))))
      break;
  }
  out.h = std::move(x);
  return out;
}

inline SolveResult bpdn_solve(const MeasurementOperator& A, std::span<const cplx> y, double epsilon,
                              const BpdnOptions& opts = {}) {
  if (static_cast<int>(y.size()) != A.rows()) throw DimensionError("bpdn: |y| != m");
  if (!(epsilon >= 0.0)) throw DimensionError("bpdn: epsilon must be nonnegative");
  SolveResult res;
  res.h.assign(static_cast<std::size_t>(A.cols()), cplx{});
  const double ynorm = std::sqrt(norm2(CVec(y.begin(), y.end())));
  res.residual = ynorm;
  if (ynorm <= epsilon) {
    res.converged = true;
    return res;
  }
  const double L = 1.01 * A.norm_squared();
  double lam_hi = 0.0;
  for (const auto& v : A.adjoint(y)) lam_hi = std::max(lam_hi, std::abs(v));
  auto within = [&](double r) { return std::abs(r - epsilon) <= opts.tol_feas * epsilon || r < epsilon; };

  CVec warm = res.h;
  std::optional<double> lam_lo;
  CVec best;
  double best_res = ynorm;
  int total_iters = 0;
  double lam = lam_hi;
  for (int stage = 0; stage < opts.max_stages; ++stage) {
    lam *= opts.continuation;
    auto pg = prox_grad_solve(A, y, lam, warm, L, opts.max_inner, opts.inner_tol, epsilon);
    total_iters += pg.iterations;
    if (opts.telemetry) res.telemetry.push_back({total_iters, pg.residual, 0.0, lam});
    warm = pg.h;
    if (pg.residual <= epsilon) {
      lam_lo = lam;
      best = std::move(pg.h);
      best_res = pg.residual;
      break;
    }
    lam_hi = lam;
  }
  if (!lam_lo) {
    res.h = warm;
    res.iterations = total_iters;
    res.residual = residual_norm(A, warm, y);
    throw NonConvergence("bpdn: no feasible lambda found", res);
  }
  // Tighten towards the largest feasible lambda.
  for (int b = 0; b < opts.max_bisect && !(std::abs(best_res - epsilon) <= opts.tol_feas * epsilon); ++b) {
    const double mid = std::sqrt(*lam_lo * lam_hi);
    auto pg = prox_grad_solve(A, y, mid, best, L, opts.max_inner, opts.inner_tol);
    total_iters += pg.iterations;
    if (opts.telemetry) res.telemetry.push_back({total_iters, pg.residual, 0.0, mid});
    if (pg.residual <= epsilon) {
      lam_lo = mid;
      best = std::move(pg.h);
      best_res = pg.residual;
    } else {
      lam_hi = mid;
    }
  }
  res.h = std::move(best);
  res.residual = best_res;
  res.iterations = total_iters;
  res.converged = within(best_res);
  return res;
}

// ---------------------------------------------------------------------------
// Activity detection

inline std::vector<double> block_energies(std::span<const cplx> h, int s_d) {
  std::vector<double> out(h.size() / static_cast<std::size_t>(s_d), 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) out[i / static_cast<std::size_t>(s_d)] += std::norm(h[i]);
  return out;
}

inline ActivityEstimate detect_activity(CVec h_hat, int s_d, double xi) {
  if (!(xi >= 0.0)) throw DimensionError("detect_activity: threshold must be nonnegative");
  ActivityEstimate out;
  out.user_norms = block_energies(h_hat, s_d);
  out.h_hat = std::move(h_hat);
  out.threshold = xi;
  for (std::size_t u = 0; u < out.user_norms.size(); ++u)
    if (out.user_norms[u] > xi) out.detected.push_back(static_cast<int>(u));
  return out;
}

/// Runs the configured solver on a control measurement. Iteration-cap
/// failures fall back to the last iterate (counted by the caller via `converged`).
inline SolveResult run_control_solver(const CheckedConfig& cc, const MeasurementOperator& A,
                                      std::span<const cplx> y_b, bool telemetry = false) {
  const auto& cfg = cc.config();
  const double eps = cc.epsilon();
  try {
    if (cfg.solver == SolverKind::bpdn) {
      BpdnOptions bo;
      bo.telemetry = telemetry;
      return bpdn_solve(A, y_b, eps, bo);
    }
    CosampOptions opts;
    opts.epsilon = eps;
    opts.telemetry = telemetry;
    const int k2 = std::min(cfg.k2, A.users());
    if (static_cast<long long>(k2) * cfg.k1 > A.rows()) throw DimensionError("k1*k2 exceeds m");
    return hicosamp_solve(A, y_b, k2, cfg.k1, opts);
  } catch (const NonConvergence& e) {
    SolveResult r = e.result();
    r.converged = false;
    return r;
  }
}

/// Control-band observation of `tx` through `channels` plus CN(0, noise_var)
/// per subcarrier; equal in distribution to P_B W of the synthesized y.
inline CVec simulate_control(const CheckedConfig& cc, const MeasurementOperator& A, std::span<const ActiveUser> tx,
                             std::span<const ChannelRealization> channels, std::uint64_t noise_seed) {
  const CVec h = stack_channels(tx, channels, A.users(), A.depth());
  CVec y = A.forward(h);
  if (cc->noise_var > 0.0) {
    auto rng = make_rng(noise_seed, 0, 0, Stream::noise);
    for (auto& v : y) v += complex_gaussian(rng, cc->noise_var);
  }
  return y;
}

/// k distinct preambles out of U, uniformly.
inline std::vector<int> draw_distinct(int U, int k, Rng& rng) {
  std::vector<int> pool(static_cast<std::size_t>(U));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, U - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

struct DetectionTrial {
  std::vector<int> active;
  std::vector<double> norms;
  int solver_iterations = 0;
  bool converged = true;
};

inline DetectionTrial detection_trial(const CheckedConfig& cc, const PreambleSet& ps, const MeasurementOperator& A,
                                      std::uint64_t seed, std::uint64_t trial) {
  const auto& cfg = cc.config();
  auto rng = make_rng(seed, 0, trial, Stream::activity);
  DetectionTrial out;
  out.active = draw_distinct(cfg.U, cfg.k2, rng);
  std::vector<ActiveUser> tx;
  for (std::size_t i = 0; i < out.active.size(); ++i) tx.push_back({static_cast<int>(i), out.active[i]});
  const auto channels = gen_channels(cc, out.active, derive_seed(seed, 0, trial, Stream::channel));
  const CVec y = simulate_control(cc, A, tx, channels, derive_seed(seed, 0, trial, Stream::noise));
  (void)ps;
  const auto sol = run_control_solver(cc, A, y);
  out.norms = block_energies(sol.h, A.depth());
  out.solver_iterations = sol.iterations;
  out.converged = sol.converged;
  return out;
}

/// Threshold xi such that the per-user false-alarm rate over `trials`
/// noise-plus-interference trials is at most target_pfa.
inline double calibrate_threshold(const CheckedConfig& cc, double target_pfa, int trials, std::uint64_t seed,
                                  unsigned workers = 1) {
  const auto& cfg = cc.config();
  if (trials < 1) throw std::invalid_argument("calibrate_threshold: trials must be >= 1");
  const std::size_t samples = static_cast<std::size_t>(trials) * static_cast<std::size_t>(cfg.U - cfg.k2);
  if (samples == 0 || target_pfa * static_cast<double>(samples) < 1.0)
    throw std::domain_error("calibrate_threshold: target_pfa below resolution 1/(trials*(U-k2))");
  const auto ps = gen_preamble_set(cc, cfg.master_seed);
  const MeasurementOperator A(ps, cfg.s_d);
  std::vector<std::vector<double>> per_trial(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), workers, [&](std::size_t t) {
    const auto tr = detection_trial(cc, ps, A, seed, t);
    std::vector<char> on(static_cast<std::size_t>(cfg.U), 0);
    for (int u : tr.active) on[static_cast<std::size_t>(u)] = 1;
    for (int u = 0; u < cfg.U; ++u)
      if (!on[static_cast<std::size_t>(u)]) per_trial[t].push_back(tr.norms[static_cast<std::size_t>(u)]);
  });
  std::vector<double> all;
  all.reserve(samples);
  for (const auto& v : per_trial) all.insert(all.end(), v.begin(), v.end());
  std::sort(all.begin(), all.end(), std::greater<>());
  const auto allowed = static_cast<std::size_t>(std::floor(target_pfa * static_cast<double>(all.size())));
  return all[std::min(allowed, all.size() - 1)];
}

struct DetectionRates {
  double pmd = 0.0;
  double pfa = 0.0;
  Interval pmd_ci;
  Interval pfa_ci;
  std::size_t missed = 0;
  std::size_t active_total = 0;
  std::size_t false_alarms = 0;
  std::size_t inactive_total = 0;
  double mean_solver_iterations = 0.0;
  std::size_t non_converged = 0;
};

inline DetectionRates estimate_pmd_pfa(const CheckedConfig& cc, double xi, int trials, std::uint64_t seed,
                                       unsigned workers = 1) {
  const auto& cfg = cc.config();
  if (trials < 1) throw std::invalid_argument("estimate_pmd_pfa: trials must be >= 1");
  const auto ps = gen_preamble_set(cc, cfg.master_seed);
  const MeasurementOperator A(ps, cfg.s_d);
  std::vector<DetectionTrial> results(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), workers,
               [&](std::size_t t) { results[t] = detection_trial(cc, ps, A, seed, t); });
  DetectionRates r;
  double iters = 0.0;
  for (const auto& tr : results) {
    std::vector<char> on(static_cast<std::size_t>(cfg.U), 0);
    for (int u : tr.active) on[static_cast<std::size_t>(u)] = 1;
    for (int u = 0; u < cfg.U; ++u) {
      const bool hit = tr.norms[static_cast<std::size_t>(u)] > xi;
      if (on[static_cast<std::size_t>(u)]) {
        ++r.active_total;
        r.missed += !hit;
      } else {
        ++r.inactive_total;
        r.false_alarms += hit;
      }
    }
    iters += tr.solver_iterations;
    r.non_converged += !tr.converged;
  }
  r.pmd = r.active_total ? static_cast<double>(r.missed) / static_cast<double>(r.active_total) : 0.0;
  r.pfa = r.inactive_total ? static_cast<double>(r.false_alarms) / static_cast<double>(r.inactive_total) : 0.0;
  r.pmd_ci = wilson_interval(r.missed, r.active_total);
  r.pfa_ci = wilson_interval(r.false_alarms, r.inactive_total);
  r.mean_solver_iterations = iters / trials;
  return r;
}

}  // namespace ccra
