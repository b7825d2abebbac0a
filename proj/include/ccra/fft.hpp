#pragma once

// Thin FFTW3 wrapper. Plans are created once per (n, direction) and executed
// with the new-array interface, which is thread safe.

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <span>
#include <utility>

#include "ccra/common.hpp"

namespace ccra::fft {

namespace detail {

inline fftw_plan plan_for(int n, int sign) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, fftw_plan> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(n, sign);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  CVec a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
  fftw_plan p = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(a.data()),
                                 reinterpret_cast<fftw_complex*>(b.data()), sign,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(key, p);
  return p;
}

inline void execute(std::span<const cplx> in, std::span<cplx> out, int sign) {
  if (in.size() != out.size()) throw DimensionError("fft: size mismatch");
  if (in.empty()) return;
  const int n = static_cast<int>(in.size());
  if (in.data() == out.data()) {
    CVec tmp(in.begin(), in.end());
    fftw_execute_dft(plan_for(n, sign), reinterpret_cast<fftw_complex*>(tmp.data()),
                     reinterpret_cast<fftw_complex*>(out.data()));
    return;
  }
  // Out-of-place complex DFTs leave the input untouched.
  fftw_execute_dft(plan_for(n, sign),
                   reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in.data())),
                   reinterpret_cast<fftw_complex*>(out.data()));
}

}  // namespace detail

/// out_f = sum_t in_t e^{-i 2 pi f t / n}
inline void forward(std::span<const cplx> in, std::span<cplx> out) {
  detail::execute(in, out, FFTW_FORWARD);
}

/// out_t = sum_f in_f e^{+i 2 pi f t / n}
inline void backward(std::span<const cplx> in, std::span<cplx> out) {
  detail::execute(in, out, FFTW_BACKWARD);
}

/// W x with W unitary.
inline CVec unitary_forward(std::span<const cplx> x) {
  CVec out(x.size());
  forward(x, out);
  const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : out) v *= s;
  return out;
}

/// W^* x.
inline CVec unitary_inverse(std::span<const cplx> x) {
  CVec out(x.size());
  backward(x, out);
  const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : out) v *= s;
  return out;
}

}  // namespace ccra::fft
