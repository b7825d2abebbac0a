#pragma once

#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccra {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Raised for any violated configuration invariant; `field()` names it.
class ConfigError : public std::invalid_argument {
public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

/// Dimension or domain violations on numerical entry points.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

inline double norm2(const CVec& v) {
  double s = 0.0;
  for (const auto& x : v) s += std::norm(x);
  return s;
}

inline cplx inner(const CVec& a, const CVec& b) {
  // <a, b> = sum conj(a) b
  cplx s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

}  // namespace ccra
