#pragma once

// Domain types shared by the signal, recovery, phy and mac layers.

#include <cstdint>
#include <vector>

#include "ccra/common.hpp"
#include "ccra/config.hpp"
#include "ccra/seed.hpp"

namespace ccra {

struct Tap {
  int delay = 0;
  cplx gain{};
};

/// Sparse channel impulse response of one user: taps at distinct delays in [0, s_d).
struct ChannelRealization {
  int user_id = 0;
  std::vector<Tap> taps;

  double energy() const {
    double s = 0.0;
    for (const auto& t : taps) s += std::norm(t.gain);
    return s;
  }
};

/// Slots (ascending, distinct) carrying one user's replicas.
struct ReplicaPattern {
  int degree = 0;
  std::vector<int> slots;
};

/// A transmitting device and the preamble it picked.
struct ActiveUser {
  int device = 0;
  int preamble = 0;
};

/// Output of the activity detector.
struct ActivityEstimate {
  CVec h_hat;                      // stacked, length U * s_d
  std::vector<double> user_norms;  // ||h_hat_u||^2
  std::vector<int> detected;       // ascending user indices with norm > threshold
  double threshold = 0.0;
};

}  // namespace ccra
