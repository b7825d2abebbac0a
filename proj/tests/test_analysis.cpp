#include <gtest/gtest.h>

#include "ccra/analysis.hpp"

using namespace ccra;

namespace {

// Classical IRSA recursion without capture: p = 1 - omega(1 - q), q = lambda(p),
// with omega(x) = sum_j omega_j x^(j-1) and lambda(x) = sum_k lambda_k x^(k-1).
std::vector<double> classical_p(const std::vector<double>& omega, const std::vector<double>& lambda, int iters) {
  auto poly = [](const std::vector<double>& c, double x) {
    double s = 0.0;
    for (std::size_t k = c.size(); k-- > 1;) s = s * x + c[k];
    return s;
  };
  std::vector<double> out;
  double q = 1.0;
  for (int i = 0; i < iters; ++i) {
    const double p = 1.0 - poly(omega, 1.0 - q);
    out.push_back(p);
    q = poly(lambda, p);
  }
  return out;
}

std::vector<double> random_dist(Rng& g, int max_deg, bool allow_one) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> d(static_cast<std::size_t>(max_deg) + 1, 0.0);
  double s = 0.0;
  for (int k = allow_one ? 1 : 2; k <= max_deg; ++k) {
    d[static_cast<std::size_t>(k)] = u(g) < 0.6 ? u(g) : 0.0;
    s += d[static_cast<std::size_t>(k)];
  }
  if (s == 0.0) {
    d[static_cast<std::size_t>(max_deg)] = 1.0;
    s = 1.0;
  }
  for (auto& v : d) v /= s;
  return d;
}

DegreeDistribution regular3() { return DegreeDistribution::regular(3); }

}  // namespace

TEST(Distributions, EdgeNodeConversions) {
  const auto lambda = edge_from_node(regular3());
  EXPECT_DOUBLE_EQ(lambda[3], 1.0);
  DegreeDistribution mixed;
  mixed.coeff = {0.0, 0.0, 0.5, 0.5};
  const auto l2 = edge_from_node(mixed);
  EXPECT_NEAR(l2[2], 2 * 0.5 / 2.5, 1e-15);
  EXPECT_NEAR(l2[3], 3 * 0.5 / 2.5, 1e-15);
  const auto back = node_from_edge(l2);
  for (std::size_t k = 0; k < mixed.coeff.size(); ++k) EXPECT_NEAR(back.coeff[k], mixed.coeff[k], 1e-15);
}

TEST(Distributions, SlotEdgeDistSumsToOne) {
  for (double G : {0.1, 0.5, 1.0, 1.5}) {
    const auto omega = slot_edge_dist(G, regular3());
    double s = 0.0, mean_minus_one = 0.0;
    for (std::size_t j = 0; j < omega.size(); ++j) {
      s += omega[j];
      if (j) mean_minus_one += omega[j] * static_cast<double>(j - 1);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(omega[0], 0.0);
    // Size-biased Poisson: the other-edge count is Poisson with the same mean.
    EXPECT_NEAR(mean_minus_one, 3.0 * G, 1e-9);
  }
  EXPECT_THROW(slot_edge_dist(0.0, regular3()), std::domain_error);
}

TEST(Distributions, PoissonTruncationFoldsTail) {
  const auto psi = poisson_pmf(2.0, 5);
  double s = 0.0;
  for (double v : psi) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_NEAR(psi[2], 2.0 * std::exp(-2.0), 1e-15);
  EXPECT_EQ(poisson_truncation(0.5, regular3()), 50);
  EXPECT_EQ(poisson_truncation(3.0, regular3()), 90);
}

TEST(CaptureTableTest, LookupAndExtension) {
  auto c = CaptureTable::singleton_only(3);
  EXPECT_EQ(c(0, 1), 1.0);
  EXPECT_EQ(c(0, 2), 0.0);
  EXPECT_EQ(c(2, 3), 1.0);
  EXPECT_EQ(c(9, 10), 1.0);  // no interferer left
  EXPECT_EQ(c(0, 10), 0.0);
  EXPECT_THROW(c(3, 3), std::out_of_range);
  EXPECT_THROW(c.set(0, 4, 0.5), std::out_of_range);
  EXPECT_THROW(c.set(0, 1, 1.5), std::invalid_argument);
}

TEST(CaptureTableTest, MonotonizePools) {
  CaptureTable c(3);
  c.set(0, 3, 0.6);
  c.set(1, 3, 0.2);
  c.set(2, 3, 0.9);
  c.set(0, 2, 0.1);
  c.set(1, 2, 0.5);
  EXPECT_FALSE(c.is_monotone());
  EXPECT_EQ(c.monotonize(), 1);
  EXPECT_NEAR(c(0, 3), 0.4, 1e-15);
  EXPECT_NEAR(c(1, 3), 0.4, 1e-15);
  EXPECT_NEAR(c(2, 3), 0.9, 1e-15);
  EXPECT_NEAR(c(1, 2), 0.5, 1e-15);
  EXPECT_TRUE(c.is_monotone());
  EXPECT_EQ(c.monotonize(), 0);
}

TEST(CaptureTableTest, CsvRoundTrip) {
  CaptureTable c(4);
  for (int j = 1; j <= 4; ++j)
    for (int t = 0; t < j; ++t) c.set(t, j, 0.1 * t + 0.05 * j);
  const auto back = CaptureTable::from_csv("# comment\n" + c.to_csv());
  for (int j = 1; j <= 4; ++j)
    for (int t = 0; t < j; ++t) EXPECT_DOUBLE_EQ(back(t, j), c(t, j));
  EXPECT_THROW(CaptureTable::from_csv("1,0\n"), std::invalid_argument);
}

TEST(DensityEvolution, SingletonTableReducesToClassicalRecursion) {
  Rng g(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto omega = random_dist(g, 8, true);
    const auto lambda = random_dist(g, 6, false);
    DeOptions o;
    o.max_iter = 60;
    o.tol = 0.0;
    const auto r = and_or_tree(omega, lambda, CaptureTable::singleton_only(8), o);
    const auto ref = classical_p(omega, lambda, 60);
    ASSERT_EQ(r.p.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(r.p[i], ref[i], 1e-12);
  }
}

TEST(DensityEvolution, PerfectCaptureResolvesEverything) {
  const auto omega = slot_edge_dist(1.2, regular3());
  const auto r = and_or_tree(omega, edge_from_node(regular3()), CaptureTable::all_ones(static_cast<int>(omega.size())));
  EXPECT_EQ(r.p.front(), 0.0);
  EXPECT_EQ(r.q[1], 0.0);
  EXPECT_EQ(r.pd_node, 1.0);
}

TEST(DensityEvolution, DegreeOneSlotsAlwaysDecode) {
  const std::vector<double> omega{0.0, 1.0};
  const std::vector<double> lambda{0.0, 0.0, 1.0};
  const auto r = and_or_tree(omega, lambda, CaptureTable::singleton_only(1));
  EXPECT_EQ(r.p_inf, 0.0);
}

TEST(DensityEvolution, RegularThreeThreshold) {
  const auto pi = CaptureTable::singleton_only(poisson_truncation(2.0, regular3()));
  EXPECT_GE(and_or_tree_at_load(0.5, regular3(), pi).pd_node, 1.0 - 1e-3);
  EXPECT_LT(and_or_tree_at_load(1.0, regular3(), pi).pd_node, 0.9);
  const double th = de_threshold(regular3(), pi);
  EXPECT_GT(th, 0.75);
  EXPECT_LT(th, 0.90);
}

TEST(DensityEvolution, ZeroLoadAndMonotoneIterates) {
  const auto pi = CaptureTable::singleton_only(50);
  EXPECT_EQ(and_or_tree_at_load(0.0, regular3(), pi).pd_node, 1.0);
  for (double G : {0.3, 0.8, 0.9, 1.1}) {
    const auto r = and_or_tree_at_load(G, regular3(), pi);
    EXPECT_TRUE(r.converged);
    EXPECT_TRUE(r.monotone);
    for (std::size_t i = 1; i < r.q.size(); ++i) EXPECT_LE(r.q[i], r.q[i - 1] + 1e-14);
  }
}

TEST(DensityEvolution, StrictFormDiffersFromConsistentForm) {
  const auto pi = CaptureTable::singleton_only(50);
  DeOptions strict;
  strict.strict_paper = true;
  const auto a = and_or_tree_at_load(0.5, regular3(), pi);
  const auto b = and_or_tree_at_load(0.5, regular3(), pi, strict);
  EXPECT_GT(std::abs(a.pd_node - b.pd_node), 1e-3);
}

TEST(RateBounds, C1Values) {
  EXPECT_DOUBLE_EQ(c1_of_delta(0.0), 4.0);
  EXPECT_NEAR(c1_of_delta(0.2), 4.0 * std::sqrt(1.2) / (1.0 - 0.2 - 0.2 * std::sqrt(2.0)), 1e-12);
  EXPECT_NEAR(c1_of_delta(0.2), 8.4729, 1e-4);
  EXPECT_THROW(c1_of_delta(0.5), std::domain_error);
  double prev = 0.0;
  for (double d = 0.0; d < 0.41; d += 0.05) {
    EXPECT_GT(c1_of_delta(d), prev);
    prev = c1_of_delta(d);
  }
}

TEST(RateBounds, EndpointsAndOrdering) {
  RateBoundInputs in;
  in.e_log = 5.0;
  in.alpha = 1.0;
  EXPECT_EQ(rate_bound_singleton(in) - in.e_log, 0.0);
  in.colliders = 3;
  EXPECT_EQ(rate_bound_collision(in) - in.e_log, 0.0);
  in.alpha = 0.0;
  EXPECT_EQ(rate_bound_singleton(in), -std::numeric_limits<double>::infinity());
  for (double a = 0.05; a < 1.0; a += 0.05) {
    in.alpha = a;
    double prev = rate_bound_singleton(in);
    for (int c : {1, 2, 4}) {
      in.colliders = c;
      const double r = rate_bound_collision(in);
      EXPECT_LE(r, prev);
      prev = r;
    }
    in.colliders = 0;
    RateBoundInputs more_users = in;
    more_users.k2 *= 2;
    EXPECT_GE(rate_bound_singleton(more_users), rate_bound_singleton(in));
  }
  in.noise_var = 0.0;
  EXPECT_THROW(rate_bound_singleton(in), std::domain_error);
}

TEST(RateBounds, InteriorMaximumAtFullScale) {
  SystemConfig cfg;
  cfg.delta_2k = 0.2;
  int best = -1;
  double best_r = -1e9;
  std::vector<double> alphas;
  for (int i = 1; i <= 20; ++i) alphas.push_back(0.05 * i);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    cfg.alpha = std::min(alphas[i], 1.0);
    const auto cc = validate(cfg);
    const auto lt = expected_log_term(cc, 0.0, 100, 1);
    RateBoundInputs in;
    in.alpha = cfg.alpha;
    in.delta_2k = 0.2;
    in.e_log = lt.conditional;
    const double r = rate_bound_singleton(in);
    if (r > best_r) {
      best_r = r;
      best = static_cast<int>(i);
    }
  }
  EXPECT_GT(best, 0);
  EXPECT_LT(best, 19);
  EXPECT_GT(best_r, 0.0);
}

TEST(LogTerm, SingleTapMatchesQuadrature) {
  SystemConfig cfg;
  cfg.n = 64;
  cfg.control_band = centered_band(64, 16);
  cfg.s_cp = 8;
  cfg.s_d = 4;
  cfg.k1 = 1;
  cfg.num_data_slots = 4;
  cfg.alpha = 0.2;
  cfg.noise_var = 0.1;
  const auto cc = validate(cfg);
  const auto lt = expected_log_term(cc, 0.0, 40000, 3);
  EXPECT_EQ(lt.acceptance, 1.0);
  // |H_f|^2 is Exp(1) for a single CN(0,1) tap.
  const double c = (1.0 - cfg.alpha) / cfg.noise_var;
  double quad = 0.0;
  const int N = 400000;
  const double hi = 60.0, dx = hi / N;
  for (int i = 0; i < N; ++i) {
    const double x = (i + 0.5) * dx;
    quad += std::log2(1.0 + c * x) * std::exp(-x) * dx;
  }
  EXPECT_NEAR(lt.conditional / quad, 1.0, 0.01);
}

TEST(LogTerm, ConditioningAndLimits) {
  SystemConfig cfg;
  cfg.n = 256;
  cfg.control_band = centered_band(256, 32);
  cfg.s_cp = 32;
  cfg.s_d = 16;
  cfg.k1 = 2;
  cfg.num_data_slots = 4;
  auto cc = validate(cfg);
  const auto loose = expected_log_term(cc, 0.0, 2000, 1);
  const auto strict = expected_log_term(cc, 1.0, 2000, 1);
  EXPECT_LT(strict.acceptance, loose.acceptance);
  EXPECT_GE(strict.conditional, loose.conditional);
  EXPECT_NEAR(strict.value, strict.conditional * strict.acceptance, 1e-12);
  EXPECT_THROW(expected_log_term(cc, 1e6, 100, 1), std::domain_error);
  cfg.noise_var = 1e8;
  EXPECT_LT(expected_log_term(validate(cfg), 0.0, 100, 1).conditional, 1e-6);
}

TEST(Reference, RayleighBpsk) {
  EXPECT_EQ(rayleigh_bpsk_ser(0.0), 0.5);
  EXPECT_EQ(rayleigh_bpsk_ser(std::numeric_limits<double>::infinity()), 0.0);
  EXPECT_NEAR(rayleigh_bpsk_ser(99.0), (1.0 - std::sqrt(0.99)) / 2.0, 1e-15);
  EXPECT_NEAR(rayleigh_bpsk_ser(99.0), 2.5063e-3, 1e-7);
  EXPECT_THROW(rayleigh_bpsk_ser(-1.0), std::domain_error);
}

TEST(CaptureFromPhy, SingletonsDecodeAndCollisionsHurt) {
  SystemConfig cfg;
  cfg.n = 2048;
  cfg.control_band = comb_band(2048, 280);
  cfg.s_cp = 250;
  cfg.s_d = 25;
  cfg.k1 = 4;
  cfg.U = 50;
  cfg.k2 = 5;
  cfg.xi = 0.05;
  const auto est = capture_table_from_phy(validate(cfg), 4, 40, 9);
  EXPECT_GE(est.table(0, 1), 0.9);
  EXPECT_TRUE(est.table.is_monotone());
  for (int j = 2; j <= 4; ++j) EXPECT_LE(est.table(0, j), est.table(0, j - 1) + 0.1);
  EXPECT_GE(est.table(3, 4), 0.9);
}
