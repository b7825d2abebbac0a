#include <gtest/gtest.h>

#include <deque>

#include "ccra/mac.hpp"

using namespace ccra;

namespace {

SlotGraph graph_of(int slots, const std::vector<std::vector<int>>& user_slots) {
  std::vector<ActiveUser> tx;
  std::vector<ReplicaPattern> pats;
  for (std::size_t i = 0; i < user_slots.size(); ++i) {
    tx.push_back({static_cast<int>(i), static_cast<int>(i)});
    pats.push_back({static_cast<int>(user_slots[i].size()), user_slots[i]});
  }
  return build_graph(slots, tx, pats);
}

// Textbook peeling with a queue of singleton slots.
std::vector<char> oracle_peel(const SlotGraph& g) {
  std::vector<std::set<int>> live(static_cast<std::size_t>(g.num_slots));
  for (std::size_t u = 0; u < g.users.size(); ++u)
    for (int b : g.users[u].slots) live[static_cast<std::size_t>(b)].insert(static_cast<int>(u));
  std::vector<char> done(g.users.size(), 0);
  std::deque<int> queue;
  for (int b = 0; b < g.num_slots; ++b) queue.push_back(b);
  while (!queue.empty()) {
    const int b = queue.front();
    queue.pop_front();
    auto& s = live[static_cast<std::size_t>(b)];
    if (s.size() != 1) continue;
    const int u = *s.begin();
    if (g.users[static_cast<std::size_t>(u)].preamble_collided || done[static_cast<std::size_t>(u)]) continue;
    done[static_cast<std::size_t>(u)] = 1;
    for (int c : g.users[static_cast<std::size_t>(u)].slots) {
      live[static_cast<std::size_t>(c)].erase(u);
      queue.push_back(c);
    }
  }
  return done;
}

SystemConfig abstract_config(int slots, double G) {
  SystemConfig cfg;
  cfg.num_data_slots = slots;
  cfg.U = std::max(1, static_cast<int>(std::lround(G * slots)));
  cfg.k2 = cfg.U;
  cfg.preamble_selection = PreambleSelection::distinct;
  return cfg;
}

SystemConfig phy_config() {
  SystemConfig cfg;
  cfg.n = 2048;
  cfg.control_band = comb_band(2048, 280);
  cfg.s_cp = 250;
  cfg.s_d = 25;
  cfg.k1 = 4;
  cfg.U = 50;
  cfg.k2 = 5;
  cfg.noise_var = 0.001;
  cfg.xi = 0.05;
  cfg.preamble_selection = PreambleSelection::distinct;
  return cfg;
}

}  // namespace

TEST(Graph, EdgesAndDegrees) {
  const auto g = graph_of(5, {{0, 2, 4}});
  EXPECT_EQ(g.edges(), 3u);
  EXPECT_EQ(g.slot_degree(2), 1);
  EXPECT_EQ(g.slot_degree(1), 0);
  EXPECT_THROW(graph_of(3, {{0, 5}}), DimensionError);
}

TEST(Graph, SharedPreambleIsFlagged) {
  const std::vector<ActiveUser> tx{{0, 7}, {1, 7}, {2, 3}};
  const std::vector<ReplicaPattern> pats{{2, {0, 1}}, {2, {0, 1}}, {1, {2}}};
  const auto g = build_graph(3, tx, pats);
  EXPECT_TRUE(g.users[0].preamble_collided);
  EXPECT_TRUE(g.users[1].preamble_collided);
  EXPECT_FALSE(g.users[2].preamble_collided);
}

TEST(Graph, MeanSlotDegree) {
  const auto cc = validate(abstract_config(1000, 1.0));
  const auto ps = gen_preamble_set(cc, 3);
  std::vector<ActiveUser> tx;
  for (int i = 0; i < 1000; ++i) tx.push_back({i, i});
  const auto g = build_graph(cc, tx, ps);
  EXPECT_EQ(g.edges(), 3000u);
  double mean = 0.0;
  for (int b = 0; b < 1000; ++b) mean += g.slot_degree(b);
  EXPECT_NEAR(mean / 1000.0, 3.0, 1e-12);
}

TEST(Sic, FourUserTopology) {
  // A:{1,2} B:{2} C:{2,3} D:{3,4} in 1-based slots.
  const auto g = graph_of(4, {{0, 1}, {1}, {1, 2}, {2, 3}});
  const auto tr = peel(g);
  EXPECT_EQ(tr.round_of, (std::vector<int>{1, 3, 2, 1}));
  EXPECT_EQ(tr.rounds, 3);
  for (const auto& inc : tr.incident) EXPECT_TRUE(inc.empty());
}

TEST(Sic, StoppingSetStaysUnresolved) {
  const auto g = graph_of(2, {{0, 1}, {0, 1}});
  const auto tr = peel(g);
  EXPECT_EQ(tr.round_of, (std::vector<int>{-1, -1}));
  EXPECT_EQ(tr.rounds, 0);
  EXPECT_EQ(tr.incident[0].size(), 2u);
}

TEST(Sic, EmptyGraph) {
  const auto tr = peel(graph_of(4, {}));
  EXPECT_EQ(tr.rounds, 0);
  EXPECT_TRUE(tr.round_of.empty());
}

TEST(Sic, MatchesQueuePeelingOnRandomGraphs) {
  Rng g(12);
  for (int t = 0; t < 200; ++t) {
    const int slots = 30;
    const int users = std::uniform_int_distribution<int>(1, 40)(g);
    std::vector<std::vector<int>> us;
    for (int u = 0; u < users; ++u) {
      std::vector<int> pool(slots);
      std::iota(pool.begin(), pool.end(), 0);
      std::shuffle(pool.begin(), pool.end(), g);
      const int d = std::uniform_int_distribution<int>(1, 4)(g);
      pool.resize(static_cast<std::size_t>(d));
      std::sort(pool.begin(), pool.end());
      us.push_back(pool);
    }
    const auto gr = graph_of(slots, us);
    const auto tr = peel(gr);
    const auto ref = oracle_peel(gr);
    for (std::size_t u = 0; u < us.size(); ++u) EXPECT_EQ(tr.round_of[u] != -1, static_cast<bool>(ref[u]));
  }
}

TEST(Throughput, Identities) {
  FrameResult f;
  f.num_slots = 4;
  f.users.resize(3);
  f.users[0].decoded = true;
  f.users[1].cause = LossCause::undecodable;
  f.users[2].cause = LossCause::preamble_collision;
  EXPECT_DOUBLE_EQ(f.throughput(), 0.25);
  const std::vector<FrameResult> frames{f, f};
  const auto s = throughput(frames);
  EXPECT_EQ(s.active, 6u);
  EXPECT_EQ(s.decoded, 2u);
  EXPECT_NEAR(s.p_loss, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(s.causes.at(LossCause::undecodable), 2u);
  EXPECT_THROW(throughput(std::span<const FrameResult>{}), std::invalid_argument);
}

TEST(Abstract, EmptyFrame) {
  auto cfg = abstract_config(40, 0.5);
  cfg.k2 = 0;
  const auto r = run_frame_abstract(validate(cfg), 0, 0);
  EXPECT_EQ(r.active(), 0u);
  EXPECT_EQ(r.throughput(), 0.0);
  EXPECT_EQ(r.iterations, 0);
}

TEST(Abstract, AgreesWithIndependentPeeling) {
  const auto cc = validate(abstract_config(100, 0.8));
  const auto& cfg = cc.config();
  for (std::uint64_t t = 0; t < 30; ++t) {
    const auto r = run_frame_abstract(cc, 4, t);
    auto rng = make_rng(cfg.master_seed, 4, t, Stream::preamble_choice);
    const auto pre = detail::choose_preambles(cfg, cfg.k2, rng);
    const auto pseed = derive_seed(cfg.master_seed, 4, t, Stream::replica_pattern);
    std::vector<ActiveUser> tx;
    std::vector<ReplicaPattern> pats;
    for (int i = 0; i < cfg.k2; ++i) {
      tx.push_back({i, pre[static_cast<std::size_t>(i)]});
      pats.push_back(replica_pattern(cc, pre[static_cast<std::size_t>(i)], pseed));
    }
    const auto ref = oracle_peel(build_graph(cfg.num_data_slots, tx, pats));
    for (std::size_t u = 0; u < ref.size(); ++u) EXPECT_EQ(r.users[u].decoded, static_cast<bool>(ref[u]));
  }
}

TEST(Abstract, LowLoadRecoversNearlyAll) {
  const auto cc = validate(abstract_config(2000, 0.5));
  std::vector<FrameResult> frames;
  for (std::uint64_t t = 0; t < 10; ++t) frames.push_back(run_frame_abstract(cc, 0, t));
  EXPECT_LE(throughput(frames).p_loss, 1e-2);
}

TEST(Abstract, OverloadLosesMany) {
  const auto cc = validate(abstract_config(2000, 0.95));
  std::vector<FrameResult> frames;
  for (std::uint64_t t = 0; t < 10; ++t) frames.push_back(run_frame_abstract(cc, 0, t));
  EXPECT_GE(throughput(frames).p_loss, 0.1);
}

TEST(Abstract, FramesAreDeterministic) {
  const auto cc = validate(abstract_config(200, 0.7));
  const auto a = to_json(run_frame_abstract(cc, 1, 2));
  const auto b = to_json(run_frame_abstract(cc, 1, 2));
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Abstract, DecodedNeverExceedsActiveAndCausesPartition) {
  auto cfg = abstract_config(50, 0.9);
  cfg.preamble_selection = PreambleSelection::random;
  cfg.U = 60;
  const auto cc = validate(cfg);
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto r = run_frame_abstract(cc, 0, t);
    EXPECT_LE(r.decoded(), r.active());
    EXPECT_EQ(r.decoded() + r.lost(LossCause::preamble_collision) + r.lost(LossCause::undecodable), r.active());
  }
}

TEST(Abstract, CaptureOnlyHelps) {
  auto cfg = abstract_config(100, 0.9);
  const auto base = validate(cfg);
  cfg.abstract_capture = AbstractCapture::table;
  const auto with_table = validate(cfg);
  const auto ones = CaptureTable::all_ones(40);
  std::size_t a = 0, b = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    a += run_frame_abstract(base, 0, t).decoded();
    b += run_frame_abstract(with_table, 0, t, &ones).decoded();
  }
  EXPECT_GE(b, a);
  EXPECT_THROW(run_frame_abstract(with_table, 0, 0), std::invalid_argument);
}

TEST(Abstract, SinrCaptureWithPerfectCancellation) {
  auto cfg = abstract_config(100, 0.5);
  cfg.abstract_capture = AbstractCapture::sinr;
  cfg.gamma_cap_db = 3.0;
  const auto cc = validate(cfg);
  const auto r = run_frame_abstract(cc, 0, 0);
  EXPECT_GT(r.decoded(), r.active() / 2);
}

TEST(Phy, JsonRoundTrip) {
  const PhyContext ctx(validate(phy_config()));
  const auto r = run_frame_phy(ctx, 0, 0);
  const auto j = nlohmann::json::parse(to_json(r).dump());
  EXPECT_EQ(j["users"].size(), r.active());
  EXPECT_EQ(j["iterations"].get<int>(), r.iterations);
  EXPECT_DOUBLE_EQ(j["throughput"].get<double>(), r.throughput());
}

TEST(Phy, AgreesWithAbstractPeelingOnMatchedGraphs) {
  const PhyContext ctx(validate(phy_config()));
  const auto& cfg = ctx.cc.config();
  int agree = 0;
  const int trials = 60;
  for (int t = 0; t < trials; ++t) {
    const auto r = run_frame_phy(ctx, 0, static_cast<std::uint64_t>(t));
    auto rng = make_rng(cfg.master_seed, 0, static_cast<std::uint64_t>(t), Stream::preamble_choice);
    const auto pre = detail::choose_preambles(cfg, cfg.k2, rng);
    std::vector<ActiveUser> tx;
    for (int i = 0; i < cfg.k2; ++i) tx.push_back({i, pre[static_cast<std::size_t>(i)]});
    const auto ref = oracle_peel(build_graph(ctx.cc, tx, ctx.ps));
    bool same = true;
    for (std::size_t u = 0; u < ref.size(); ++u) same = same && r.users[u].decoded == static_cast<bool>(ref[u]);
    agree += same;
  }
  EXPECT_GE(agree, static_cast<int>(0.95 * trials));
}

TEST(Phy, DecodedUsersHaveNoErrorsUnderGenieCrc) {
  const PhyContext ctx(validate(phy_config()));
  for (std::uint64_t t = 0; t < 10; ++t)
    for (const auto& u : run_frame_phy(ctx, 0, t).users) {
      if (u.decoded) {
        EXPECT_EQ(u.symbol_errors, 0u);
      }
    }
}

TEST(Phy, NoDataPowerMeansGuessing) {
  auto cfg = phy_config();
  cfg.alpha = 1.0;
  const PhyContext ctx(validate(cfg));
  std::size_t err = 0, tot = 0, dec = 0;
  for (std::uint64_t t = 0; t < 10; ++t)
    for (const auto& u : run_frame_phy(ctx, 0, t).users) {
      err += u.symbol_errors;
      tot += u.symbols;
      dec += u.decoded;
    }
  EXPECT_EQ(dec, 0u);
  EXPECT_NEAR(static_cast<double>(err) / static_cast<double>(tot), 0.5, 0.03);
}

TEST(Phy, DumpCarriesGroundTruth) {
  const PhyContext ctx(validate(phy_config()));
  FrameDump d;
  std::vector<TelemetryRow> tel;
  const auto r = run_frame_phy(ctx, 0, 0, &d, &tel);
  EXPECT_EQ(static_cast<int>(d.y.size()), ctx.cc->n);
  EXPECT_EQ(d.tx.size(), r.active());
  EXPECT_EQ(d.channels.size(), r.active());
  EXPECT_FALSE(tel.empty());
}
