#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <wind/game.hpp>

using namespace wind;
using Catch::Matchers::WithinAbs;

namespace {

// one prompt, three responses with strictly decreasing rewards (3, 2, 1)
PreferenceGame three_distinct() {
  Matrix r(1, 3);
  r(0, 0) = 3.0;
  r(0, 1) = 2.0;
  r(0, 2) = 1.0;
  return PreferenceGame(std::move(r), {1.0});
}

PreferenceGame total_tie(int num_prompts, int num_responses) {
  Matrix r(num_prompts, num_responses, 1.0);
  return PreferenceGame(std::move(r), std::vector<double>(num_prompts, 1.0 / num_prompts));
}

TabularPolicy policy_1x2(double a) {
  Matrix p(1, 2);
  p(0, 0) = a;
  p(0, 1) = 1.0 - a;
  return TabularPolicy::from_probs(p);
}

TabularPolicy policy_1x3(double a, double b, double c) {
  Matrix p(1, 3);
  p(0, 0) = a;
  p(0, 1) = b;
  p(0, 2) = c;
  return TabularPolicy::from_probs(p);
}

}  // namespace

TEST_CASE("preference tables follow the strict and weak comparison rules") {
  PreferenceGame g = three_distinct();

  SECTION("strict row of the best response is (1/2, 1, 1)") {
    REQUIRE(g.pref(0, 0, 0) == 0.5);
    REQUIRE(g.pref(0, 0, 1) == 1.0);
    REQUIRE(g.pref(0, 0, 2) == 1.0);
  }

  SECTION("weak row of the middle response is (0, 1, 1)") {
    REQUIRE(g.pref_geq(0, 1, 0) == 0.0);
    REQUIRE(g.pref_geq(0, 1, 1) == 1.0);
    REQUIRE(g.pref_geq(0, 1, 2) == 1.0);
  }

  SECTION("equal rewards give constant tables") {
    PreferenceGame tie = total_tie(2, 3);
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 3; ++y)
        for (int y2 = 0; y2 < 3; ++y2) {
          REQUIRE(tie.pref(x, y, y2) == 0.5);
          REQUIRE(tie.pref_geq(x, y, y2) == 1.0);
        }
  }

  SECTION("strict complement holds exactly on a large normal game") {
    Rng rng(7);
    Matrix r(20, 100);
    for (int x = 0; x < 20; ++x)
      for (int y = 0; y < 100; ++y) r(x, y) = rng.normal();
    PreferenceGame big(std::move(r), std::vector<double>(20, 0.05));
    for (int x = 0; x < 20; ++x)
      for (int y = 0; y < 100; ++y)
        for (int y2 = 0; y2 < 100; ++y2)
          REQUIRE(big.pref(x, y, y2) + big.pref(x, y2, y) == 1.0);
  }

  SECTION("weak complement is >= 1, equal exactly when rewards are distinct") {
    for (int y = 0; y < 3; ++y)
      for (int y2 = 0; y2 < 3; ++y2)
        if (y != y2) REQUIRE(g.pref_geq(0, y, y2) + g.pref_geq(0, y2, y) == 1.0);
    Matrix r(1, 3);
    r(0, 0) = 1.0;
    r(0, 1) = 1.0;
    r(0, 2) = 0.0;
    PreferenceGame tied(std::move(r), {1.0});
    REQUIRE(tied.pref_geq(0, 0, 1) + tied.pref_geq(0, 1, 0) == 2.0);
  }

  SECTION("optimal sets pick every argmax") {
    REQUIRE(g.optimal_set(0) == std::vector<int>{0});
    Matrix r(1, 3);
    r(0, 0) = 2.0;
    r(0, 1) = 2.0;
    r(0, 2) = 1.0;
    PreferenceGame top_tie(std::move(r), {1.0});
    REQUIRE(top_tie.optimal_set(0) == std::vector<int>{0, 1});
  }

  SECTION("construction rejects malformed inputs by name") {
    REQUIRE_THROWS_AS(PreferenceGame(Matrix(1, 0), {1.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(PreferenceGame(Matrix(2, 2), {0.5, 0.6}), std::invalid_argument);
    REQUIRE_THROWS_AS(PreferenceGame(Matrix(2, 2), {1.0, 0.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(PreferenceGame(Matrix(2, 2), {1.0}), std::invalid_argument);
    Matrix bad(1, 2);
    bad(0, 0) = kPosInf;
    REQUIRE_THROWS_AS(PreferenceGame(std::move(bad), {1.0}), std::invalid_argument);
  }

  SECTION("grouped matvecs match the dense tensors") {
    Rng rng(11);
    Matrix r(3, 6);
    for (int x = 0; x < 3; ++x)
      for (int y = 0; y < 6; ++y) r(x, y) = std::floor(rng.normal() * 2.0);  // force some ties
    PreferenceGame game(std::move(r), {0.2, 0.3, 0.5});
    std::vector<double> p(6), got(6);
    for (int x = 0; x < 3; ++x) {
      double z = 0.0;
      for (double& v : p) z += (v = rng.uniform_pos());
      for (double& v : p) v /= z;
      game.pref_apply(x, p.data(), got.data());
      for (int y = 0; y < 6; ++y) {
        double want = 0.0;
        for (int y2 = 0; y2 < 6; ++y2) want += game.pref(x, y, y2) * p[y2];
        REQUIRE_THAT(got[y], WithinAbs(want, 1e-14));
      }
      game.pref_geq_apply(x, p.data(), got.data());
      for (int y = 0; y < 6; ++y) {
        double want = 0.0;
        for (int y2 = 0; y2 < 6; ++y2) want += game.pref_geq(x, y, y2) * p[y2];
        REQUIRE_THAT(got[y], WithinAbs(want, 1e-14));
      }
    }
  }
}

TEST_CASE("win_rate is the rho-weighted bilinear preference form") {
  PreferenceGame g = three_distinct();

  SECTION("self play is one half") {
    TabularPolicy u = TabularPolicy::uniform(1, 3);
    REQUIRE_THAT(win_rate(u, u, g), WithinAbs(0.5, 1e-14));
    Rng rng(3);
    TabularPolicy d = TabularPolicy::dirichlet_ones(1, 3, rng);
    REQUIRE_THAT(win_rate(d, d, g), WithinAbs(0.5, 1e-14));
  }

  SECTION("point mass on the best response beats uniform at 5/6") {
    TabularPolicy best = policy_1x3(1.0, 0.0, 0.0);
    TabularPolicy u = TabularPolicy::uniform(1, 3);
    REQUIRE_THAT(win_rate(best, u, g), WithinAbs(5.0 / 6.0, 1e-12));
  }

  SECTION("win rates of a pair sum to one") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
      TabularPolicy a = TabularPolicy::dirichlet_ones(1, 3, rng);
      TabularPolicy b = TabularPolicy::dirichlet_ones(1, 3, rng);
      REQUIRE_THAT(win_rate(a, b, g) + win_rate(b, a, g), WithinAbs(1.0, 1e-12));
    }
  }

  SECTION("shape mismatches are rejected") {
    TabularPolicy wide = TabularPolicy::uniform(1, 4);
    REQUIRE_THROWS_AS(win_rate(wide, wide, g), std::invalid_argument);
  }
}

TEST_CASE("kl_policies averages per-prompt divergences and tolerates infinities") {
  std::vector<double> rho = {1.0};

  SECTION("identical policies have zero divergence") {
    TabularPolicy p = policy_1x2(0.3);
    REQUIRE(kl_policies(p, p, rho) == 0.0);
  }

  SECTION("(0.75, 0.25) against uniform") {
    double want = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    double got = kl_policies(policy_1x2(0.75), TabularPolicy::uniform(1, 2), rho);
    REQUIRE_THAT(got, WithinAbs(want, 1e-14));
    REQUIRE_THAT(got, WithinAbs(0.130812, 5e-7));
  }

  SECTION("support escaping the second argument gives +infinity") {
    TabularPolicy p = policy_1x2(0.5);
    TabularPolicy q = policy_1x2(1.0);  // zero mass on the second response
    REQUIRE(kl_policies(p, q, rho) == kPosInf);
    REQUIRE(kl_policies(q, p, rho) < kPosInf);  // 0 log 0 = 0 on the other side
  }

  SECTION("nonnegative on random pairs") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
      TabularPolicy a = TabularPolicy::dirichlet_ones(2, 5, rng);
      TabularPolicy b = TabularPolicy::dirichlet_ones(2, 5, rng);
      REQUIRE(kl_policies(a, b, {0.4, 0.6}) >= 0.0);
    }
  }
}

TEST_CASE("avg_l1 is the rho-weighted l1 distance") {
  std::vector<double> rho = {1.0};

  SECTION("identical policies are at distance zero") {
    TabularPolicy p = policy_1x3(0.2, 0.3, 0.5);
    REQUIRE(avg_l1(p, p, rho) == 0.0);
  }

  SECTION("disjoint point masses are at the maximal distance 2") {
    REQUIRE(avg_l1(policy_1x2(1.0), policy_1x2(0.0), rho) == 2.0);
  }

  SECTION("(0.75, 0.25) vs uniform is 0.5") {
    REQUIRE_THAT(avg_l1(policy_1x2(0.75), TabularPolicy::uniform(1, 2), rho),
                 WithinAbs(0.5, 1e-14));
  }

  SECTION("bounded by [0, 2] on random pairs") {
    Rng rng(29);
    for (int trial = 0; trial < 10; ++trial) {
      TabularPolicy a = TabularPolicy::dirichlet_ones(3, 4, rng);
      TabularPolicy b = TabularPolicy::dirichlet_ones(3, 4, rng);
      double d = avg_l1(a, b, {0.1, 0.4, 0.5});
      REQUIRE(d >= 0.0);
      REQUIRE(d <= 2.0);
    }
  }
}

TEST_CASE("wr_objective is win rate minus the scaled KL penalty") {
  SECTION("a policy scores one half against itself") {
    PreferenceGame g = three_distinct();
    TabularPolicy u = TabularPolicy::uniform(1, 3);
    REQUIRE_THAT(wr_objective(u, g, u, 1.0), WithinAbs(0.5, 1e-14));
  }

  SECTION("unregularized point mass on the best response scores 5/6") {
    PreferenceGame g = three_distinct();
    REQUIRE_THAT(wr_objective(policy_1x3(1.0, 0.0, 0.0), g, TabularPolicy::uniform(1, 3), 0.0),
                 WithinAbs(5.0 / 6.0, 1e-12));
  }

  SECTION("total tie reduces the objective to 1/2 minus the KL term") {
    PreferenceGame tie = total_tie(1, 2);
    double kl = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    double got = wr_objective(policy_1x2(0.75), tie, TabularPolicy::uniform(1, 2), 1.0);
    REQUIRE_THAT(got, WithinAbs(0.5 - kl, 1e-12));
    REQUIRE_THAT(got, WithinAbs(0.369188, 5e-7));
  }

  SECTION("negative beta is rejected") {
    PreferenceGame g = three_distinct();
    TabularPolicy u = TabularPolicy::uniform(1, 3);
    REQUIRE_THROWS_AS(wr_objective(u, g, u, -0.1), std::invalid_argument);
  }
}

TEST_CASE("log_win_objective evaluates the log-preference payoff") {
  PreferenceGame g = three_distinct();
  TabularPolicy u = TabularPolicy::uniform(1, 3);

  SECTION("a point mass on the worst response is always weakly beaten") {
    // every response weakly beats the worst, so the log term vanishes and the
    // payoff is exactly the negative KL penalty
    TabularPolicy worst = policy_1x3(0.0, 0.0, 1.0);
    TabularPolicy p = policy_1x3(0.5, 0.3, 0.2);
    double kl = kl_policies(p, u, g.rho());
    REQUIRE_THAT(log_win_objective(p, worst, g, u, 0.7), WithinAbs(-0.7 * kl, 1e-12));
  }

  SECTION("uniform self-play over three distinct rewards") {
    double want = (std::log(1.0) + std::log(2.0 / 3.0) + std::log(1.0 / 3.0)) / 3.0;
    double got = log_win_objective(u, u, g, u, 0.0);
    REQUIRE_THAT(got, WithinAbs(want, 1e-12));
    REQUIRE_THAT(got, WithinAbs(-0.501359, 5e-7));
  }

  SECTION("point mass on the best response wins with certainty") {
    TabularPolicy best = policy_1x3(1.0, 0.0, 0.0);
    REQUIRE(log_win_objective(best, best, g, u, 0.0) == 0.0);
  }

  SECTION("nonpositive whenever beta is zero") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
      TabularPolicy a = TabularPolicy::dirichlet_ones(1, 3, rng);
      TabularPolicy b = TabularPolicy::dirichlet_ones(1, 3, rng);
      REQUIRE(log_win_objective(a, b, g, u, 0.0) <= 1e-12);
    }
  }

  SECTION("unreachable support gives -infinity") {
    // the second player sits on the best response; the worst response can
    // never weakly beat it, yet the first player puts mass there
    TabularPolicy best = policy_1x3(1.0, 0.0, 0.0);
    REQUIRE(log_win_objective(u, best, g, u, 0.0) == kNegInf);
  }
}

TEST_CASE("policies are stored in log space with validated constructors") {
  SECTION("uniform rows sum to one") {
    TabularPolicy u = TabularPolicy::uniform(3, 7);
    for (int x = 0; x < 3; ++x) {
      double s = 0.0;
      for (int y = 0; y < 7; ++y) s += u.prob(x, y);
      REQUIRE_THAT(s, WithinAbs(1.0, 1e-12));
    }
    REQUIRE(u.is_interior());
  }

  SECTION("from_probs validates rows and marks exact zeros") {
    Matrix bad(1, 2);
    bad(0, 0) = 0.6;
    bad(0, 1) = 0.6;
    REQUIRE_THROWS_AS(TabularPolicy::from_probs(bad), std::invalid_argument);
    Matrix neg(1, 2);
    neg(0, 0) = -0.1;
    neg(0, 1) = 1.1;
    REQUIRE_THROWS_AS(TabularPolicy::from_probs(neg), std::invalid_argument);
    TabularPolicy point = policy_1x2(1.0);
    REQUIRE_FALSE(point.is_interior());
    REQUIRE(point.log_prob(0, 1) == kNegInf);
  }

  SECTION("from_logits requires finite entries and normalizes") {
    Matrix lg(1, 3);
    lg(0, 0) = 2.0;
    lg(0, 1) = 0.0;
    lg(0, 2) = -1.0;
    TabularPolicy p = TabularPolicy::from_logits(lg);
    double z = std::exp(2.0) + 1.0 + std::exp(-1.0);
    REQUIRE_THAT(p.prob(0, 0), WithinAbs(std::exp(2.0) / z, 1e-14));
    Matrix inf_logit(1, 2);
    inf_logit(0, 0) = kPosInf;
    REQUIRE_THROWS_AS(TabularPolicy::from_logits(std::move(inf_logit)), std::invalid_argument);
  }

  SECTION("simplex draws are deterministic, interior, and normalized") {
    Rng a(42), b(42);
    TabularPolicy p = TabularPolicy::dirichlet_ones(2, 5, a);
    TabularPolicy q = TabularPolicy::dirichlet_ones(2, 5, b);
    for (int x = 0; x < 2; ++x) {
      double s = 0.0;
      for (int y = 0; y < 5; ++y) {
        REQUIRE(p.log_prob(x, y) == q.log_prob(x, y));
        s += p.prob(x, y);
      }
      REQUIRE_THAT(s, WithinAbs(1.0, 1e-12));
    }
    REQUIRE(p.is_interior());
  }
}

TEST_CASE("traces enforce increasing iterations and a fixed column set") {
  Trace t({"a", "b"});
  t.append(0, {1.0, 2.0});
  t.append(5, {3.0, 4.0});
  REQUIRE_THROWS_AS(t.append(5, {0.0, 0.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(t.append(6, {0.0}), std::invalid_argument);
  REQUIRE(t.rows().size() == 2);
  REQUIRE(t.column("b") == std::vector<double>{2.0, 4.0});
  REQUIRE(t.last("a") == 3.0);
  REQUIRE_THROWS_AS(t.metric_index("c"), std::invalid_argument);
  t.metadata()["seed"] = "7";
  REQUIRE(t.metadata().at("seed") == "7");
}

TEST_CASE("solver configuration validates every range") {
  SolverConfig cfg;
  REQUIRE_NOTHROW(cfg.validate());

  auto reject = [](auto mutate) {
    SolverConfig c;
    mutate(c);
    REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  };
  reject([](SolverConfig& c) { c.beta = -1.0; });
  reject([](SolverConfig& c) { c.eta = 0.0; });
  reject([](SolverConfig& c) { c.n = 0; });
  reject([](SolverConfig& c) { c.alpha1 = 0.0; });
  reject([](SolverConfig& c) { c.alpha2 = -0.5; });
  reject([](SolverConfig& c) { c.alpha1 = 0.7, c.alpha2 = 0.5; });
  reject([](SolverConfig& c) { c.T = -1; });
  reject([](SolverConfig& c) { c.M = 0; });
  reject([](SolverConfig& c) { c.nce_p = 1.0; });
  reject([](SolverConfig& c) { c.tol_residual = 0.0; });
  reject([](SolverConfig& c) { c.inner_steps = 0; });
  reject([](SolverConfig& c) { c.inner_lr = -0.5; });

  SECTION("the mirror-consistent mixing preset") {
    SolverConfig m = SolverConfig::mirror_mixing(0.1, 1.0, 2);
    REQUIRE_THAT(m.alpha1, WithinAbs(1.0 / 1.1, 1e-15));
    REQUIRE(m.alpha2 == 0.0);
    SolverConfig m3 = SolverConfig::mirror_mixing(0.5, 1.5, 3);
    REQUIRE_THAT(m3.alpha1, WithinAbs(1.5 / (1.75 * 2.0), 1e-15));
    REQUIRE_THAT(m3.alpha2, WithinAbs(0.5 / (1.75 * 2.0), 1e-15));
    REQUIRE_THROWS_AS(SolverConfig::mirror_mixing(0.1, 1.5, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(SolverConfig::mirror_mixing(0.1, 1.0, 1), std::invalid_argument);
  }
}
