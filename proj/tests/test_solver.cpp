#include <catch2/catch_amalgamated.hpp>

#include "mtpo/generators.hpp"
#include "mtpo/solver.hpp"
#include "test_util.hpp"

using namespace mtpo;
using Catch::Matchers::WithinAbs;

TEST_CASE("lr schedule starts at 1/alpha and decays as 2/(alpha(t+2))") {
  const double alpha = 0.2;
  REQUIRE_THAT(alpha * lr_schedule(0, alpha), WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(lr_schedule(8, alpha), WithinAbs(2.0 / (alpha * 10.0), 1e-15));
}

TEST_CASE("md_step at alpha*eta = 1 ignores the current policy") {
  auto env = testutil::h1_instance();
  const double alpha = 0.5, eta = 2.0;  // alpha eta = 1
  std::mt19937_64 rng(1);
  const Policy p1 = testutil::random_policy(env.cmdp, rng);
  const Policy p2 = testutil::random_policy(env.cmdp, rng);
  const QTable qt = preference_qv(env.cmdp, env.preference, p1, p1, alpha).first;
  const Policy n1 = md_step(env.cmdp, p1, qt, eta, alpha);
  const Policy n2 = md_step(env.cmdp, p2, qt, eta, alpha);
  REQUIRE_THAT(n1.probs[0][0][0][0], WithinAbs(n2.probs[0][0][0][0], 1e-14));
  REQUIRE_THROWS_AS(md_step(env.cmdp, p1, qt, eta * 1.5, alpha), std::invalid_argument);
}

TEST_CASE("md_step with zero Q is the geometric pull toward mu") {
  auto env = testutil::h1_instance();
  Policy pi = env.cmdp.reference;
  pi.probs[0][0][0] = {0.9, 0.1};
  QTable qt;
  qt.q = {{{Row{0.0, 0.0}}}};
  const double alpha = 0.5, eta = 0.8;  // ae = 0.4
  const Policy next = md_step(env.cmdp, pi, qt, eta, alpha);
  const Policy expect = geometric_mixture(pi, env.cmdp.reference, alpha * eta);
  REQUIRE_THAT(next.probs[0][0][0][0], WithinAbs(expect.probs[0][0][0][0], 1e-13));
}

TEST_CASE("nash_solve reaches the residual tolerance and low exploitability") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto env = gen_random_cmdp(seed, 2, 3, 3, 2);
    const auto cert = nash_solve(env.cmdp, env.preference, 0.2, 1e-8);
    REQUIRE(cert.residual <= 1e-8);
    REQUIRE(cert.exploitability >= -1e-10);
    REQUIRE(cert.exploitability <= 1e-7);
  }
}

TEST_CASE("nash_solve fixed point is learning-rate independent") {
  auto env = gen_random_cmdp(12, 2, 3, 2, 1);
  const double alpha = 0.15;
  const auto c1 = nash_solve(env.cmdp, env.preference, alpha, 1e-10, 200000, 0.5);
  const auto c2 = nash_solve(env.cmdp, env.preference, alpha, 1e-10, 200000, 0.25);
  for (int h = 0; h < env.cmdp.horizon; ++h)
    for (int x = 0; x < env.cmdp.layer_size(h); ++x)
      for (int y = 0; y < env.cmdp.num_actions(); ++y)
        REQUIRE_THAT(c1.policy.probs[0][h][x][y],
                     WithinAbs(c2.policy.probs[0][h][x][y], 1e-8));
}

TEST_CASE("nash_solve agrees with the H=1 damped oracle") {
  const double alpha = 0.5;
  auto env = testutil::h1_instance(0.8);
  const auto cert = nash_solve(env.cmdp, env.preference, alpha, 1e-10);
  const Row oracle = testutil::h1_nash_oracle(0.8, alpha);
  REQUIRE_THAT(cert.policy.probs[0][0][0][0], WithinAbs(oracle[0], 1e-8));
  REQUIRE_THAT(cert.policy.probs[0][0][0][1], WithinAbs(oracle[1], 1e-8));
}

TEST_CASE("MTPO trace converges to the Nash with clean diagnostics") {
  auto env = gen_random_cmdp(7, 2, 3, 2, 1);
  const double alpha = 0.2;
  const auto cert = nash_solve(env.cmdp, env.preference, alpha, 1e-9);

  SolverConfig config;
  config.algorithm = Algorithm::kMtpo;
  config.alpha = alpha;
  config.iterations = 300;
  const auto trace = run(env.cmdp, &env.preference, config, &cert.policy);

  REQUIRE(static_cast<int>(trace.records.size()) == config.iterations);
  const auto& first = trace.records.front();
  const auto& last = trace.records.back();
  REQUIRE(first.t == 1);
  REQUIRE(last.kl_to_nash < first.kl_to_nash * 0.05);
  REQUIRE(last.exploitability < 1e-3);
  for (const auto& rec : trace.records) {
    REQUIRE(rec.fi_slack >= -1e-8);
    REQUIRE(rec.bound_margin >= 0.0);
    REQUIRE_THAT(rec.selfplay_pref, WithinAbs(0.5, 1e-10));
  }
}

TEST_CASE("MTPO and MTPO-tau converge to the same policy") {
  auto env = gen_random_cmdp(19, 2, 3, 3, 1);
  const double alpha = 0.2;
  const auto cert = nash_solve(env.cmdp, env.preference, alpha, 1e-9);

  SolverConfig config;
  config.alpha = alpha;
  config.iterations = 2000;
  config.diagnostics = false;

  config.algorithm = Algorithm::kMtpo;
  const auto t1 = run(env.cmdp, &env.preference, config, &cert.policy);
  config.algorithm = Algorithm::kMtpoTau;
  const auto t2 = run(env.cmdp, &env.preference, config, &cert.policy);

  double tv = 0.0;
  for (int h = 0; h < env.cmdp.horizon; ++h)
    for (int x = 0; x < env.cmdp.layer_size(h); ++x) {
      double d = 0.0;
      for (int y = 0; y < env.cmdp.num_actions(); ++y)
        d += std::abs(t1.final_policy.probs[0][h][x][y] - t2.final_policy.probs[0][h][x][y]);
      tv = std::max(tv, 0.5 * d);
    }
  REQUIRE(tv < 1e-3);
}

TEST_CASE("MTPO-tau diagnostics hold along the run") {
  auto env = gen_random_cmdp(25, 2, 3, 2, 1);
  const double alpha = 0.25;
  const auto cert = nash_solve(env.cmdp, env.preference, alpha, 1e-9);
  SolverConfig config;
  config.algorithm = Algorithm::kMtpoTau;
  config.alpha = alpha;
  config.iterations = 200;
  const auto trace = run(env.cmdp, &env.preference, config, &cert.policy);
  for (const auto& rec : trace.records) {
    REQUIRE(rec.tau_recursion_defect <= 1e-10);
    REQUIRE(rec.bound_margin >= 0.0);
    REQUIRE(rec.fi_slack >= -1e-8);
  }
}

TEST_CASE("RLHF mirror descent converges to the soft optimum") {
  auto env = gen_bt_chain(31, 2, {0.0, 0.3, 0.7, 1.0});
  const double alpha = 0.2;
  REQUIRE(env.bt_reward.has_value());
  SolverConfig config;
  config.algorithm = Algorithm::kRlhfMd;
  config.alpha = alpha;
  config.iterations = 500;
  config.rlhf_reward = *env.bt_reward;
  const auto [opt_pi, opt_v] = soft_best_response(env.cmdp, *config.rlhf_reward, alpha);
  const auto trace = run(env.cmdp, nullptr, config, &opt_pi);
  REQUIRE(trace.records.back().kl_to_nash < 1e-5);
  REQUIRE(trace.records.back().exploitability < 1e-6);
}

TEST_CASE("measured Q shift stays within the analytic bound") {
  auto env = gen_random_cmdp(41, 3, 3, 3, 1);
  const double alpha = 0.3;
  const double bound = analytic_q_bound(env.cmdp, alpha);
  SolverConfig config;
  config.alpha = alpha;
  config.iterations = 100;
  config.diagnostics = false;
  const auto trace = run(env.cmdp, &env.preference, config);
  for (const auto& rec : trace.records) REQUIRE(rec.measured_q_shift <= bound + 1e-9);
}

TEST_CASE("nash_solve reports NotConverged with an impossible cap") {
  auto env = gen_random_cmdp(3, 2, 3, 2, 1);
  REQUIRE_THROWS_AS(nash_solve(env.cmdp, env.preference, 0.1, 1e-12, 3), NotConverged);
}
