#include <catch2/catch_amalgamated.hpp>

#include "mtpo/generators.hpp"
#include "mtpo/values.hpp"
#include "test_util.hpp"

using namespace mtpo;
using Catch::Matchers::WithinAbs;

TEST_CASE("generic_qv matches enumeration oracle") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    auto env = gen_random_cmdp(seed, 3, 4, 3, 2);
    const Policy pi = testutil::random_policy(env.cmdp, rng);
    TerminalReward reward;
    reward.r.resize(env.cmdp.num_contexts());
    for (int c = 0; c < env.cmdp.num_contexts(); ++c) {
      reward.r[c].resize(env.cmdp.layer_size(env.cmdp.horizon));
      for (double& v : reward.r[c]) v = sigmoid(normal(rng));
    }
    const double alpha = 0.3;
    const auto [qt, vt] = generic_qv(env.cmdp, pi, reward, alpha);
    REQUIRE_THAT(initial_value(env.cmdp, vt),
                 WithinAbs(testutil::enumerated_regularized_value(env.cmdp, pi, reward, alpha),
                           1e-9));
    // Spot-check Q entries against the conditional-suffix oracle.
    for (int c = 0; c < env.cmdp.num_contexts(); ++c)
      for (int h = 0; h < env.cmdp.horizon; ++h)
        for (int y = 0; y < env.cmdp.num_actions(); ++y)
          REQUIRE_THAT(qt.q[c][h][0][y],
                       WithinAbs(testutil::enumerated_q(env.cmdp, pi, reward, alpha, c, h, 0, y),
                                 1e-9));
  }
}

TEST_CASE("value recursion consistency: V is the policy average of Q") {
  auto env = gen_random_cmdp(5, 4, 4, 3, 2);
  std::mt19937_64 rng(6);
  const Policy pi = testutil::random_policy(env.cmdp, rng);
  const auto [qt, vt] = preference_qv(env.cmdp, env.preference, pi, pi, 0.15);
  for (int c = 0; c < env.cmdp.num_contexts(); ++c)
    for (int h = 0; h < env.cmdp.horizon; ++h)
      for (int x = 0; x < env.cmdp.layer_size(h); ++x) {
        double avg = 0.0;
        for (int y = 0; y < env.cmdp.num_actions(); ++y)
          avg += pi.probs[c][h][x][y] * qt.q[c][h][x][y];
        REQUIRE_THAT(vt.v[c][h][x], WithinAbs(avg, 1e-12));
      }
}

TEST_CASE("self-play initial value equals the game value minus the restart gap") {
  // V^{pi,pi}(x_1) = P(pi > pi) - alpha KL(pi||mu) = 1/2 - alpha KL(pi||mu).
  auto env = gen_random_cmdp(9, 3, 4, 3, 1);
  std::mt19937_64 rng(2);
  const Policy pi = testutil::random_policy(env.cmdp, rng);
  const double alpha = 0.25;
  const auto [qt, vt] = preference_qv(env.cmdp, env.preference, pi, pi, alpha);
  REQUIRE_THAT(initial_value(env.cmdp, vt),
               WithinAbs(0.5 - alpha * trajectory_kl(env.cmdp, pi, env.cmdp.reference), 1e-11));
}

TEST_CASE("value difference identity holds on random tuples") {
  std::mt19937_64 rng(23);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto env = gen_random_cmdp(seed + 20, 3, 4, 3, 2);
    const Policy pi = testutil::random_policy(env.cmdp, rng);
    const Policy pi_prime = testutil::random_policy(env.cmdp, rng);
    const Policy pi_bar = testutil::random_policy(env.cmdp, rng);
    const auto [lhs, rhs] =
        value_difference_check(env.cmdp, env.preference, pi, pi_prime, pi_bar, 0.2);
    REQUIRE_THAT(lhs, WithinAbs(rhs, 1e-9));
  }
}

TEST_CASE("soft best response maximizes the regularized objective") {
  auto env = gen_random_cmdp(33, 3, 4, 3, 2);
  std::mt19937_64 rng(14);
  const Policy opp = testutil::random_policy(env.cmdp, rng);
  const double alpha = 0.2;
  const TerminalReward r = preference_terminal_reward(env.cmdp, env.preference, opp);
  const auto [br, vt] = soft_best_response(env.cmdp, r, alpha);
  const double best = initial_value(env.cmdp, vt);

  // The certificate value is attained by the returned policy...
  const auto [q_br, v_br] = generic_qv(env.cmdp, br, r, alpha);
  REQUIRE_THAT(initial_value(env.cmdp, v_br), WithinAbs(best, 1e-10));

  // ...and dominates random competitors.
  for (int rep = 0; rep < 20; ++rep) {
    const Policy other = testutil::random_policy(env.cmdp, rng);
    const auto [q_o, v_o] = generic_qv(env.cmdp, other, r, alpha);
    REQUIRE(initial_value(env.cmdp, v_o) <= best + 1e-10);
  }
}

TEST_CASE("soft best response stays finite at tiny alpha") {
  auto env = gen_random_cmdp(44, 2, 3, 3, 1);
  const TerminalReward r =
      preference_terminal_reward(env.cmdp, env.preference, env.cmdp.reference);
  const auto [br, vt] = soft_best_response(env.cmdp, r, 1e-3);
  for (int h = 0; h < env.cmdp.horizon; ++h)
    for (int x = 0; x < env.cmdp.layer_size(h); ++x) {
      double z = 0.0;
      for (double v : br.probs[0][h][x]) {
        REQUIRE(std::isfinite(v));
        z += v;
      }
      REQUIRE_THAT(z, WithinAbs(1.0, 1e-12));
    }
  REQUIRE(std::isfinite(initial_value(env.cmdp, vt)));
}

TEST_CASE("exploitability is non-negative and vanishes only near equilibrium") {
  auto env = testutil::h1_instance();
  const double alpha = 0.5;
  // Uniform play is not the Nash of the 0.8-biased game.
  const double e_mu = exploitability(env.cmdp, env.preference, env.cmdp.reference, alpha);
  REQUIRE(e_mu > 1e-4);

  // The damped fixed-point oracle policy is, up to its own residual.
  const Row nash = testutil::h1_nash_oracle(0.8, alpha);
  Policy pi_nash = env.cmdp.reference;
  pi_nash.probs[0][0][0] = nash;
  const double e_nash = exploitability(env.cmdp, env.preference, pi_nash, alpha);
  REQUIRE(e_nash >= -1e-10);
  REQUIRE(e_nash < 1e-9);
}

TEST_CASE("unregularized exploitability of the dominant deterministic policy is zero") {
  auto env = testutil::h1_instance();
  Policy pa = env.cmdp.reference;
  pa.probs[0][0][0] = {1.0, 0.0};
  // Best response to pa earns max(0.5, 0.2) = 0.5.
  REQUIRE_THAT(unregularized_exploitability(env.cmdp, env.preference, pa), WithinAbs(0.0, 1e-12));
  // Against uniform play the best response earns 0.5*0.5 + 0.5*0.8 = 0.65.
  REQUIRE_THAT(unregularized_exploitability(env.cmdp, env.preference, env.cmdp.reference),
               WithinAbs(0.15, 1e-12));
}
