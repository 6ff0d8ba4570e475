#pragma once

#include <random>

#include "mtpo/cmdp.hpp"
#include "mtpo/generators.hpp"
#include "mtpo/preference.hpp"
#include "mtpo/values.hpp"

// Shared fixtures and independent enumeration-based oracles. The oracles only
// go through enumerate_trajectories and elementary arithmetic, never through
// the DP paths they are used to check.

namespace testutil {

using namespace mtpo;

// H=1, one context, two actions, deterministic transitions to two terminals
// with P(xA beats xB) = 0.8 and uniform mu. The canonical derived instance.
inline GeneratedEnv h1_instance(double p_ab = 0.8) {
  GeneratedEnv env;
  Cmdp& m = env.cmdp;
  m.horizon = 1;
  m.context_probs = {1.0};
  m.context_ids = {"c0"};
  m.action_ids = {"a", "b"};
  m.state_ids = {{"x1"}, {"xA", "xB"}};
  m.transition = {{{{{1.0, 0.0}, {0.0, 1.0}}}}};
  m.reference.probs = {{{{0.5, 0.5}}}};
  validate_cmdp(m);
  env.preference.matrix = {{{0.5, p_ab}, {1.0 - p_ab, 0.5}}};
  return env;
}

inline Policy random_policy(const Cmdp& m, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  Policy out = m.reference;
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < m.horizon; ++h)
      for (auto x = 0; x < m.layer_size(h); ++x) {
        Row& row = out.probs[c][h][x];
        double z = 0.0;
        for (int y = 0; y < m.num_actions(); ++y) {
          row[y] = row[y] > 0.0 ? std::max(gamma(rng), 1e-9) : 0.0;
          z += row[y];
        }
        for (double& v : row) v /= z;
      }
  return out;
}

// Direct trajectory-distribution KL computed by matching enumerated
// trajectories of pi against their probability under pi_prime.
inline double direct_trajectory_kl(const Cmdp& m, const Policy& pi, const Policy& pi_prime) {
  double total = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    double kl = 0.0;
    for (const auto& traj : enumerate_trajectories(m, pi, c)) {
      double q = 1.0;
      for (int h = 0; h < m.horizon; ++h)
        q *= pi_prime.probs[c][h][traj.states[h]][traj.actions[h]] *
             m.transition[c][h][traj.states[h]][traj.actions[h]][traj.states[h + 1]];
      if (q <= 0.0) return kInf;
      kl += traj.prob * std::log(traj.prob / q);
    }
    total += m.context_probs[c] * kl;
  }
  return total;
}

// Definitional regularized value at the initial state: enumerate trajectories
// of pi and accumulate r(x_{H+1}) - alpha sum_h KL(pi||mu)(x_h).
inline double enumerated_regularized_value(const Cmdp& m, const Policy& pi,
                                           const TerminalReward& reward, double alpha) {
  double total = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    double v = 0.0;
    for (const auto& traj : enumerate_trajectories(m, pi, c)) {
      double payoff = reward.r[c][traj.states[m.horizon]];
      for (int h = 0; h < m.horizon; ++h)
        payoff -= alpha * mtpo::detail::kl_rows(pi.probs[c][h][traj.states[h]],
                                                m.reference.probs[c][h][traj.states[h]]);
      v += traj.prob * payoff;
    }
    total += m.context_probs[c] * v;
  }
  return total;
}

// Same, conditioned on a given state-action pair (the Q definition).
inline double enumerated_q(const Cmdp& m, const Policy& pi, const TerminalReward& reward,
                           double alpha, int c, int h0, int x0, int y0) {
  // Roll a sub-MDP forward from (x0, y0) by direct recursion over suffixes.
  double q = -alpha * mtpo::detail::kl_rows(pi.probs[c][h0][x0], m.reference.probs[c][h0][x0]);
  // suffix value from state x at layer h
  auto suffix = [&](auto&& self, int h, int x) -> double {
    if (h == m.horizon) return reward.r[c][x];
    double v = -alpha * mtpo::detail::kl_rows(pi.probs[c][h][x], m.reference.probs[c][h][x]);
    for (int y = 0; y < m.num_actions(); ++y) {
      const double py = pi.probs[c][h][x][y];
      if (py <= 0.0) continue;
      for (int xn = 0; xn < m.layer_size(h + 1); ++xn) {
        const double pt = m.transition[c][h][x][y][xn];
        if (pt > 0.0) v += py * pt * self(self, h + 1, xn);
      }
    }
    return v;
  };
  for (int xn = 0; xn < m.layer_size(h0 + 1); ++xn) {
    const double pt = m.transition[c][h0][x0][y0][xn];
    if (pt > 0.0) q += pt * suffix(suffix, h0 + 1, xn);
  }
  return q;
}

// Damped fixed-point oracle for the H=1 two-action instance: iterate
// pi <- (1-d) pi + d normalize(mu exp(Q(pi)/alpha)) with the Q assembled from
// first principles, to residual 1e-12.
inline Row h1_nash_oracle(double p_ab, double alpha, double damping = 0.3) {
  const Row mu = {0.5, 0.5};
  Row pi = mu;
  for (int iter = 0; iter < 2000000; ++iter) {
    // P(x_y beats pi) for the two terminals.
    const double r_a = pi[0] * 0.5 + pi[1] * p_ab;
    const double r_b = pi[0] * (1.0 - p_ab) + pi[1] * 0.5;
    // The KL penalty is action-independent and cancels in the softmax.
    const double qa = r_a / alpha, qb = r_b / alpha;
    const double qmax = std::max(qa, qb);
    const double za = mu[0] * std::exp(qa - qmax);
    const double zb = mu[1] * std::exp(qb - qmax);
    const Row target = {za / (za + zb), zb / (za + zb)};
    const double res = std::max(std::abs(pi[0] - target[0]), std::abs(pi[1] - target[1]));
    pi[0] = (1.0 - damping) * pi[0] + damping * target[0];
    pi[1] = (1.0 - damping) * pi[1] + damping * target[1];
    if (res <= 1e-13) break;
  }
  return pi;
}

}  // namespace testutil
