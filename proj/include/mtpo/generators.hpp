#pragma once

#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtpo/cmdp.hpp"
#include "mtpo/preference.hpp"
#include "mtpo/values.hpp"

// Seeded desk-scale environment generators. Sizes are capped so the
// trajectory-enumeration oracle stays feasible in tests.

namespace mtpo {

struct GeneratedEnv {
  Cmdp cmdp;
  TerminalPreference preference;
  // Populated by the BT chain generator: the terminal reward the preferences
  // were derived from, scaled to [0,1].
  std::optional<TerminalReward> bt_reward;
};

namespace detail {

inline Row dirichlet_row(int n, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  Row out(n);
  double sum = 0.0;
  for (double& v : out) {
    v = std::max(gamma(rng), 1e-12);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

inline void normalize(Row& r) {
  const double s = std::accumulate(r.begin(), r.end(), 0.0);
  for (double& v : r) v /= s;
}

}  // namespace detail

/// Random layered CMDP with Dirichlet transitions sparsified to >= 2
/// successors, uniform mu, and a symmetric-complement preference matrix built
/// from latent terminal scores (optionally perturbed off the BT manifold).
inline GeneratedEnv gen_random_cmdp(std::uint64_t seed, int H, int states_per_layer,
                                    int num_actions, int num_contexts,
                                    double preference_perturbation = 0.0) {
  if (H < 1 || H > 6 || states_per_layer < 2 || states_per_layer > 8 || num_actions < 2 ||
      num_actions > 6 || num_contexts < 1)
    throw std::invalid_argument("gen_random_cmdp parameters outside documented ranges");

  std::mt19937_64 rng(seed);
  GeneratedEnv env;
  Cmdp& m = env.cmdp;
  m.horizon = H;

  m.context_probs = detail::dirichlet_row(num_contexts, rng);
  for (int c = 0; c < num_contexts; ++c) m.context_ids.push_back("c" + std::to_string(c));
  for (int y = 0; y < num_actions; ++y) m.action_ids.push_back("y" + std::to_string(y));

  m.state_ids.resize(H + 1);
  m.state_ids[0] = {"s0_0"};
  for (int h = 1; h <= H; ++h)
    for (int x = 0; x < states_per_layer; ++x)
      m.state_ids[h].push_back("s" + std::to_string(h) + "_" + std::to_string(x));

  m.transition.resize(num_contexts);
  for (int c = 0; c < num_contexts; ++c) {
    m.transition[c].resize(H);
    for (int h = 0; h < H; ++h) {
      const int n_cur = m.layer_size(h);
      const int n_next = m.layer_size(h + 1);
      m.transition[c][h].assign(n_cur, std::vector<Row>(num_actions));
      Row inbound(n_next, 0.0);
      for (int x = 0; x < n_cur; ++x)
        for (int y = 0; y < num_actions; ++y) {
          Row row = detail::dirichlet_row(n_next, rng);
          if (n_next > 2) {
            std::uniform_int_distribution<int> size_dist(2, n_next);
            const int keep = size_dist(rng);
            // Keep the `keep` heaviest successors.
            Row sorted = row;
            std::nth_element(sorted.begin(), sorted.begin() + keep - 1, sorted.end(),
                             std::greater<double>());
            const double cutoff = sorted[keep - 1];
            int kept = 0;
            for (double& v : row) {
              if (v >= cutoff && kept < keep)
                ++kept;
              else
                v = 0.0;
            }
            detail::normalize(row);
          }
          for (int xn = 0; xn < n_next; ++xn) inbound[xn] += row[xn];
          m.transition[c][h][x][y] = std::move(row);
        }
      // Splice orphaned next-layer states into a row so every state stays
      // reachable under the uniform reference policy.
      int cursor = 0;
      for (int xn = 0; xn < n_next; ++xn) {
        if (inbound[xn] > 0.0) continue;
        const int x = cursor % n_cur;
        const int y = (cursor / n_cur) % num_actions;
        ++cursor;
        Row& row = m.transition[c][h][x][y];
        for (double& v : row) v *= 0.9;
        row[xn] += 0.1;
      }
    }
  }

  // Uniform reference policy.
  m.reference.probs.resize(num_contexts);
  for (int c = 0; c < num_contexts; ++c) {
    m.reference.probs[c].resize(H);
    for (int h = 0; h < H; ++h)
      m.reference.probs[c][h].assign(m.layer_size(h), Row(num_actions, 1.0 / num_actions));
  }
  validate_cmdp(m);

  // BT-shaped preference from latent scores, then optional symmetric
  // perturbation off the BT manifold.
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Row> scores(num_contexts, Row(m.layer_size(H), 0.0));
  for (auto& per_ctx : scores)
    for (double& s : per_ctx) s = normal(rng);
  env.preference = bt_preference(scores);
  if (preference_perturbation > 0.0) {
    std::uniform_real_distribution<double> unif(-preference_perturbation,
                                                preference_perturbation);
    for (int c = 0; c < num_contexts; ++c)
      for (int x = 0; x < m.layer_size(H); ++x)
        for (int x2 = x + 1; x2 < m.layer_size(H); ++x2) {
          double p = env.preference.matrix[c][x][x2] + unif(rng);
          p = std::clamp(p, 0.01, 0.99);
          env.preference.matrix[c][x][x2] = p;
          env.preference.matrix[c][x2][x] = 1.0 - p;
        }
  }
  validate_preference(env.preference, m);
  return env;
}

/// Negotiation-shaped chain: one price level per terminal state, two actions
/// (push toward higher levels vs. hold) with seeded jitter; the preference is
/// Bradley-Terry on the price levels. Desk-scale stand-in for a reward-based
/// sale-price environment.
inline GeneratedEnv gen_bt_chain(std::uint64_t seed, int H, const std::vector<double>& prices) {
  if (H < 1 || H > 6) throw std::invalid_argument("gen_bt_chain horizon outside [1,6]");
  const int K = static_cast<int>(prices.size());
  if (K < 2) throw std::invalid_argument("gen_bt_chain needs at least two price levels");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 0.15);
  GeneratedEnv env;
  Cmdp& m = env.cmdp;
  m.horizon = H;
  m.context_probs = {1.0};
  m.context_ids = {"c0"};
  m.action_ids = {"push", "hold"};

  m.state_ids.resize(H + 1);
  m.state_ids[0] = {"start"};
  for (int h = 1; h <= H; ++h)
    for (int k = 0; k < K; ++k)
      m.state_ids[h].push_back("l" + std::to_string(h) + "_" + std::to_string(k));

  auto level_row = [&](int level, bool push) {
    Row row(K, 0.0);
    const double eps = jitter(rng);
    if (push) {
      const int up = std::min(level + 1, K - 1);
      const int down = std::max(level - 1, 0);
      row[up] += 0.7 - eps;
      row[level] += 0.2;
      row[down] += 0.1 + eps;
    } else {
      const int down = std::max(level - 1, 0);
      row[level] += 0.75 - eps;
      row[down] += 0.25 + eps;
    }
    // Uniform smoothing keeps every level reachable from the start state even
    // when the horizon is shorter than the ladder.
    for (double& v : row) v = 0.9 * v + 0.1 / K;
    detail::normalize(row);
    return row;
  };

  m.transition.resize(1);
  m.transition[0].resize(H);
  for (int h = 0; h < H; ++h) {
    const int n_cur = m.layer_size(h);
    m.transition[0][h].assign(n_cur, std::vector<Row>(2));
    for (int x = 0; x < n_cur; ++x) {
      const int level = (h == 0) ? 0 : x;
      m.transition[0][h][x][0] = level_row(level, true);
      m.transition[0][h][x][1] = level_row(level, false);
    }
  }

  m.reference.probs.resize(1);
  m.reference.probs[0].resize(H);
  for (int h = 0; h < H; ++h)
    m.reference.probs[0][h].assign(m.layer_size(h), Row(2, 0.5));
  validate_cmdp(m);

  env.preference = bt_preference({prices});

  const double lo = *std::min_element(prices.begin(), prices.end());
  const double hi = *std::max_element(prices.begin(), prices.end());
  TerminalReward reward;
  reward.r.resize(1);
  for (double p : prices) reward.r[0].push_back(hi > lo ? (p - lo) / (hi - lo) : 0.5);
  env.bt_reward = std::move(reward);
  return env;
}

/// Expected terminal reward of a policy, E_ctx E_pi[r(x_{H+1})].
inline double expected_terminal_reward(const Cmdp& m, const Policy& pi,
                                       const TerminalReward& reward) {
  double out = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    const Row t = reach_probabilities(m, pi, c).rho[m.horizon];
    for (int x = 0; x < m.layer_size(m.horizon); ++x) out += m.context_probs[c] * t[x] * reward.r[c][x];
  }
  return out;
}

}  // namespace mtpo
