#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mtpo/cmdp.hpp"
#include "mtpo/preference.hpp"
#include "mtpo/values.hpp"

// Sampled policy-gradient realization on tabular softmax policies: self-play
// trajectory pairs with Bernoulli preference outcomes, per-turn KL-penalized
// rewards, GAE advantages, and closed-form gradients for both losses.

namespace mtpo {

class NonFiniteGradient : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tabular softmax parameterization: logits theta[c][h][x][y]; actions outside
/// support(mu) are masked out.
struct SoftmaxPolicyParams {
  std::vector<std::vector<std::vector<Row>>> theta;

  static SoftmaxPolicyParams zeros_like(const Cmdp& m) {
    SoftmaxPolicyParams p;
    p.theta.resize(m.num_contexts());
    for (int c = 0; c < m.num_contexts(); ++c) {
      p.theta[c].resize(m.horizon);
      for (int h = 0; h < m.horizon; ++h)
        p.theta[c][h].assign(m.layer_size(h), Row(m.num_actions(), 0.0));
    }
    return p;
  }

  Policy induced(const Cmdp& m) const {
    Policy out = m.reference;
    for (int c = 0; c < m.num_contexts(); ++c)
      for (int h = 0; h < m.horizon; ++h)
        for (int x = 0; x < m.layer_size(h); ++x) {
          const Row& mu = m.reference.probs[c][h][x];
          const Row& th = theta[c][h][x];
          Row& row = out.probs[c][h][x];
          double tmax = -kInf;
          for (int y = 0; y < m.num_actions(); ++y)
            if (mu[y] > 0.0) tmax = std::max(tmax, th[y]);
          double z = 0.0;
          for (int y = 0; y < m.num_actions(); ++y) {
            row[y] = mu[y] > 0.0 ? std::exp(th[y] - tmax) : 0.0;
            z += row[y];
          }
          for (double& v : row) v /= z;
        }
    return out;
  }
};

/// Turn-level critic: one scalar per non-terminal state, v[c][h][x].
struct ValueParams {
  std::vector<std::vector<Row>> v;

  static ValueParams zeros_like(const Cmdp& m) {
    ValueParams p;
    p.v.resize(m.num_contexts());
    for (int c = 0; c < m.num_contexts(); ++c) {
      p.v[c].resize(m.horizon);
      for (int h = 0; h < m.horizon; ++h)
        p.v[c][h].assign(m.layer_size(h), 0.0);
    }
    return p;
  }
};

struct PgConfig {
  double alpha = 0.1;
  double gae_lambda = 1.0;
  int batch_size = 8;
  double policy_lr = 0.05;
  double value_lr = 0.1;
  bool normalize_advantage = false;
  // Exact preference expectation instead of the Bernoulli draw; variance
  // ablation only.
  bool exact_payoff = false;
  int steps = 50000;
  int eval_interval = 1000;
  std::uint64_t seed = 0;
};

/// One self-play pair: two trajectories under the same context and policy,
/// payoffs z and 1 - z for the Bernoulli preference draw.
struct SelfPlayPair {
  Trajectory first;
  Trajectory second;
  double payoff_first = 0.0;
  double payoff_second = 0.0;
};

/// Samples batch self-play pairs; contexts drawn from the context
/// distribution, one preference draw per pair.
inline std::vector<SelfPlayPair> sample_selfplay_batch(const Cmdp& m,
                                                       const TerminalPreference& pref,
                                                       const SoftmaxPolicyParams& theta,
                                                       int batch, std::mt19937_64& rng,
                                                       bool exact_payoff = false) {
  const Policy pi = theta.induced(m);
  std::discrete_distribution<int> ctx_dist(m.context_probs.begin(), m.context_probs.end());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<SelfPlayPair> out;
  out.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    SelfPlayPair pair;
    const int c = ctx_dist(rng);
    pair.first = sample_trajectory(m, pi, c, rng);
    pair.second = sample_trajectory(m, pi, c, rng);
    const double p = pref(c, pair.first.states[m.horizon], pair.second.states[m.horizon]);
    const double z = exact_payoff ? p : (unif(rng) < p ? 1.0 : 0.0);
    pair.payoff_first = z;
    pair.payoff_second = 1.0 - z;
    out.push_back(std::move(pair));
  }
  return out;
}

struct StepEstimates {
  std::vector<double> advantage;     // A_hat per turn
  std::vector<double> value_target;  // V_hat per turn
};

/// GAE over one trajectory with realized terminal payoff z:
///   r_h     = -alpha KL(pi(.|x_h) || mu(.|x_h))   (analytic, per turn)
///   delta_h = r_h + v(x_{h+1}) - v(x_h), terminal bootstrap v(x_{H+1}) := z
///   A_hat_h = sum_k lambda^k delta_{h+k},  V_hat_h = A_hat_h + v(x_h).
inline StepEstimates gae_advantages(const Cmdp& m, const Trajectory& traj, double payoff,
                                    const Policy& pi, const ValueParams& vp, double alpha,
                                    double lambda) {
  const int H = m.horizon;
  const int c = traj.context;
  StepEstimates est;
  est.advantage.assign(H, 0.0);
  est.value_target.assign(H, 0.0);
  double gae = 0.0;
  for (int h = H - 1; h >= 0; --h) {
    const int x = traj.states[h];
    const double v_next = (h == H - 1) ? payoff : vp.v[c][h + 1][traj.states[h + 1]];
    const double r = -alpha * detail::kl_rows(pi.probs[c][h][x], m.reference.probs[c][h][x]);
    const double delta = r + v_next - vp.v[c][h][x];
    gae = delta + lambda * gae;
    est.advantage[h] = gae;
    est.value_target[h] = gae + vp.v[c][h][x];
  }
  return est;
}

struct PgStepStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double grad_norm = 0.0;
};

/// One gradient step over a batch. Losses, averaged over visited turns:
///   L_policy = -A_hat log pi(y|x) + alpha KL(pi(.|x) || mu(.|x))
///   L_value  = (V_hat - v(x))^2
/// Gradients are closed-form for the softmax / table parameterization.
inline PgStepStats pg_update(const Cmdp& m, SoftmaxPolicyParams& theta, ValueParams& vp,
                             const std::vector<SelfPlayPair>& batch, const PgConfig& config) {
  const Policy pi = theta.induced(m);
  const int H = m.horizon;

  struct Visit {
    int c, h, x, y;
    double adv, vtarget;
  };
  std::vector<Visit> visits;
  for (const auto& pair : batch) {
    for (int side = 0; side < 2; ++side) {
      const Trajectory& traj = side == 0 ? pair.first : pair.second;
      const double payoff = side == 0 ? pair.payoff_first : pair.payoff_second;
      const StepEstimates est =
          gae_advantages(m, traj, payoff, pi, vp, config.alpha, config.gae_lambda);
      for (int h = 0; h < H; ++h)
        visits.push_back({traj.context, h, traj.states[h], traj.actions[h], est.advantage[h],
                          est.value_target[h]});
    }
  }
  const double n = static_cast<double>(visits.size());

  if (config.normalize_advantage && visits.size() > 1) {
    double mean = 0.0, var = 0.0;
    for (const auto& v : visits) mean += v.adv;
    mean /= n;
    for (const auto& v : visits) var += (v.adv - mean) * (v.adv - mean);
    var /= n;
    const double sd = std::sqrt(std::max(var, 1e-12));
    for (auto& v : visits) v.adv = (v.adv - mean) / sd;
  }

  SoftmaxPolicyParams grad_theta = SoftmaxPolicyParams::zeros_like(m);
  ValueParams grad_v = ValueParams::zeros_like(m);
  PgStepStats stats;

  for (const auto& vis : visits) {
    const Row& prow = pi.probs[vis.c][vis.h][vis.x];
    const Row& mu = m.reference.probs[vis.c][vis.h][vis.x];
    const double kl = detail::kl_rows(prow, mu);
    stats.policy_loss += (-vis.adv * std::log(prow[vis.y]) + config.alpha * kl) / n;
    Row& gt = grad_theta.theta[vis.c][vis.h][vis.x];
    for (int y = 0; y < m.num_actions(); ++y) {
      if (mu[y] <= 0.0) continue;
      const double ind = (y == vis.y) ? 1.0 : 0.0;
      double g = -vis.adv * (ind - prow[y]);
      g += config.alpha * prow[y] * (std::log(prow[y] / mu[y]) - kl);
      gt[y] += g / n;
    }
    const double verr = vis.vtarget - vp.v[vis.c][vis.h][vis.x];
    stats.value_loss += verr * verr / n;
    grad_v.v[vis.c][vis.h][vis.x] += -2.0 * verr / n;
  }

  double sq = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < H; ++h)
      for (int x = 0; x < m.layer_size(h); ++x) {
        for (int y = 0; y < m.num_actions(); ++y) {
          const double g = grad_theta.theta[c][h][x][y];
          if (!std::isfinite(g)) throw NonFiniteGradient("non-finite policy gradient");
          sq += g * g;
          theta.theta[c][h][x][y] -= config.policy_lr * g;
        }
        const double gv = grad_v.v[c][h][x];
        if (!std::isfinite(gv)) throw NonFiniteGradient("non-finite value gradient");
        sq += gv * gv;
        vp.v[c][h][x] -= config.value_lr * gv;
      }
  stats.grad_norm = std::sqrt(sq);
  return stats;
}

struct PgEvalRecord {
  int step = 0;
  double exploitability = 0.0;
  double pref_vs_nash = 0.5;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double grad_norm = 0.0;
};

struct PgTrace {
  std::vector<PgEvalRecord> records;
  SoftmaxPolicyParams theta;
  ValueParams values;
};

/// Actor-critic training loop; the induced tabular policy is evaluated exactly
/// against the supplied Nash certificate policy at every eval interval.
inline PgTrace pg_train(const Cmdp& m, const TerminalPreference& pref, const Policy& nash,
                        const PgConfig& config) {
  PgTrace trace;
  trace.theta = SoftmaxPolicyParams::zeros_like(m);
  trace.values = ValueParams::zeros_like(m);
  std::mt19937_64 rng(config.seed);

  PgStepStats last{};
  auto evaluate = [&](int step) {
    const Policy pi = trace.theta.induced(m);
    PgEvalRecord rec;
    rec.step = step;
    rec.exploitability = exploitability(m, pref, pi, config.alpha);
    rec.pref_vs_nash = policy_preference(m, pref, pi, nash);
    rec.policy_loss = last.policy_loss;
    rec.value_loss = last.value_loss;
    rec.grad_norm = last.grad_norm;
    trace.records.push_back(rec);
  };

  evaluate(0);
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = sample_selfplay_batch(m, pref, trace.theta, config.batch_size, rng,
                                             config.exact_payoff);
    last = pg_update(m, trace.theta, trace.values, batch, config);
    if (step % config.eval_interval == 0 || step == config.steps) evaluate(step);
  }
  return trace;
}

}  // namespace mtpo
