#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtpo/cmdp.hpp"
#include "mtpo/preference.hpp"

// Exact backward recursions for the regularized value functions: the generic
// adversarial-reward Q/V, the two-policy preference-based Q/V, the soft
// best-response oracle and the exploitability certificate.

namespace mtpo {

enum class ValueKind { kGenericReward, kPreferenceSelfPlay, kPreferenceVsOpponent, kRlhfReward };

/// Q(c, x_h, y) for layers h = 0..H-1.
struct QTable {
  std::vector<std::vector<std::vector<Row>>> q;
  ValueKind kind = ValueKind::kGenericReward;
  double alpha = 0.0;
};

/// V(c, x_h) for layers h = 0..H; the final layer holds the terminal payoff.
struct VTable {
  std::vector<std::vector<Row>> v;
  ValueKind kind = ValueKind::kGenericReward;
  double alpha = 0.0;
};

/// Terminal reward r(c, x) over final states, values in [0,1].
struct TerminalReward {
  std::vector<Row> r;
};

/// Backward recursion for the regularized value of pi under a terminal reward:
///   V(x_{H+1}) = r(x_{H+1})
///   Q(x_h, y)  = E_{x' ~ p}[V(x')] - alpha KL(pi(.|x_h) || mu(.|x_h))
///   V(x_h)     = sum_y pi(y|x_h) Q(x_h, y)
inline std::pair<QTable, VTable> generic_qv(const Cmdp& m, const Policy& pi,
                                            const TerminalReward& reward, double alpha,
                                            ValueKind kind = ValueKind::kGenericReward) {
  detail::check_policy_shape(m, pi);
  QTable qt;
  VTable vt;
  qt.kind = vt.kind = kind;
  qt.alpha = vt.alpha = alpha;
  const int C = m.num_contexts();
  qt.q.resize(C);
  vt.v.resize(C);
  for (int c = 0; c < C; ++c) {
    qt.q[c].resize(m.horizon);
    vt.v[c].resize(m.horizon + 1);
    vt.v[c][m.horizon] = reward.r[c];
    for (int h = m.horizon - 1; h >= 0; --h) {
      const int n = m.layer_size(h);
      qt.q[c][h].assign(n, Row(m.num_actions(), 0.0));
      vt.v[c][h].assign(n, 0.0);
      for (int x = 0; x < n; ++x) {
        const Row& prow = pi.probs[c][h][x];
        const double kl = detail::kl_rows(prow, m.reference.probs[c][h][x]);
        if (kl == kInf)
          throw SupportViolation("policy leaves the support of the reference policy");
        for (int y = 0; y < m.num_actions(); ++y) {
          const Row& tr = m.transition[c][h][x][y];
          double ev = 0.0;
          for (int xn = 0; xn < m.layer_size(h + 1); ++xn)
            ev += tr[xn] * vt.v[c][h + 1][xn];
          qt.q[c][h][x][y] = ev - alpha * kl;
          vt.v[c][h][x] += prow[y] * qt.q[c][h][x][y];
        }
      }
    }
  }
  return {std::move(qt), std::move(vt)};
}

/// Terminal reward r(x) = P(x beats opponent), the opponent restarted from the
/// initial state.
inline TerminalReward preference_terminal_reward(const Cmdp& m, const TerminalPreference& pref,
                                                 const Policy& opponent) {
  TerminalReward out;
  out.r.resize(m.num_contexts());
  for (int c = 0; c < m.num_contexts(); ++c) {
    const Row t = reach_probabilities(m, opponent, c).rho[m.horizon];
    out.r[c].assign(m.layer_size(m.horizon), 0.0);
    for (int x = 0; x < m.layer_size(m.horizon); ++x)
      for (int x2 = 0; x2 < m.layer_size(m.horizon); ++x2)
        out.r[c][x] += t[x2] * pref(c, x, x2);
  }
  return out;
}

/// The preference-based Q/V pair Q_alpha^{pi,opponent}, V_alpha^{pi,opponent}.
inline std::pair<QTable, VTable> preference_qv(const Cmdp& m, const TerminalPreference& pref,
                                               const Policy& pi, const Policy& opponent,
                                               double alpha) {
  const TerminalReward r = preference_terminal_reward(m, pref, opponent);
  auto kind = (&pi == &opponent) ? ValueKind::kPreferenceSelfPlay : ValueKind::kPreferenceVsOpponent;
  return generic_qv(m, pi, r, alpha, kind);
}

/// V(x_1) averaged over the context distribution.
inline double initial_value(const Cmdp& m, const VTable& vt) {
  double out = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) out += m.context_probs[c] * vt.v[c][0][0];
  return out;
}

/// Both sides of the value-difference identity:
///   lhs = P_alpha(pi > pi_bar) - P_alpha(pi' > pi_bar)
///   rhs = E_{pi',p}[ sum_h <pi - pi', Q_alpha^{pi,pi_bar}>(x_h)
///                    + alpha KL(pi'||mu)(x_h) - alpha KL(pi||mu)(x_h) ]
inline std::pair<double, double> value_difference_check(const Cmdp& m,
                                                        const TerminalPreference& pref,
                                                        const Policy& pi, const Policy& pi_prime,
                                                        const Policy& pi_bar, double alpha) {
  const RegularizationParams reg{alpha};
  const double lhs = regularized_preference(m, pref, reg, pi, pi_bar) -
                     regularized_preference(m, pref, reg, pi_prime, pi_bar);

  const auto [qt, vt] = preference_qv(m, pref, pi, pi_bar, alpha);
  double rhs = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    const ReachProbs rp = reach_probabilities(m, pi_prime, c);
    double acc = 0.0;
    for (int h = 0; h < m.horizon; ++h) {
      for (int x = 0; x < m.layer_size(h); ++x) {
        const double rho = rp.rho[h][x];
        if (rho <= 0.0) continue;
        const Row& a = pi.probs[c][h][x];
        const Row& b = pi_prime.probs[c][h][x];
        double inner = 0.0;
        for (int y = 0; y < m.num_actions(); ++y)
          inner += (a[y] - b[y]) * qt.q[c][h][x][y];
        const Row& mu = m.reference.probs[c][h][x];
        inner += alpha * detail::kl_rows(b, mu) - alpha * detail::kl_rows(a, mu);
        acc += rho * inner;
      }
    }
    rhs += m.context_probs[c] * acc;
  }
  return {lhs, rhs};
}

/// Soft best response against a fixed terminal reward: backward induction with
///   V(x) = alpha log sum_y mu(y|x) exp(Q(x,y)/alpha),  Q(x,y) = E[V(x')],
/// and the maximizer pi*(y|x) proportional to mu(y|x) exp(Q(x,y)/alpha).
/// Log-sum-exp with per-row max subtraction; alpha in the 1e-3 range makes the
/// raw exponentials overflow.
inline std::pair<Policy, VTable> soft_best_response(const Cmdp& m, const TerminalReward& reward,
                                                    double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("soft best response needs alpha > 0");
  Policy pi = m.reference;
  VTable vt;
  vt.kind = ValueKind::kGenericReward;
  vt.alpha = alpha;
  vt.v.resize(m.num_contexts());
  for (int c = 0; c < m.num_contexts(); ++c) {
    vt.v[c].resize(m.horizon + 1);
    vt.v[c][m.horizon] = reward.r[c];
    for (int h = m.horizon - 1; h >= 0; --h) {
      vt.v[c][h].assign(m.layer_size(h), 0.0);
      for (int x = 0; x < m.layer_size(h); ++x) {
        const Row& mu = m.reference.probs[c][h][x];
        Row qrow(m.num_actions(), -kInf);
        double qmax = -kInf;
        for (int y = 0; y < m.num_actions(); ++y) {
          if (mu[y] <= 0.0) continue;
          const Row& tr = m.transition[c][h][x][y];
          double ev = 0.0;
          for (int xn = 0; xn < m.layer_size(h + 1); ++xn)
            ev += tr[xn] * vt.v[c][h + 1][xn];
          qrow[y] = ev;
          qmax = std::max(qmax, ev);
        }
        double z = 0.0;
        Row& out = pi.probs[c][h][x];
        for (int y = 0; y < m.num_actions(); ++y) {
          if (mu[y] <= 0.0) {
            out[y] = 0.0;
            continue;
          }
          out[y] = mu[y] * std::exp((qrow[y] - qmax) / alpha);
          z += out[y];
        }
        for (double& v : out) v /= z;
        vt.v[c][h][x] = qmax + alpha * std::log(z);
      }
    }
  }
  return {std::move(pi), std::move(vt)};
}

/// Regularized exploitability max_{pi'} P_alpha(pi' > pi) - 1/2; the game value
/// is 1/2, so this is non-negative up to numerical slack and zero exactly at
/// the Nash equilibrium.
inline double exploitability(const Cmdp& m, const TerminalPreference& pref, const Policy& pi,
                             double alpha) {
  const TerminalReward r = preference_terminal_reward(m, pref, pi);
  const auto [br, vt] = soft_best_response(m, r, alpha);
  const double kl_pi = trajectory_kl(m, pi, m.reference);
  if (kl_pi == kInf)
    throw SupportViolation("policy leaves the support of the reference policy");
  // V*(x_1) = max_{pi'} [ P(pi' > pi) - alpha KL(pi'||mu) ].
  return initial_value(m, vt) + alpha * kl_pi - 0.5;
}

/// Unregularized counterpart (informational metric): best response picks the
/// argmax action greedily, no KL term.
inline double unregularized_exploitability(const Cmdp& m, const TerminalPreference& pref,
                                           const Policy& pi) {
  const TerminalReward reward = preference_terminal_reward(m, pref, pi);
  double total = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    std::vector<Row> v(m.horizon + 1);
    v[m.horizon] = reward.r[c];
    for (int h = m.horizon - 1; h >= 0; --h) {
      v[h].assign(m.layer_size(h), 0.0);
      for (int x = 0; x < m.layer_size(h); ++x) {
        double best = -kInf;
        for (int y = 0; y < m.num_actions(); ++y) {
          const Row& tr = m.transition[c][h][x][y];
          double ev = 0.0;
          for (int xn = 0; xn < m.layer_size(h + 1); ++xn) ev += tr[xn] * v[h + 1][xn];
          best = std::max(best, ev);
        }
        v[h][x] = best;
      }
    }
    total += m.context_probs[c] * v[0][0];
  }
  return total - 0.5;
}

}  // namespace mtpo
