#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mtpo/cmdp.hpp"

// Terminal-state preference models and policy-level preference quantities,
// including the alpha-regularized game payoff.

namespace mtpo {

class SupportViolation : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// P(x beats x' | c) over final-state pairs. Stored densely; the bt
/// constructor fills the matrix from terminal rewards via the logistic
/// sigmoid, which satisfies the complement identity analytically.
struct TerminalPreference {
  // matrix[c][x][x'] for x, x' in the final layer.
  std::vector<std::vector<Row>> matrix;

  double operator()(int c, int x, int x_prime) const { return matrix[c][x][x_prime]; }
};

struct RegularizationParams {
  double alpha = 0.0;
};

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Bradley-Terry preference from terminal rewards: P(x > x') = sigma(r(x) - r(x')).
inline TerminalPreference bt_preference(const std::vector<Row>& rewards) {
  TerminalPreference out;
  out.matrix.resize(rewards.size());
  for (std::size_t c = 0; c < rewards.size(); ++c) {
    const std::size_t n = rewards[c].size();
    out.matrix[c].assign(n, Row(n, 0.5));
    for (std::size_t x = 0; x < n; ++x) {
      if (!std::isfinite(rewards[c][x])) throw std::invalid_argument("non-finite terminal reward");
      for (std::size_t x2 = 0; x2 < n; ++x2)
        out.matrix[c][x][x2] = sigmoid(rewards[c][x] - rewards[c][x2]);
    }
  }
  return out;
}

/// Checks the complement identity P(x',x) = 1 - P(x,x') and the 0.5 diagonal.
inline void validate_preference(const TerminalPreference& pref, const Cmdp& m,
                                double tol = kSimplexTol) {
  if (static_cast<int>(pref.matrix.size()) != m.num_contexts())
    throw ValidationError({"preference context count does not match CMDP"});
  std::vector<std::string> bad;
  const int n = m.layer_size(m.horizon);
  for (int c = 0; c < m.num_contexts(); ++c) {
    if (static_cast<int>(pref.matrix[c].size()) != n) {
      bad.push_back("preference matrix size mismatch in context " + std::to_string(c));
      continue;
    }
    for (int x = 0; x < n; ++x) {
      if (std::abs(pref.matrix[c][x][x] - 0.5) > tol)
        bad.push_back("preference diagonal not 0.5 in context " + std::to_string(c) +
                      ", state " + std::to_string(x));
      for (int x2 = 0; x2 < n; ++x2) {
        const double p = pref.matrix[c][x][x2];
        if (p < 0.0 || p > 1.0)
          bad.push_back("preference outside [0,1] in context " + std::to_string(c));
        if (std::abs(p + pref.matrix[c][x2][x] - 1.0) > tol)
          bad.push_back("complement identity violated in context " + std::to_string(c) +
                        " at pair (" + std::to_string(x) + "," + std::to_string(x2) + ")");
      }
    }
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

/// P(x beats opponent | c) = sum_x' rho_opponent(x') P(x, x').
inline double state_vs_policy_preference(const Cmdp& m, const TerminalPreference& pref,
                                         int x, const Policy& opponent, int context) {
  const ReachProbs rp = reach_probabilities(m, opponent, context);
  const Row& terminal = rp.rho[m.horizon];
  double out = 0.0;
  for (int x2 = 0; x2 < m.layer_size(m.horizon); ++x2)
    out += terminal[x2] * pref(context, x, x2);
  return out;
}

/// P(pi beats pi') — expectation over contexts and both terminal marginals.
inline double policy_preference(const Cmdp& m, const TerminalPreference& pref,
                                const Policy& pi, const Policy& pi_prime) {
  double out = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    const Row t1 = reach_probabilities(m, pi, c).rho[m.horizon];
    const Row t2 = reach_probabilities(m, pi_prime, c).rho[m.horizon];
    double pc = 0.0;
    for (int x = 0; x < m.layer_size(m.horizon); ++x) {
      if (t1[x] <= 0.0) continue;
      double inner = 0.0;
      for (int x2 = 0; x2 < m.layer_size(m.horizon); ++x2)
        inner += t2[x2] * pref(c, x, x2);
      pc += t1[x] * inner;
    }
    out += m.context_probs[c] * pc;
  }
  return out;
}

/// The alpha-regularized payoff P_alpha(pi beats pi') =
/// P(pi beats pi') - alpha KL(pi||mu) + alpha KL(pi'||mu).
inline double regularized_preference(const Cmdp& m, const TerminalPreference& pref,
                                     const RegularizationParams& reg, const Policy& pi,
                                     const Policy& pi_prime) {
  const double kl1 = trajectory_kl(m, pi, m.reference);
  const double kl2 = trajectory_kl(m, pi_prime, m.reference);
  if (kl1 == kInf || kl2 == kInf)
    throw SupportViolation("policy leaves the support of the reference policy");
  return policy_preference(m, pref, pi, pi_prime) - reg.alpha * kl1 + reg.alpha * kl2;
}

}  // namespace mtpo
