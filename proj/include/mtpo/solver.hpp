#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mtpo/cmdp.hpp"
#include "mtpo/preference.hpp"
#include "mtpo/values.hpp"

// Mirror-descent policy optimization: the MTPO / MTPO-tau / multi-turn RLHF
// iterations, the Nash solver, and per-iteration bound diagnostics.

namespace mtpo {

enum class Algorithm { kMtpo, kMtpoTau, kRlhfMd };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kMtpo: return "mtpo";
    case Algorithm::kMtpoTau: return "mtpo_tau";
    case Algorithm::kRlhfMd: return "rlhf_md";
  }
  return "?";
}

struct SolverConfig {
  Algorithm algorithm = Algorithm::kMtpo;
  double alpha = 0.1;
  int iterations = 500;
  // Paper schedule eta_t = 2 / (alpha (t+2)) when constant_eta is unset.
  std::optional<double> constant_eta;
  std::optional<TerminalReward> rlhf_reward;
  bool diagnostics = true;
  double nash_tolerance = 1e-6;
};

struct IterationRecord {
  int t = 0;  // 1-based; t-1 updates have been applied, pi_1 = mu
  double eta = 0.0;
  double kl_to_nash = 0.0;
  double fixedpoint_residual = 0.0;
  double exploitability = 0.0;
  double selfplay_pref = 0.5;
  double fi_slack = 0.0;
  double bound_margin = 0.0;
  // Extra diagnostics, not part of the CSV contract.
  double kl_to_nash_at_mixture = 0.0;   // MTPO-tau only
  double tau_recursion_defect = 0.0;    // MTPO-tau only, max over states
  double measured_q_shift = 0.0;        // max |Q - alpha log(pi/mu)|
};

struct SolverTrace {
  SolverConfig config;
  std::vector<IterationRecord> records;
  Policy final_policy;
};

class BoundViolation : public std::runtime_error {
 public:
  BoundViolation(const std::string& what, int t, double slack)
      : std::runtime_error(what + " at iteration " + std::to_string(t) +
                           " (slack " + std::to_string(slack) + ")"),
        iteration(t), slack(slack) {}
  int iteration;
  double slack;
};

class NotConverged : public std::runtime_error {
 public:
  NotConverged(int cap, double residual)
      : std::runtime_error("nash_solve did not converge within " + std::to_string(cap) +
                           " iterations (residual " + std::to_string(residual) + ")"),
        cap(cap), residual(residual) {}
  int cap;
  double residual;
};

class DegenerateRow : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NashCertificate {
  Policy policy;
  double residual = 0.0;
  double exploitability = 0.0;
  int iterations_used = 0;
};

/// The Theorem 1 schedule: eta_t = 2 / (alpha (t+2)), t >= 0, alpha eta_0 = 1.
inline double lr_schedule(int t, double alpha) {
  return 2.0 / (alpha * (t + 2));
}

/// Analytic bound on |Q - alpha log(pi_t/mu)|: max{4 alpha H log(1/mu_min), 1}.
inline double analytic_q_bound(const Cmdp& m, double alpha) {
  return std::max(4.0 * alpha * m.horizon * std::log(1.0 / m.mu_min()), 1.0);
}

/// One mirror-descent step, in log-space per state:
///   log pi_{t+1} = alpha eta log mu + (1 - alpha eta) log pi_t + eta Q - log Z.
inline Policy md_step(const Cmdp& m, const Policy& pi_t, const QTable& q, double eta,
                      double alpha) {
  const double ae = alpha * eta;
  if (ae > 1.0 + 1e-12) throw std::invalid_argument("md_step requires alpha * eta <= 1");
  Policy out = pi_t;
  for (int c = 0; c < m.num_contexts(); ++c) {
    for (int h = 0; h < m.horizon; ++h) {
      for (int x = 0; x < m.layer_size(h); ++x) {
        const Row& mu = m.reference.probs[c][h][x];
        const Row& p = pi_t.probs[c][h][x];
        Row& row = out.probs[c][h][x];
        Row logits(m.num_actions(), -kInf);
        double lmax = -kInf;
        for (int y = 0; y < m.num_actions(); ++y) {
          if (mu[y] <= 0.0) continue;
          const double lp = (ae >= 1.0) ? 0.0 : (1.0 - ae) * std::log(p[y]);
          logits[y] = ae * std::log(mu[y]) + lp + eta * q.q[c][h][x][y];
          lmax = std::max(lmax, logits[y]);
        }
        double z = 0.0;
        for (int y = 0; y < m.num_actions(); ++y) {
          row[y] = (logits[y] == -kInf) ? 0.0 : std::exp(logits[y] - lmax);
          z += row[y];
        }
        if (!(z > 0.0) || !std::isfinite(z))
          throw DegenerateRow("md_step normalization mass underflow at layer " +
                              std::to_string(h) + ", state " + std::to_string(x));
        for (double& v : row) v /= z;
      }
    }
  }
  return out;
}

/// MTPO: self-play Q against the current policy, then a mirror-descent step.
inline Policy mtpo_iteration(const Cmdp& m, const TerminalPreference& pref, const Policy& pi_t,
                             double eta, double alpha) {
  const auto [qt, vt] = preference_qv(m, pref, pi_t, pi_t, alpha);
  return md_step(m, pi_t, qt, eta, alpha);
}

namespace detail {

// pi exp(eta Q), renormalized per state over support(pi).
inline Policy exp_reweight(const Cmdp& m, const Policy& pi, const QTable& q, double eta) {
  Policy out = pi;
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x) {
        Row& row = out.probs[c][h][x];
        double qmax = -kInf;
        for (int y = 0; y < m.num_actions(); ++y)
          if (row[y] > 0.0) qmax = std::max(qmax, q.q[c][h][x][y]);
        double z = 0.0;
        for (int y = 0; y < m.num_actions(); ++y) {
          row[y] = row[y] > 0.0 ? row[y] * std::exp(eta * (q.q[c][h][x][y] - qmax)) : 0.0;
          z += row[y];
        }
        if (!(z > 0.0) || !std::isfinite(z))
          throw DegenerateRow("exp reweight normalization mass underflow");
        for (double& v : row) v /= z;
      }
  return out;
}

}  // namespace detail

/// MTPO-tau: self-play Q at the geometric mixture pi'_t, then
/// pi_{t+1} proportional to pi'_t exp(eta Q).
inline Policy mtpo_tau_iteration(const Cmdp& m, const TerminalPreference& pref,
                                 const Policy& pi_t, double eta, double alpha) {
  const Policy mix = geometric_mixture(pi_t, m.reference, alpha * eta);
  const auto [qt, vt] = preference_qv(m, pref, mix, mix, alpha);
  return detail::exp_reweight(m, mix, qt, eta);
}

/// Multi-turn RLHF: Q of the current policy under the fixed learned reward,
/// then the same mirror-descent step as MTPO.
inline Policy rlhf_md_iteration(const Cmdp& m, const TerminalReward& reward, const Policy& pi_t,
                                double eta, double alpha) {
  const auto [qt, vt] = generic_qv(m, pi_t, reward, alpha, ValueKind::kRlhfReward);
  return md_step(m, pi_t, qt, eta, alpha);
}

/// Max-norm defect of pi against the softmax fixed-point map
/// normalize(mu(y|x) exp(Q(x,y)/alpha)).
inline double fixed_point_residual(const Cmdp& m, const Policy& pi, const QTable& q,
                                   double alpha) {
  double res = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x) {
        const Row& mu = m.reference.probs[c][h][x];
        double qmax = -kInf;
        for (int y = 0; y < m.num_actions(); ++y)
          if (mu[y] > 0.0) qmax = std::max(qmax, q.q[c][h][x][y]);
        Row fp(m.num_actions(), 0.0);
        double z = 0.0;
        for (int y = 0; y < m.num_actions(); ++y) {
          if (mu[y] <= 0.0) continue;
          fp[y] = mu[y] * std::exp((q.q[c][h][x][y] - qmax) / alpha);
          z += fp[y];
        }
        for (int y = 0; y < m.num_actions(); ++y)
          res = std::max(res, std::abs(pi.probs[c][h][x][y] - fp[y] / z));
      }
  return res;
}

namespace detail {

// E_{ref,p}[ sum_h max_y |shift(x_h, y)|^2 ] where shift is Q - alpha log(pi/mu)
// for algorithm 1 and plain Q for algorithm 2, measured over support(mu).
inline double expected_sq_infnorm(const Cmdp& m, const Policy& measure, const QTable& q,
                                  const Policy* log_ratio_policy, double alpha) {
  double total = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    const ReachProbs rp = reach_probabilities(m, measure, c);
    double acc = 0.0;
    for (int h = 0; h < m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x) {
        if (rp.rho[h][x] <= 0.0) continue;
        const Row& mu = m.reference.probs[c][h][x];
        double norm = 0.0;
        for (int y = 0; y < m.num_actions(); ++y) {
          if (mu[y] <= 0.0) continue;
          double v = q.q[c][h][x][y];
          if (log_ratio_policy)
            v -= alpha * std::log(log_ratio_policy->probs[c][h][x][y] / mu[y]);
          norm = std::max(norm, std::abs(v));
        }
        acc += rp.rho[h][x] * norm * norm;
      }
    total += m.context_probs[c] * acc;
  }
  return total;
}

inline double max_abs_q_shift(const Cmdp& m, const QTable& q, const Policy& pi, double alpha) {
  double out = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x) {
        const Row& mu = m.reference.probs[c][h][x];
        for (int y = 0; y < m.num_actions(); ++y) {
          if (mu[y] <= 0.0) continue;
          out = std::max(out, std::abs(q.q[c][h][x][y] -
                                       alpha * std::log(pi.probs[c][h][x][y] / mu[y])));
        }
      }
  return out;
}

}  // namespace detail

/// Runs the selected algorithm from pi_1 = mu for config.iterations steps and
/// records per-iteration diagnostics. With a reference policy supplied
/// (computed Nash for MTPO variants, soft optimum for RLHF) the trace carries
/// the fundamental-inequality slack and the theorem-bound margin; when
/// config.diagnostics is set, a violated bound raises BoundViolation.
inline SolverTrace run(const Cmdp& m, const TerminalPreference* pref, const SolverConfig& config,
                       const Policy* reference_policy = nullptr) {
  if (config.algorithm == Algorithm::kRlhfMd && !config.rlhf_reward)
    throw std::invalid_argument("rlhf_md requires a terminal reward");
  if ((config.algorithm == Algorithm::kMtpo || config.algorithm == Algorithm::kMtpoTau) && !pref)
    throw std::invalid_argument("preference model required for MTPO variants");

  SolverTrace trace;
  trace.config = config;
  const double alpha = config.alpha;
  const double q_bar = analytic_q_bound(m, alpha);
  const RegularizationParams reg{alpha};

  const double ref_kl_to_mu =
      reference_policy ? trajectory_kl(m, *reference_policy, m.reference) : 0.0;
  if (reference_policy && config.diagnostics &&
      config.algorithm != Algorithm::kRlhfMd && ref_kl_to_mu > 0.5 / alpha + 1e-8)
    throw BoundViolation("KL(pi*||mu) exceeds 1/(2 alpha)", 0, 0.5 / alpha - ref_kl_to_mu);

  Policy pi = m.reference;
  double pending_fi_slack = 0.0;

  for (int t = 1; t <= config.iterations; ++t) {
    const int k = t - 1;  // updates applied so far
    const double eta = config.constant_eta ? *config.constant_eta : lr_schedule(k, alpha);

    IterationRecord rec;
    rec.t = t;
    rec.eta = eta;
    rec.fi_slack = pending_fi_slack;

    // Q-table of the policy the iteration plays.
    Policy mix;  // MTPO-tau only
    QTable qt;
    if (config.algorithm == Algorithm::kMtpo) {
      qt = preference_qv(m, *pref, pi, pi, alpha).first;
    } else if (config.algorithm == Algorithm::kMtpoTau) {
      mix = geometric_mixture(pi, m.reference, alpha * eta);
      qt = preference_qv(m, *pref, mix, mix, alpha).first;
    } else {
      qt = generic_qv(m, pi, *config.rlhf_reward, alpha, ValueKind::kRlhfReward).first;
    }

    rec.fixedpoint_residual = fixed_point_residual(m, pi, qt, alpha);
    rec.measured_q_shift = detail::max_abs_q_shift(m, qt, pi, alpha);

    if (pref) {
      rec.exploitability = exploitability(m, *pref, pi, alpha);
      rec.selfplay_pref = regularized_preference(m, *pref, reg, pi, pi);
    } else {
      // RLHF: suboptimality gap against the soft optimum of the fixed reward.
      const auto [opt_pi, opt_v] = soft_best_response(m, *config.rlhf_reward, alpha);
      const auto [q_cur, v_cur] = generic_qv(m, pi, *config.rlhf_reward, alpha);
      rec.exploitability = initial_value(m, opt_v) - initial_value(m, v_cur);
      rec.selfplay_pref = 0.5;
    }

    if (reference_policy) {
      rec.kl_to_nash = trajectory_kl(m, *reference_policy, pi);
      double measured = rec.kl_to_nash;
      double constant = 32.0;
      if (config.algorithm == Algorithm::kMtpoTau) {
        rec.kl_to_nash_at_mixture = trajectory_kl(m, *reference_policy, mix);
        measured = rec.kl_to_nash_at_mixture;
        constant = 9.0;

        // Per-state mixture recursion:
        // KL(pi*||pi'_t)(x) <= (1 - eta alpha) KL(pi*||pi_t)(x) + eta alpha KL(pi*||mu)(x).
        double defect = 0.0;
        for (int c = 0; c < m.num_contexts(); ++c)
          for (int h = 0; h < m.horizon; ++h)
            for (int x = 0; x < m.layer_size(h); ++x) {
              const Row& star = reference_policy->probs[c][h][x];
              const double lhs = detail::kl_rows(star, mix.probs[c][h][x]);
              const double rhs =
                  (1.0 - eta * alpha) * detail::kl_rows(star, pi.probs[c][h][x]) +
                  eta * alpha * detail::kl_rows(star, m.reference.probs[c][h][x]);
              defect = std::max(defect, lhs - rhs);
            }
        rec.tau_recursion_defect = defect;
        if (config.diagnostics && defect > 1e-10)
          throw BoundViolation("mixture KL recursion violated", t, defect);
      }
      const double bound = constant * m.horizon * q_bar * q_bar / (alpha * alpha * (k + 1));
      rec.bound_margin = bound - measured;
      if (config.diagnostics && rec.bound_margin < 0.0)
        throw BoundViolation("theorem KL bound violated", t, rec.bound_margin);
      if (config.diagnostics && rec.fi_slack < -1e-8)
        throw BoundViolation("fundamental inequality violated", t, rec.fi_slack);
    }

    trace.records.push_back(rec);
    if (t == config.iterations) break;

    // Apply the update, measuring the fundamental inequality across it.
    Policy next;
    if (config.algorithm == Algorithm::kMtpo || config.algorithm == Algorithm::kRlhfMd) {
      next = md_step(m, pi, qt, eta, alpha);
    } else {
      next = detail::exp_reweight(m, mix, qt, eta);
    }

    if (reference_policy) {
      // Fundamental inequality with pi = reference policy:
      //   KL(pi*||pi_{t+1}) <= (1 - eta alpha) KL(pi*||pi_t)
      //     + 2 eta^2 E_{pi*,p}[sum_h ||shift||_inf^2]
      //     + eta (V^{played,t}(x_1) - V^{pi*,t}(x_1)),
      // where the played policy and shift differ between the two algorithms.
      const Policy& played = (config.algorithm == Algorithm::kMtpoTau) ? mix : pi;
      TerminalReward rt = pref ? preference_terminal_reward(m, *pref, played)
                               : *config.rlhf_reward;
      const bool shifted = config.algorithm != Algorithm::kMtpoTau;
      const double noise = detail::expected_sq_infnorm(m, *reference_policy, qt,
                                                       shifted ? &pi : nullptr, alpha);
      const auto [q_played, v_played] = generic_qv(m, played, rt, alpha);
      const auto [q_star, v_star] = generic_qv(m, *reference_policy, rt, alpha);
      const double lhs = trajectory_kl(m, *reference_policy, next);
      const double rhs = (1.0 - eta * alpha) * trajectory_kl(m, *reference_policy, pi) +
                         2.0 * eta * eta * noise +
                         eta * (initial_value(m, v_played) - initial_value(m, v_star));
      pending_fi_slack = rhs - lhs;
    }
    pi = std::move(next);
  }

  trace.final_policy = std::move(pi);
  return trace;
}

/// Solves for the unique Nash of the regularized game by iterating MTPO with a
/// constant learning rate until the fixed-point residual meets the tolerance.
/// A constant eta turns the update into a damped fixed-point iteration whose
/// fixed point is schedule-independent.
inline NashCertificate nash_solve(const Cmdp& m, const TerminalPreference& pref, double alpha,
                                  double tolerance = 1e-8, int cap = 100000,
                                  double alpha_eta = 0.5) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  const double eta = alpha_eta / alpha;
  Policy pi = m.reference;
  double residual = kInf;
  for (int t = 0; t < cap; ++t) {
    const auto [qt, vt] = preference_qv(m, pref, pi, pi, alpha);
    residual = fixed_point_residual(m, pi, qt, alpha);
    if (residual <= tolerance) {
      NashCertificate cert;
      cert.policy = pi;
      cert.residual = residual;
      cert.exploitability = exploitability(m, pref, pi, alpha);
      cert.iterations_used = t;
      return cert;
    }
    pi = md_step(m, pi, qt, eta, alpha);
  }
  throw NotConverged(cap, residual);
}

}  // namespace mtpo
