#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

// Layered finite contextual MDP, tabular policies, and exact
// trajectory-distribution computations: reach probabilities, enumeration,
// sampling, trajectory-level KL and the two mixture constructions.

namespace mtpo {

constexpr double kSimplexTol = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "CMDP validation failed:";
    for (const auto& s : v) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

class DimensionMismatch : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ExplosionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row of action probabilities (or next-state probabilities).
using Row = std::vector<double>;

/// Tabular policy: probs[c][h][x][y] for layers h = 0..H-1 (paper layers 1..H).
struct Policy {
  std::vector<std::vector<std::vector<Row>>> probs;

  const Row& row(int c, int h, int x) const { return probs[c][h][x]; }
  Row& row(int c, int h, int x) { return probs[c][h][x]; }
};

/// Layered contextual MDP. Layer index h runs 0..H, where layer 0 holds the
/// single initial state and layer H the final states.
struct Cmdp {
  int horizon = 0;
  std::vector<double> context_probs;
  std::vector<std::string> context_ids;
  std::vector<std::string> action_ids;
  // state_ids[h] for h = 0..H (H+1 layers).
  std::vector<std::vector<std::string>> state_ids;
  // transition[c][h][x][y] is a distribution over layer h+1.
  std::vector<std::vector<std::vector<std::vector<Row>>>> transition;
  Policy reference;

  int num_contexts() const { return static_cast<int>(context_probs.size()); }
  int num_actions() const { return static_cast<int>(action_ids.size()); }
  int layer_size(int h) const { return static_cast<int>(state_ids[h].size()); }

  double mu_min() const {
    double m = 1.0;
    for (const auto& per_ctx : reference.probs)
      for (const auto& layer : per_ctx)
        for (const auto& row : layer)
          for (double p : row)
            if (p > 0.0) m = std::min(m, p);
    return m;
  }
};

/// Per-context state visitation probabilities: rho[h][x].
struct ReachProbs {
  std::vector<Row> rho;
};

struct Trajectory {
  int context = 0;
  std::vector<int> states;   // H+1 entries, one index per layer
  std::vector<int> actions;  // H entries
  double prob = 0.0;
};

namespace detail {

inline bool is_distribution(const Row& r, double tol = kSimplexTol) {
  double sum = 0.0;
  for (double p : r) {
    if (!(p >= 0.0) || !std::isfinite(p)) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

// 0*log(0/q) = 0; p*log(p/0) = +inf.
inline double kl_rows(const Row& p, const Row& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return kInf;
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

inline void check_policy_shape(const Cmdp& m, const Policy& pi) {
  if (static_cast<int>(pi.probs.size()) != m.num_contexts())
    throw DimensionMismatch("policy context count does not match CMDP");
  for (int c = 0; c < m.num_contexts(); ++c) {
    if (static_cast<int>(pi.probs[c].size()) != m.horizon)
      throw DimensionMismatch("policy layer count does not match horizon");
    for (int h = 0; h < m.horizon; ++h) {
      if (static_cast<int>(pi.probs[c][h].size()) != m.layer_size(h))
        throw DimensionMismatch("policy state count mismatch at layer " + std::to_string(h));
      for (const auto& row : pi.probs[c][h])
        if (static_cast<int>(row.size()) != m.num_actions())
          throw DimensionMismatch("policy action count mismatch");
    }
  }
}

}  // namespace detail

/// Validates every structural invariant of a CMDP; throws ValidationError
/// listing all violations. States in layers 2..H+1 must be reachable under mu.
inline void validate_cmdp(const Cmdp& m) {
  std::vector<std::string> bad;
  auto loc = [&](int c, int h, int x) {
    return "context " + std::to_string(c) + ", layer " + std::to_string(h + 1) +
           ", state " + std::to_string(x);
  };

  if (m.horizon < 1) bad.push_back("horizon must be positive");
  if (m.context_probs.empty() || !detail::is_distribution(m.context_probs))
    bad.push_back("context distribution does not sum to 1");
  if (static_cast<int>(m.state_ids.size()) != m.horizon + 1)
    bad.push_back("expected H+1 state layers");
  else if (m.layer_size(0) != 1)
    bad.push_back("layer 1 must hold exactly the initial state");
  if (m.action_ids.empty()) bad.push_back("empty action set");
  if (!bad.empty()) throw ValidationError(std::move(bad));

  for (int c = 0; c < m.num_contexts(); ++c) {
    for (int h = 0; h < m.horizon; ++h) {
      for (int x = 0; x < m.layer_size(h); ++x) {
        for (int y = 0; y < m.num_actions(); ++y) {
          const Row& row = m.transition[c][h][x][y];
          if (static_cast<int>(row.size()) != m.layer_size(h + 1)) {
            bad.push_back("transition row has wrong length at " + loc(c, h, x));
            continue;
          }
          if (!detail::is_distribution(row))
            bad.push_back("transition row is not a distribution at " + loc(c, h, x) +
                          ", action " + std::to_string(y));
        }
        const Row& mu = m.reference.probs[c][h][x];
        if (!detail::is_distribution(mu))
          bad.push_back("reference policy row is not a distribution at " + loc(c, h, x));
      }
    }
    // Forward reachability under mu; every non-initial state needs positive mass.
    Row reach(static_cast<std::size_t>(m.layer_size(0)), 1.0);
    for (int h = 0; h < m.horizon; ++h) {
      Row next(static_cast<std::size_t>(m.layer_size(h + 1)), 0.0);
      for (int x = 0; x < m.layer_size(h); ++x) {
        if (reach[x] <= 0.0) continue;
        const Row& mu = m.reference.probs[c][h][x];
        for (int y = 0; y < m.num_actions(); ++y) {
          if (mu[y] <= 0.0) continue;
          const Row& tr = m.transition[c][h][x][y];
          for (int xn = 0; xn < m.layer_size(h + 1); ++xn)
            next[xn] += reach[x] * mu[y] * tr[xn];
        }
      }
      for (int xn = 0; xn < m.layer_size(h + 1); ++xn)
        if (next[xn] <= 0.0)
          bad.push_back("state unreachable under mu: " + loc(c, h + 1, xn));
      reach = std::move(next);
    }
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

/// Forward recursion rho(x_1)=1, rho(x_{h+1}) = sum_x,y rho(x) pi(y|x) p(x'|x,y).
inline ReachProbs reach_probabilities(const Cmdp& m, const Policy& pi, int context) {
  detail::check_policy_shape(m, pi);
  ReachProbs out;
  out.rho.resize(m.horizon + 1);
  out.rho[0].assign(static_cast<std::size_t>(m.layer_size(0)), 1.0);
  for (int h = 0; h < m.horizon; ++h) {
    out.rho[h + 1].assign(static_cast<std::size_t>(m.layer_size(h + 1)), 0.0);
    for (int x = 0; x < m.layer_size(h); ++x) {
      const double rx = out.rho[h][x];
      if (rx <= 0.0) continue;
      const Row& prow = pi.probs[context][h][x];
      for (int y = 0; y < m.num_actions(); ++y) {
        if (prow[y] <= 0.0) continue;
        const double w = rx * prow[y];
        const Row& tr = m.transition[context][h][x][y];
        for (int xn = 0; xn < m.layer_size(h + 1); ++xn)
          out.rho[h + 1][xn] += w * tr[xn];
      }
    }
  }
  return out;
}

/// Exhaustive enumeration of positive-probability trajectories for one context.
/// The oracle behind every expectation identity; errors loudly past the cap.
inline std::vector<Trajectory> enumerate_trajectories(const Cmdp& m, const Policy& pi,
                                                      int context,
                                                      std::size_t cap = 1000000) {
  detail::check_policy_shape(m, pi);
  std::vector<Trajectory> out;
  Trajectory cur;
  cur.context = context;
  cur.states.assign(m.horizon + 1, 0);
  cur.actions.assign(m.horizon, 0);

  // Depth-first over (action, next-state) choices with positive probability.
  auto recurse = [&](auto&& self, int h, double prob) -> void {
    if (h == m.horizon) {
      cur.prob = prob;
      out.push_back(cur);
      if (out.size() > cap)
        throw ExplosionError("trajectory enumeration exceeded cap of " + std::to_string(cap));
      return;
    }
    const int x = cur.states[h];
    const Row& prow = pi.probs[context][h][x];
    for (int y = 0; y < m.num_actions(); ++y) {
      if (prow[y] <= 0.0) continue;
      const Row& tr = m.transition[context][h][x][y];
      for (int xn = 0; xn < m.layer_size(h + 1); ++xn) {
        if (tr[xn] <= 0.0) continue;
        cur.actions[h] = y;
        cur.states[h + 1] = xn;
        self(self, h + 1, prob * prow[y] * tr[xn]);
      }
    }
  };
  recurse(recurse, 0, 1.0);
  return out;
}

/// One trajectory drawn from Pr_{pi,p}( . | context), deterministic per seed.
inline Trajectory sample_trajectory(const Cmdp& m, const Policy& pi, int context,
                                    std::mt19937_64& rng) {
  detail::check_policy_shape(m, pi);
  auto draw = [&](const Row& dist) {
    // Inverse-CDF over the raw probabilities; the row sums to 1 within tolerance.
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double acc = 0.0;
    int last_pos = 0;
    for (int i = 0; i < static_cast<int>(dist.size()); ++i) {
      if (dist[i] <= 0.0) continue;
      last_pos = i;
      acc += dist[i];
      if (u < acc) return i;
    }
    return last_pos;
  };

  Trajectory t;
  t.context = context;
  t.states.assign(m.horizon + 1, 0);
  t.actions.assign(m.horizon, 0);
  t.prob = 1.0;
  for (int h = 0; h < m.horizon; ++h) {
    const int x = t.states[h];
    const int y = draw(pi.probs[context][h][x]);
    const int xn = draw(m.transition[context][h][x][y]);
    t.actions[h] = y;
    t.states[h + 1] = xn;
    t.prob *= pi.probs[context][h][x][y] * m.transition[context][h][x][y][xn];
  }
  return t;
}

/// Trajectory-level KL(pi || pi_prime) in nats, decomposed per state:
/// E_ctx E_{pi,p}[ sum_h KL(pi(.|x_h) || pi'(.|x_h)) ]. Returns +inf on a
/// support violation at a reachable state.
inline double trajectory_kl(const Cmdp& m, const Policy& pi, const Policy& pi_prime) {
  detail::check_policy_shape(m, pi);
  detail::check_policy_shape(m, pi_prime);
  double total = 0.0;
  for (int c = 0; c < m.num_contexts(); ++c) {
    const ReachProbs rp = reach_probabilities(m, pi, c);
    for (int h = 0; h < m.horizon; ++h) {
      for (int x = 0; x < m.layer_size(h); ++x) {
        const double rho = rp.rho[h][x];
        if (rho <= 0.0) continue;
        const double kl = detail::kl_rows(pi.probs[c][h][x], pi_prime.probs[c][h][x]);
        if (kl == kInf) return kInf;
        total += m.context_probs[c] * rho * kl;
      }
    }
  }
  return total;
}

/// The reach-mixture policy: pi_c(y|x) proportional to
/// c rho1(x) pi1(y|x) + (1-c) rho2(x) pi2(y|x). Its reach probabilities are the
/// pointwise linear mixture of the two inputs. States unreachable under both
/// policies take mu's row.
inline Policy mixture_policy(const Cmdp& m, const Policy& pi1, const Policy& pi2,
                             double coeff) {
  if (coeff < 0.0 || coeff > 1.0) throw std::invalid_argument("mixture coeff outside [0,1]");
  detail::check_policy_shape(m, pi1);
  detail::check_policy_shape(m, pi2);
  Policy out = pi1;
  for (int c = 0; c < m.num_contexts(); ++c) {
    const ReachProbs r1 = reach_probabilities(m, pi1, c);
    const ReachProbs r2 = reach_probabilities(m, pi2, c);
    for (int h = 0; h < m.horizon; ++h) {
      for (int x = 0; x < m.layer_size(h); ++x) {
        const double w1 = coeff * r1.rho[h][x];
        const double w2 = (1.0 - coeff) * r2.rho[h][x];
        Row& row = out.probs[c][h][x];
        if (w1 + w2 <= 0.0) {
          row = m.reference.probs[c][h][x];
          continue;
        }
        for (int y = 0; y < m.num_actions(); ++y)
          row[y] = (w1 * pi1.probs[c][h][x][y] + w2 * pi2.probs[c][h][x][y]) / (w1 + w2);
      }
    }
  }
  return out;
}

/// Per-state geometric mixture pi'(y|x) proportional to
/// pi(y|x)^(1-beta) mu(y|x)^beta, normalized over support(mu).
inline Policy geometric_mixture(const Policy& pi, const Policy& mu, double beta) {
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("geometric mixture exponent outside [0,1]");
  Policy out = pi;
  for (std::size_t c = 0; c < pi.probs.size(); ++c) {
    for (std::size_t h = 0; h < pi.probs[c].size(); ++h) {
      for (std::size_t x = 0; x < pi.probs[c][h].size(); ++x) {
        const Row& p = pi.probs[c][h][x];
        const Row& q = mu.probs[c][h][x];
        Row& row = out.probs[c][h][x];
        double z = 0.0;
        for (std::size_t y = 0; y < p.size(); ++y) {
          if (q[y] <= 0.0) {
            row[y] = 0.0;
            continue;
          }
          // 0^0 = 1 on support(mu): at beta = 1 the pi factor drops out.
          const double pf = (beta == 1.0) ? 1.0 : std::pow(p[y], 1.0 - beta);
          const double qf = (beta == 0.0) ? 1.0 : std::pow(q[y], beta);
          row[y] = pf * qf;
          z += row[y];
        }
        for (double& v : row) v /= z;
      }
    }
  }
  return out;
}

/// Uniform policy over support(mu); the canonical softmax init (theta = 0).
inline Policy uniform_support_policy(const Cmdp& m) {
  Policy out = m.reference;
  for (auto& per_ctx : out.probs)
    for (auto& layer : per_ctx)
      for (auto& row : layer) {
        int supp = 0;
        for (double p : row)
          if (p > 0.0) ++supp;
        for (double& p : row) p = (p > 0.0) ? 1.0 / supp : 0.0;
      }
  return out;
}

}  // namespace mtpo
