#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtpo/generators.hpp"
#include "mtpo/io.hpp"
#include "mtpo/pg.hpp"
#include "mtpo/solver.hpp"

// Experiment orchestration: config-driven solver runs, side-by-side preference
// matrices, and convergence reports over on-disk artifacts.

namespace mtpo {

namespace fs = std::filesystem;
using nlohmann::json;

class MissingArtifacts : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SideBySideMatrix {
  std::vector<std::string> labels;
  std::vector<Row> matrix;  // matrix[i][j] = P(pi_i beats pi_j)
};

/// Exact pairwise preference matrix for a labeled list of policies.
inline SideBySideMatrix side_by_side(const Cmdp& m, const TerminalPreference& pref,
                                     const std::vector<std::pair<std::string, Policy>>& policies) {
  if (policies.size() < 2)
    throw std::invalid_argument("side_by_side needs at least two policies");
  SideBySideMatrix out;
  const std::size_t n = policies.size();
  out.matrix.assign(n, Row(n, 0.5));
  for (const auto& [label, pi] : policies) out.labels.push_back(label);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = policy_preference(m, pref, policies[i].second, policies[j].second);
      out.matrix[i][j] = p;
      out.matrix[j][i] = 1.0 - p;
    }
  return out;
}

inline std::string side_by_side_csv(const SideBySideMatrix& sbs) {
  std::ostringstream out;
  out.precision(17);
  out << "method";
  for (const auto& l : sbs.labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < sbs.labels.size(); ++i) {
    out << sbs.labels[i];
    for (double v : sbs.matrix[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

inline std::string side_by_side_text(const SideBySideMatrix& sbs) {
  std::ostringstream out;
  out << "Side-by-side preference matrix (row beats column)\n";
  out.precision(4);
  out << std::fixed;
  out << "            ";
  for (const auto& l : sbs.labels) out << ' ' << l.substr(0, 11) << std::string(l.size() < 11 ? 11 - l.size() : 0, ' ');
  out << '\n';
  for (std::size_t i = 0; i < sbs.labels.size(); ++i) {
    std::string name = sbs.labels[i].substr(0, 12);
    out << name << std::string(12 - name.size(), ' ');
    for (double v : sbs.matrix[i]) out << ' ' << v << "     ";
    out << '\n';
  }
  return out.str();
}

struct ExperimentConfig {
  json raw;
  fs::path output_dir;
};

namespace detail {

inline GeneratedEnv build_environment(const json& env) {
  if (env.contains("cmdp_file")) {
    GeneratedEnv out;
    out.cmdp = io::load_cmdp(env.at("cmdp_file").get<std::string>());
    out.preference = io::load_preference(env.at("preference_file").get<std::string>(), out.cmdp);
    return out;
  }
  const std::string gen = env.at("generator").get<std::string>();
  const std::uint64_t seed = env.value("seed", 0);
  if (gen == "random")
    return gen_random_cmdp(seed, env.value("horizon", 2), env.value("states_per_layer", 3),
                           env.value("num_actions", 2), env.value("num_contexts", 1),
                           env.value("preference_perturbation", 0.0));
  if (gen == "bt_chain")
    return gen_bt_chain(seed, env.value("horizon", 2),
                        env.value("prices", std::vector<double>{0.0, 0.5, 1.0}));
  throw io::FormatError("unknown environment generator: " + gen);
}

inline SolverConfig parse_solver(const json& s, const GeneratedEnv& env) {
  SolverConfig cfg;
  const std::string alg = s.value("algorithm", "mtpo");
  if (alg == "mtpo")
    cfg.algorithm = Algorithm::kMtpo;
  else if (alg == "mtpo_tau")
    cfg.algorithm = Algorithm::kMtpoTau;
  else if (alg == "rlhf_md")
    cfg.algorithm = Algorithm::kRlhfMd;
  else
    throw io::FormatError("unknown algorithm: " + alg);
  cfg.alpha = s.value("alpha", 0.1);
  cfg.iterations = s.value("iterations", 500);
  cfg.diagnostics = s.value("diagnostics", true);
  if (s.contains("constant_eta")) cfg.constant_eta = s.at("constant_eta").get<double>();
  if (cfg.constant_eta && cfg.alpha * *cfg.constant_eta > 1.0)
    throw io::FormatError("constant schedule violates alpha * eta <= 1");
  if (cfg.algorithm == Algorithm::kRlhfMd) {
    if (env.bt_reward)
      cfg.rlhf_reward = *env.bt_reward;
    else
      throw io::FormatError("rlhf_md needs an environment with a terminal reward");
  }
  return cfg;
}

}  // namespace detail

inline ExperimentConfig load_experiment_config(const std::string& path) {
  ExperimentConfig cfg;
  cfg.raw = io::detail::load_json(path);
  if (!cfg.raw.contains("schema_version") || cfg.raw.at("schema_version").get<int>() != 1)
    throw io::FormatError("config schema_version must be 1");
  std::string out_dir = cfg.raw.value("output_dir", "experiment_out");
  if (const char* env_dir = std::getenv("MTPO_OUTPUT_DIR")) out_dir = env_dir;
  cfg.output_dir = out_dir;
  return cfg;
}

/// Executes every configured solver run, writes traces, certificates and the
/// side-by-side matrix; the MANIFEST is written last. Returns false iff a
/// bound or diagnostic assertion failed (partial outputs preserved).
inline bool run_experiment(const ExperimentConfig& cfg) {
  const GeneratedEnv env = detail::build_environment(cfg.raw.at("environment"));
  const Cmdp& m = env.cmdp;
  fs::create_directories(cfg.output_dir);

  json manifest;
  manifest["config"] = cfg.raw;
  manifest["runs"] = json::array();
  bool ok = true;

  // Reference Nash for diagnostics, when requested and a preference exists.
  std::optional<NashCertificate> nash;
  if (cfg.raw.contains("nash")) {
    const json& nj = cfg.raw.at("nash");
    nash = nash_solve(m, env.preference, nj.value("alpha", 0.1), nj.value("tolerance", 1e-8),
                      nj.value("cap", 100000));
    json cert;
    cert["residual"] = nash->residual;
    cert["exploitability"] = nash->exploitability;
    cert["iterations_used"] = nash->iterations_used;
    io::write_file((cfg.output_dir / "nash_certificate.json").string(), cert.dump(2) + "\n");
  }

  std::vector<std::pair<std::string, Policy>> compared;
  compared.emplace_back("mu", m.reference);
  if (nash) compared.emplace_back("nash", nash->policy);

  for (const auto& s : cfg.raw.value("solvers", json::array())) {
    const std::string name = s.value("name", s.value("algorithm", "run"));
    const SolverConfig scfg = detail::parse_solver(s, env);
    const fs::path run_dir = cfg.output_dir / name;
    fs::create_directories(run_dir);
    json entry;
    entry["name"] = name;
    entry["algorithm"] = algorithm_name(scfg.algorithm);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Policy* ref = nullptr;
      std::optional<Policy> rlhf_opt;
      if (scfg.algorithm == Algorithm::kRlhfMd) {
        rlhf_opt = soft_best_response(m, *scfg.rlhf_reward, scfg.alpha).first;
        ref = &*rlhf_opt;
      } else if (nash) {
        ref = &nash->policy;
      }
      const TerminalPreference* pref =
          scfg.algorithm == Algorithm::kRlhfMd ? nullptr : &env.preference;
      SolverTrace trace = run(m, pref, scfg, ref);
      io::write_file((run_dir / "trace.csv").string(), io::trace_csv(trace));
      const auto& last = trace.records.back();
      entry["final_exploitability"] = last.exploitability;
      entry["final_residual"] = last.fixedpoint_residual;
      entry["iterations"] = scfg.iterations;
      entry["status"] = "ok";
      compared.emplace_back(name, trace.final_policy);
    } catch (const BoundViolation& e) {
      entry["status"] = "bound_violation";
      entry["error"] = e.what();
      ok = false;
    }
    entry["wall_time_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json summary;
    summary["run"] = entry;
    summary["config"] = s;
    io::write_file((run_dir / "summary.json").string(), summary.dump(2) + "\n");
    manifest["runs"].push_back(entry);
  }

  if (compared.size() >= 2) {
    const SideBySideMatrix sbs = side_by_side(m, env.preference, compared);
    io::write_file((cfg.output_dir / "side_by_side.csv").string(), side_by_side_csv(sbs));
    io::write_file((cfg.output_dir / "side_by_side.txt").string(), side_by_side_text(sbs));
  }

  manifest["status"] = ok ? "complete" : "failed";
  io::write_file((cfg.output_dir / "MANIFEST.json").string(), manifest.dump(2) + "\n");
  return ok;
}

struct RunReport {
  std::string name;
  double loglog_slope = 0.0;  // fitted slope of log kl_to_nash vs log t
  double final_exploitability = 0.0;
  double final_kl_to_nash = 0.0;
  int iterations = 0;
};

/// Per-run convergence summaries plus the rendered side-by-side matrix.
/// Deterministic over the same artifacts.
inline std::string report(const std::string& experiment_dir) {
  const fs::path dir(experiment_dir);
  if (!fs::exists(dir / "MANIFEST.json"))
    throw MissingArtifacts("no MANIFEST.json under " + experiment_dir);

  std::ostringstream out;
  out << "Experiment report: " << experiment_dir << "\n\n";
  std::vector<fs::path> run_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "trace.csv")) run_dirs.push_back(e.path());
  std::sort(run_dirs.begin(), run_dirs.end());

  for (const auto& rd : run_dirs) {
    std::ifstream in(rd / "trace.csv");
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> ts, kls;
    double expl = 0.0, kl = 0.0;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string cell;
      std::vector<double> cols;
      while (std::getline(row, cell, ',')) cols.push_back(std::stod(cell));
      if (cols.size() < 8) continue;
      ts.push_back(cols[0]);
      kls.push_back(cols[2]);
      expl = cols[4];
      kl = cols[2];
    }
    out << "run " << rd.filename().string() << ": " << ts.size() << " iterations, final kl_to_nash "
        << kl << ", final exploitability " << expl << "\n";
    // Log-log slope over the tail half of the trace; 1/t decay shows up as a
    // slope near -1.
    std::vector<double> lx, ly;
    for (std::size_t i = ts.size() / 2; i < ts.size(); ++i)
      if (kls[i] > 0.0) {
        lx.push_back(std::log(ts[i]));
        ly.push_back(std::log(kls[i]));
      }
    if (lx.size() >= 2) {
      double mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
      }
      mx /= lx.size();
      my /= ly.size();
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < lx.size(); ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
      }
      out << "  kl decay log-log slope: " << (den > 0 ? num / den : 0.0)
          << " (1/t reference: -1)\n";
    }
  }

  if (fs::exists(dir / "side_by_side.txt")) {
    std::ifstream sbs(dir / "side_by_side.txt");
    out << '\n' << sbs.rdbuf();
  }
  return out.str();
}

inline std::string pg_trace_csv(const PgTrace& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "step,exploitability,pref_vs_nash,policy_loss,value_loss,grad_norm\n";
  for (const auto& r : trace.records)
    out << r.step << ',' << r.exploitability << ',' << r.pref_vs_nash << ',' << r.policy_loss
        << ',' << r.value_loss << ',' << r.grad_norm << '\n';
  return out.str();
}

}  // namespace mtpo
