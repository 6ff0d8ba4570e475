#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtpo/cmdp.hpp"
#include "mtpo/preference.hpp"
#include "mtpo/solver.hpp"
#include "mtpo/values.hpp"

// File formats: CMDP and preference documents (JSON), trace / table CSV
// export. Matrix preference files carry the upper triangle only; the
// complement is filled in mechanically.

namespace mtpo::io {

using nlohmann::json;

class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

struct StateIndex {
  int layer;
  int index;
};

inline std::map<std::string, StateIndex> index_states(const Cmdp& m) {
  std::map<std::string, StateIndex> out;
  for (int h = 0; h < static_cast<int>(m.state_ids.size()); ++h)
    for (int x = 0; x < m.layer_size(h); ++x) {
      if (out.count(m.state_ids[h][x]))
        throw FormatError("duplicate state id: " + m.state_ids[h][x]);
      out[m.state_ids[h][x]] = {h, x};
    }
  return out;
}

inline int lookup(const std::vector<std::string>& ids, const std::string& id,
                  const std::string& what) {
  for (int i = 0; i < static_cast<int>(ids.size()); ++i)
    if (ids[i] == id) return i;
  throw FormatError("unknown " + what + " id: " + id);
}

}  // namespace detail

inline Cmdp cmdp_from_json(const json& j) {
  Cmdp m;
  try {
    m.horizon = j.at("horizon").get<int>();
    for (const auto& c : j.at("contexts")) {
      m.context_ids.push_back(c.at("id").get<std::string>());
      m.context_probs.push_back(c.at("prob").get<double>());
    }
    for (const auto& a : j.at("actions")) m.action_ids.push_back(a.get<std::string>());
    for (const auto& layer : j.at("layers")) {
      m.state_ids.emplace_back();
      for (const auto& s : layer) m.state_ids.back().push_back(s.get<std::string>());
    }
    if (static_cast<int>(m.state_ids.size()) != m.horizon + 1)
      throw FormatError("expected H+1 layers");

    const auto sidx = detail::index_states(m);
    m.transition.resize(m.num_contexts());
    for (int c = 0; c < m.num_contexts(); ++c) {
      m.transition[c].resize(m.horizon);
      for (int h = 0; h < m.horizon; ++h)
        m.transition[c][h].assign(m.layer_size(h),
                                  std::vector<Row>(m.num_actions(), Row(m.layer_size(h + 1), 0.0)));
    }
    for (const auto& e : j.at("transitions")) {
      const int c = detail::lookup(m.context_ids, e.at("context").get<std::string>(), "context");
      const auto st = sidx.at(e.at("state").get<std::string>());
      const int y = detail::lookup(m.action_ids, e.at("action").get<std::string>(), "action");
      if (st.layer >= m.horizon) throw FormatError("transition listed from a final state");
      Row& row = m.transition[c][st.layer][st.index][y];
      for (const auto& next : e.at("next")) {
        const auto nxt = sidx.at(next.at(0).get<std::string>());
        if (nxt.layer != st.layer + 1)
          throw FormatError("transition crosses more than one layer: " +
                            next.at(0).get<std::string>());
        row[nxt.index] = next.at(1).get<double>();
      }
    }

    m.reference.probs.resize(m.num_contexts());
    for (int c = 0; c < m.num_contexts(); ++c) {
      m.reference.probs[c].resize(m.horizon);
      for (int h = 0; h < m.horizon; ++h)
        m.reference.probs[c][h].assign(m.layer_size(h), Row(m.num_actions(), 0.0));
    }
    for (const auto& e : j.at("reference_policy")) {
      const int c = detail::lookup(m.context_ids, e.at("context").get<std::string>(), "context");
      const auto st = sidx.at(e.at("state").get<std::string>());
      const auto& probs = e.at("probs");
      if (static_cast<int>(probs.size()) != m.num_actions())
        throw FormatError("reference policy row has wrong length");
      for (int y = 0; y < m.num_actions(); ++y)
        m.reference.probs[c][st.layer][st.index][y] = probs[y].get<double>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed CMDP document: ") + e.what());
  } catch (const std::out_of_range&) {
    throw FormatError("CMDP document references an unknown state id");
  }
  validate_cmdp(m);
  return m;
}

inline Cmdp load_cmdp(const std::string& path) { return cmdp_from_json(detail::load_json(path)); }

inline json cmdp_to_json(const Cmdp& m) {
  json j;
  j["horizon"] = m.horizon;
  j["contexts"] = json::array();
  for (int c = 0; c < m.num_contexts(); ++c)
    j["contexts"].push_back({{"id", m.context_ids[c]}, {"prob", m.context_probs[c]}});
  j["actions"] = m.action_ids;
  j["layers"] = m.state_ids;
  j["transitions"] = json::array();
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x)
        for (int y = 0; y < m.num_actions(); ++y) {
          json next = json::array();
          for (int xn = 0; xn < m.layer_size(h + 1); ++xn)
            if (m.transition[c][h][x][y][xn] > 0.0)
              next.push_back({m.state_ids[h + 1][xn], m.transition[c][h][x][y][xn]});
          j["transitions"].push_back({{"context", m.context_ids[c]},
                                      {"state", m.state_ids[h][x]},
                                      {"action", m.action_ids[y]},
                                      {"next", next}});
        }
  j["reference_policy"] = json::array();
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x)
        j["reference_policy"].push_back({{"context", m.context_ids[c]},
                                         {"state", m.state_ids[h][x]},
                                         {"probs", m.reference.probs[c][h][x]}});
  return j;
}

/// Preference document: either `matrix` upper-triangle entries or
/// `bt_rewards` per-terminal-state rewards.
inline TerminalPreference preference_from_json(const json& j, const Cmdp& m) {
  const int n = m.layer_size(m.horizon);
  const auto sidx = detail::index_states(m);
  try {
    if (j.contains("bt_rewards")) {
      std::vector<Row> rewards(m.num_contexts(), Row(n, 0.0));
      for (const auto& e : j.at("bt_rewards")) {
        const int c = detail::lookup(m.context_ids, e.at("context").get<std::string>(), "context");
        const auto st = sidx.at(e.at("x").get<std::string>());
        if (st.layer != m.horizon) throw FormatError("bt reward on a non-final state");
        rewards[c][st.index] = e.at("reward").get<double>();
      }
      return bt_preference(rewards);
    }
    TerminalPreference pref;
    pref.matrix.assign(m.num_contexts(), std::vector<Row>(n, Row(n, 0.5)));
    for (const auto& e : j.at("matrix")) {
      const int c = detail::lookup(m.context_ids, e.at("context").get<std::string>(), "context");
      const auto a = sidx.at(e.at("x").get<std::string>());
      const auto b = sidx.at(e.at("x2").get<std::string>());
      if (a.layer != m.horizon || b.layer != m.horizon)
        throw FormatError("preference entry on a non-final state");
      if (a.index > b.index)
        throw FormatError("preference matrix entries must be upper-triangle (x before x2)");
      const double p = e.at("prob").get<double>();
      pref.matrix[c][a.index][b.index] = p;
      pref.matrix[c][b.index][a.index] = 1.0 - p;
    }
    validate_preference(pref, m);
    return pref;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed preference document: ") + e.what());
  } catch (const std::out_of_range&) {
    throw FormatError("preference document references an unknown state id");
  }
}

inline TerminalPreference load_preference(const std::string& path, const Cmdp& m) {
  return preference_from_json(detail::load_json(path), m);
}

inline std::string trace_csv(const SolverTrace& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "t,eta,kl_to_nash,fixedpoint_residual,exploitability,selfplay_pref,fi_slack,bound_margin\n";
  for (const auto& r : trace.records)
    out << r.t << ',' << r.eta << ',' << r.kl_to_nash << ',' << r.fixedpoint_residual << ','
        << r.exploitability << ',' << r.selfplay_pref << ',' << r.fi_slack << ','
        << r.bound_margin << '\n';
  return out.str();
}

inline std::string qtable_csv(const Cmdp& m, const QTable& qt) {
  std::ostringstream out;
  out.precision(17);
  out << "context,layer,state,action,value\n";
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h < m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x)
        for (int y = 0; y < m.num_actions(); ++y)
          out << m.context_ids[c] << ',' << h + 1 << ',' << m.state_ids[h][x] << ','
              << m.action_ids[y] << ',' << qt.q[c][h][x][y] << '\n';
  return out.str();
}

inline std::string vtable_csv(const Cmdp& m, const VTable& vt) {
  std::ostringstream out;
  out.precision(17);
  out << "context,layer,state,value\n";
  for (int c = 0; c < m.num_contexts(); ++c)
    for (int h = 0; h <= m.horizon; ++h)
      for (int x = 0; x < m.layer_size(h); ++x)
        out << m.context_ids[c] << ',' << h + 1 << ',' << m.state_ids[h][x] << ','
            << vt.v[c][h][x] << '\n';
  return out.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write file: " + path);
  out << content;
}

}  // namespace mtpo::io
