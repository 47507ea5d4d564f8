#include "palette/bundle.hpp"

#include <algorithm>
#include <cmath>

namespace palette {

Bundle build_bundle(std::span<const TraceTree> traces, const BuildConfig& config) {
  config.coarsen.validate();
  Bundle b;
  b.coarsen = config.coarsen;
  b.topology = build_topology(traces, config.reservoir_size, config.seed);
  b.pfas = build_pfas(traces, config.coarsen);
  for (const auto& [api, pfa] : b.pfas) b.models.emplace(api, build_causal_graph(pfa));
  return b;
}

namespace {

// Keeps lambda = 1 and takes the residual from whatever complete
// observations exist; with none, local work is the mean latency not
// explained by the children.
FitResult fallback_fit(const VertexId& api, const CausalEquation& skeleton,
                       std::span<const Observation> observations, const ApiVertex* vertex,
                       const FitOptions& options) {
  FitResult r;
  r.equation = skeleton;
  r.report.api = api;
  r.report.kind = skeleton.kind;
  r.report.status = "underdetermined";
  r.report.iterations = 0;
  r.report.converged = false;
  for (auto& g : r.equation.groups) {
    for (auto& m : g.members) {
      m.lambda = 1.0;
      r.report.lambdas.emplace_back(label(g.label) + "/" + m.callee.str(), 1.0);
    }
  }
  ResidualModel residual;
  residual.pooled = Reservoir(options.reservoir_size);
  Rng rng(mix_seed(options.seed, fnv1a(api.str())));
  for (const auto& obs : observations) {
    try {
      residual.pooled.add(std::max(0.0, obs.latency - evaluate_steps(r.equation, obs.steps)), rng);
      ++r.report.sample_count;
    } catch (const ContractViolation&) {
      ++r.report.skipped_observations;
    }
  }
  if (residual.pooled.empty()) {
    const double mean_latency = vertex ? vertex->latency.mean() : 0.0;
    residual = ResidualModel::constant(std::max(0.0, mean_latency - expected_latency(r.equation)));
  }
  r.report.residual_mean = residual.mean();
  r.equation.local_work = std::move(residual);
  return r;
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

}  // namespace

std::vector<FitReport> fit_bundle(Bundle& bundle, std::span<const TraceTree> traces, const FitOptions& options) {
  const auto observations = collect_observations(traces, bundle.coarsen.overlap_epsilon_us);
  std::vector<FitReport> reports;
  for (auto& [api, model] : bundle.models) {
    const auto it = observations.find(api);
    const std::span<const Observation> obs =
        it == observations.end() ? std::span<const Observation>{} : std::span<const Observation>(it->second);
    FitResult r;
    try {
      r = fit(api, model.equation, obs, options);
    } catch (const UnderdeterminedFit&) {
      const auto v = bundle.topology.vertices.find(api);
      r = fallback_fit(api, model.equation, obs, v == bundle.topology.vertices.end() ? nullptr : &v->second,
                       options);
    }
    model.equation = std::move(r.equation);
    reports.push_back(std::move(r.report));
  }
  return reports;
}

std::vector<std::string> validate_bundle(const Bundle& bundle) {
  std::vector<std::string> v = check_topology(bundle.topology);
  const Topology& topo = bundle.topology;

  for (const auto& [id, vertex] : topo.vertices) {
    if (!bundle.pfas.contains(id)) v.push_back("api " + id.str() + " has no automaton");
    if (!bundle.models.contains(id)) v.push_back("api " + id.str() + " has no causal model");
  }

  for (const auto& [api, pfa] : bundle.pfas) {
    const std::string name = "api " + api.str();
    if (!(pfa.api == api)) v.push_back(name + ": automaton stored under a different key");
    if (!topo.has_vertex(api)) v.push_back(name + ": automaton for unknown vertex");
    auto pv = check_pfa(pfa);
    for (auto& m : pv) v.push_back(name + ": " + m);
    if (!pv.empty()) continue;
    for (std::size_t s = 2; s < pfa.states.size(); ++s) {
      for (const auto& callee : pfa.states[s].call_set) {
        if (!topo.edges.contains({api, callee})) {
          v.push_back(name + ": state " + std::to_string(s) + " calls " + callee.str() + " without an edge");
        }
      }
    }
  }
  for (const auto& [key, e] : topo.edges) {
    const auto it = bundle.pfas.find(key.first);
    if (it == bundle.pfas.end()) continue;
    bool used = false;
    for (const auto& st : it->second.states) {
      used = used || std::find(st.call_set.begin(), st.call_set.end(), key.second) != st.call_set.end();
    }
    if (!used) v.push_back("edge " + key.first.str() + " -> " + key.second.str() + " is not used by any state");
  }

  for (const auto& [api, model] : bundle.models) {
    const std::string name = "api " + api.str();
    const CausalEquation& eq = model.equation;
    if (!(model.graph.api == api)) v.push_back(name + ": causal model stored under a different key");
    double choice_sum = 0.0;
    for (const auto& c : eq.choices) {
      if (!(c.probability >= 0.0 && c.probability <= 1.0 + 1e-12)) {
        v.push_back(name + ": choice " + label(c.label) + " probability out of range");
      }
      choice_sum += c.probability;
    }
    if (std::abs(choice_sum - 1.0) > 1e-9) {
      v.push_back(name + ": choice probabilities sum to " + std::to_string(choice_sum));
    }
    for (const auto& g : eq.groups) {
      if (g.members.size() != g.label.size()) v.push_back(name + ": group " + label(g.label) + " misaligned");
      for (std::size_t m = 0; m < g.members.size() && m < g.label.size(); ++m) {
        const Term& t = g.members[m];
        if (!(t.callee == g.label[m])) v.push_back(name + ": group " + label(g.label) + " misaligned");
        if (!(t.lambda >= 0.0) || !std::isfinite(t.lambda)) {
          v.push_back(name + ": lambda for " + t.callee.str() + " must be finite and >= 0");
        }
        if (!(t.call_probability >= 0.0 && t.call_probability <= 1.0 + 1e-12)) {
          v.push_back(name + ": call probability for " + t.callee.str() + " out of range");
        }
      }
    }
    for (const auto& c : model.graph.called_nodes) {
      if (!(c.c >= 0.0 && c.c <= 1.0 + 1e-12)) v.push_back(name + ": called node " + c.callee.str() + " out of range");
    }
    if (!std::isfinite(eq.intercept)) v.push_back(name + ": intercept is not finite");
    if (eq.local_work.mode == ResidualModel::Mode::constant && !(eq.local_work.constant_us >= 0.0)) {
      v.push_back(name + ": constant local work must be >= 0");
    }

    // The model's structure must be the one its automaton implies.
    const auto pfa = bundle.pfas.find(api);
    if (pfa == bundle.pfas.end() || !check_pfa(pfa->second).empty()) continue;
    const CausalModel expect = build_causal_graph(pfa->second);
    if (expect.graph.child_latency_nodes != model.graph.child_latency_nodes) {
      v.push_back(name + ": causal graph callees differ from the automaton");
    }
    if (expect.equation.kind != eq.kind) v.push_back(name + ": equation kind differs from the automaton");
    if (expect.equation.groups.size() != eq.groups.size()) {
      v.push_back(name + ": equation terms differ from the automaton");
    } else {
      for (std::size_t i = 0; i < eq.groups.size(); ++i) {
        const auto& a = eq.groups[i];
        const auto& b = expect.equation.groups[i];
        if (a.label != b.label) {
          v.push_back(name + ": equation terms differ from the automaton");
          break;
        }
        if (!near(a.reach_probability, b.reach_probability, 1e-6) ||
            !near(a.expected_visits, b.expected_visits, 1e-6)) {
          v.push_back(name + ": group " + label(a.label) + " probabilities are stale");
        }
      }
    }
    if (expect.equation.choices.size() != eq.choices.size()) {
      v.push_back(name + ": choices differ from the automaton");
    } else {
      for (std::size_t i = 0; i < eq.choices.size(); ++i) {
        if (eq.choices[i].label != expect.equation.choices[i].label ||
            !near(eq.choices[i].probability, expect.equation.choices[i].probability, 1e-9)) {
          v.push_back(name + ": choice " + label(eq.choices[i].label) + " differs from the automaton");
        }
      }
    }
  }
  return v;
}

}  // namespace palette
