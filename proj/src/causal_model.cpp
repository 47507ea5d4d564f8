#include "palette/causal_model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "palette/nnls.hpp"
#include "palette/stats.hpp"
#include "palette/topology.hpp"

namespace palette {

namespace {

// Solves M x = rhs; falls back to fixed-point sweeps of x = rhs + (I - M) x
// when M is singular (possible only for automata with zero-mass exits).
Eigen::VectorXd solve_chain(const Eigen::MatrixXd& M, const Eigen::VectorXd& rhs) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (lu.isInvertible()) return lu.solve(rhs);
  const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(M.rows(), M.cols()) - M;
  Eigen::VectorXd x = rhs;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::VectorXd next = rhs + step * x;
    if ((next - x).cwiseAbs().maxCoeff() < 1e-14) return next;
    x = next;
  }
  return x;
}

// Probability that a walk from start enters some state satisfying `hit`.
double reach_probability(const Pfa& pfa, const std::function<bool(const PfaState&)>& hit) {
  const auto n = static_cast<Eigen::Index>(pfa.states.size());
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    if (pfa.states[s].kind == StateKind::step && hit(pfa.states[s])) {
      rhs(s) = 1.0;
      continue;
    }
    for (const auto& t : pfa.outgoing(static_cast<StateId>(s))) M(s, t.to) -= t.probability;
  }
  return std::clamp(solve_chain(M, rhs)(Pfa::kStart), 0.0, 1.0);
}

Eigen::VectorXd expected_visits(const Pfa& pfa) {
  const auto n = static_cast<Eigen::Index>(pfa.states.size());
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  for (const auto& t : pfa.transitions) M(t.to, t.from) -= t.probability;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e(Pfa::kStart) = 1.0;
  return solve_chain(M, e);
}

double group_value(const TermGroup& g, std::span<const double> latencies) {
  if (!g.concurrent()) return g.members.front().lambda * latencies.front();
  double best = 0.0;
  for (std::size_t m = 0; m < g.members.size(); ++m) {
    best = std::max(best, g.members[m].lambda * latencies[m]);
  }
  return best;
}

std::size_t argmax_member(const TermGroup& g, std::span<const double> lambdas,
                          std::span<const double> latencies) {
  std::size_t best = 0;
  double best_value = lambdas[0] * latencies[0];
  for (std::size_t m = 1; m < latencies.size(); ++m) {
    const double v = lambdas[m] * latencies[m];
    if (v > best_value) {
      best_value = v;
      best = m;
    }
  }
  (void)g;
  return best;
}

}  // namespace

std::string_view to_string(EquationKind kind) {
  switch (kind) {
    case EquationKind::sequential: return "sequential";
    case EquationKind::concurrent: return "concurrent";
    case EquationKind::choice: return "choice";
    case EquationKind::probability: return "probability";
  }
  return "unknown";
}

EquationKind equation_kind_from_string(std::string_view text) {
  if (text == "sequential") return EquationKind::sequential;
  if (text == "concurrent") return EquationKind::concurrent;
  if (text == "choice") return EquationKind::choice;
  if (text == "probability") return EquationKind::probability;
  throw SchemaError("unknown equation kind '" + std::string(text) + "'");
}

ResidualModel ResidualModel::constant(double us) {
  ResidualModel r;
  r.mode = Mode::constant;
  r.constant_us = us;
  return r;
}

double ResidualModel::sample(Rng& rng, std::string_view caller) const {
  if (mode == Mode::constant) return std::max(0.0, constant_us);
  if (keyed_by_caller) {
    const auto it = by_caller.find(std::string(caller));
    if (it != by_caller.end() && !it->second.empty()) return std::max(0.0, it->second.sample(rng));
  }
  return std::max(0.0, pooled.sample(rng));
}

double ResidualModel::mean() const {
  if (mode == Mode::constant) return std::max(0.0, constant_us);
  return pooled.mean();
}

const TermGroup* CausalEquation::find_group(const CallSet& label) const {
  const auto it = std::lower_bound(groups.begin(), groups.end(), label,
                                   [](const TermGroup& g, const CallSet& l) { return g.label < l; });
  if (it == groups.end() || it->label != label) return nullptr;
  return &*it;
}

std::vector<VertexId> CausalEquation::callees() const {
  std::vector<VertexId> out;
  for (const auto& g : groups) {
    for (const auto& m : g.members) out.push_back(m.callee);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

CausalModel build_causal_graph(const Pfa& pfa) {
  CausalModel model;
  model.graph.api = pfa.api;
  CausalEquation& eq = model.equation;

  const Eigen::VectorXd visits = expected_visits(pfa);
  std::map<CallSet, double> label_visits;
  for (std::size_t s = 0; s < pfa.states.size(); ++s) {
    if (pfa.states[s].kind != StateKind::step) continue;
    label_visits[pfa.states[s].call_set] += std::max(0.0, visits(static_cast<Eigen::Index>(s)));
  }

  for (const auto& [label, v] : label_visits) {
    TermGroup g;
    g.label = label;
    g.expected_visits = v;
    g.reach_probability = reach_probability(pfa, [&label](const PfaState& st) { return st.call_set == label; });
    for (const auto& callee : label) {
      g.members.push_back({callee, g.reach_probability, 1.0, 0.0});
    }
    eq.groups.push_back(std::move(g));
  }

  for (const auto& [label, p] : first_step_distribution(pfa)) eq.choices.push_back({label, p});

  bool branches = false;
  for (StateId s = 0; s < pfa.states.size(); ++s) {
    if (pfa.outgoing(s).size() > 1) branches = true;
  }
  if (eq.groups.empty()) {
    eq.kind = EquationKind::sequential;
  } else if (branches) {
    eq.kind = EquationKind::choice;
  } else if (eq.groups.size() == 1 && eq.groups.front().concurrent()) {
    eq.kind = EquationKind::concurrent;
  } else {
    eq.kind = EquationKind::sequential;
  }

  model.graph.child_latency_nodes = eq.callees();
  for (const auto& callee : model.graph.child_latency_nodes) {
    const double c = reach_probability(pfa, [&callee](const PfaState& st) {
      return std::find(st.call_set.begin(), st.call_set.end(), callee) != st.call_set.end();
    });
    model.graph.called_nodes.push_back({callee, c});
  }
  return model;
}

std::vector<ObservedStep> observed_steps(std::span<const Span> children, std::int64_t epsilon_us) {
  std::vector<ObservedStep> steps;
  for (const auto& g : step_groups(children, epsilon_us)) {
    ObservedStep step;
    for (std::size_t i : g) {
      step.label.push_back(children[i].vertex());
      step.latencies.push_back(static_cast<double>(children[i].duration_us));
    }
    steps.push_back(std::move(step));
  }
  return steps;
}

std::map<VertexId, std::vector<Observation>> collect_observations(std::span<const TraceTree> traces,
                                                                  std::int64_t epsilon_us) {
  std::map<VertexId, std::vector<Observation>> out;
  std::vector<Span> children;
  for (const auto& trace : traces) {
    if (has_self_call(trace)) continue;
    for (const auto& node : trace.nodes) {
      children.clear();
      for (std::size_t c : node.children) children.push_back(trace.nodes[c].span);
      Observation obs;
      obs.latency = static_cast<double>(node.span.duration_us);
      obs.steps = observed_steps(children, epsilon_us);
      if (node.parent) obs.upstream_caller = trace.nodes[*node.parent].span.vertex().str();
      out[node.span.vertex()].push_back(std::move(obs));
    }
  }
  return out;
}

FitResult fit(const VertexId& api, const CausalEquation& skeleton, std::span<const Observation> observations,
              const FitOptions& options) {
  FitResult result;
  result.equation = skeleton;
  CausalEquation& eq = result.equation;
  FitReport& report = result.report;
  report.api = api;
  report.kind = eq.kind;

  // Column layout: one column per (group, member), then the intercept.
  std::vector<std::size_t> group_offset;
  std::size_t columns = 0;
  for (const auto& g : eq.groups) {
    group_offset.push_back(columns);
    columns += g.members.size();
  }

  // Complete observations only: every step must map onto a known group.
  struct Row {
    const Observation* obs;
    std::vector<const TermGroup*> step_groups;
  };
  std::vector<Row> rows;
  for (const auto& obs : observations) {
    Row row{&obs, {}};
    bool complete = true;
    for (const auto& step : obs.steps) {
      const TermGroup* g = eq.find_group(step.label);
      if (g == nullptr || step.latencies.size() != g->members.size()) {
        complete = false;
        break;
      }
      row.step_groups.push_back(g);
    }
    if (complete) {
      rows.push_back(std::move(row));
    } else {
      ++report.skipped_observations;
    }
  }
  if (rows.size() < columns + 1) {
    throw UnderdeterminedFit("underdetermined fit for " + api.str() + ": " + std::to_string(rows.size()) +
                             " complete observations for " + std::to_string(columns) + " terms");
  }

  auto group_index = [&eq](const TermGroup* g) { return static_cast<std::size_t>(g - eq.groups.data()); };

  std::vector<double> lambda(columns, 1.0);
  // Per row, per step: selected member (0 for single-member groups).
  auto assign = [&]() {
    std::vector<std::vector<std::size_t>> a(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& steps = rows[r].obs->steps;
      a[r].resize(steps.size(), 0);
      for (std::size_t k = 0; k < steps.size(); ++k) {
        const TermGroup* g = rows[r].step_groups[k];
        if (!g->concurrent()) continue;
        const std::size_t off = group_offset[group_index(g)];
        a[r][k] = argmax_member(*g, std::span<const double>(lambda).subspan(off, g->members.size()),
                                steps[k].latencies);
      }
    }
    return a;
  };

  const bool has_concurrent =
      std::any_of(eq.groups.begin(), eq.groups.end(), [](const TermGroup& g) { return g.concurrent(); });

  const auto n_rows = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd y(n_rows);
  for (Eigen::Index r = 0; r < n_rows; ++r) y(r) = rows[r].obs->latency;
  std::vector<bool> free(columns + 1, false);
  free[columns] = true;

  auto assignment = assign();
  Eigen::MatrixXd X;
  Eigen::VectorXd solution;
  report.converged = false;
  for (report.iterations = 1; report.iterations <= options.max_iterations; ++report.iterations) {
    X = Eigen::MatrixXd::Zero(n_rows, static_cast<Eigen::Index>(columns + 1));
    for (Eigen::Index r = 0; r < n_rows; ++r) {
      const auto& steps = rows[r].obs->steps;
      for (std::size_t k = 0; k < steps.size(); ++k) {
        const TermGroup* g = rows[r].step_groups[k];
        const std::size_t m = assignment[r][k];
        X(r, static_cast<Eigen::Index>(group_offset[group_index(g)] + m)) += steps[k].latencies[m];
      }
      X(r, static_cast<Eigen::Index>(columns)) = 1.0;
    }
    solution = nnls(X, y, free).x;
    for (std::size_t c = 0; c < columns; ++c) {
      // A column that is never selected carries no information; keep its
      // previous coefficient rather than collapsing it to zero.
      if (X.col(static_cast<Eigen::Index>(c)).cwiseAbs().maxCoeff() > 0.0) {
        lambda[c] = solution(static_cast<Eigen::Index>(c));
      }
    }
    if (!has_concurrent) {
      report.converged = true;
      break;
    }
    auto next = assign();
    if (next == assignment) {
      report.converged = true;
      break;
    }
    assignment = std::move(next);
  }
  report.iterations = std::min(report.iterations, options.max_iterations);
  if (!report.converged) report.status = "not_converged";

  // Write coefficients and mean latencies back into the equation.
  std::vector<double> latency_sum(columns, 0.0);
  std::vector<std::size_t> latency_n(columns, 0);
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.obs->steps.size(); ++k) {
      const TermGroup* g = row.step_groups[k];
      const std::size_t off = group_offset[group_index(g)];
      for (std::size_t m = 0; m < g->members.size(); ++m) {
        latency_sum[off + m] += row.obs->steps[k].latencies[m];
        ++latency_n[off + m];
      }
    }
  }
  for (std::size_t gi = 0; gi < eq.groups.size(); ++gi) {
    auto& g = eq.groups[gi];
    for (std::size_t m = 0; m < g.members.size(); ++m) {
      const std::size_t c = group_offset[gi] + m;
      g.members[m].lambda = std::max(0.0, lambda[c]);
      g.members[m].mean_latency = latency_n[c] ? latency_sum[c] / static_cast<double>(latency_n[c]) : 0.0;
      report.lambdas.emplace_back(label(g.label) + "/" + g.members[m].callee.str(), g.members[m].lambda);
    }
  }
  eq.intercept = solution(static_cast<Eigen::Index>(columns));
  report.intercept = eq.intercept;

  // Residual = observed latency minus the structural part (intercept included).
  ResidualModel residual;
  residual.pooled = Reservoir(options.reservoir_size);
  residual.keyed_by_caller = eq.groups.empty();
  Rng rng(mix_seed(options.seed, fnv1a(api.str())));
  std::vector<double> all;
  all.reserve(rows.size());
  for (const auto& row : rows) {
    const double r = row.obs->latency - evaluate_steps(eq, row.obs->steps);
    all.push_back(r);
    residual.pooled.add(r, rng);
    if (residual.keyed_by_caller) {
      auto [it, fresh] = residual.by_caller.try_emplace(row.obs->upstream_caller, options.reservoir_size);
      it->second.add(r, rng);
    }
  }
  eq.local_work = std::move(residual);

  report.sample_count = rows.size();
  report.residual_mean = mean(all);
  std::sort(all.begin(), all.end());
  report.residual_p50 = quantile_sorted(all, 0.5);
  report.residual_p99 = quantile_sorted(all, 0.99);
  return result;
}

double evaluate(const CausalEquation& equation, const std::map<VertexId, double>& measured,
                const std::map<VertexId, bool>& called) {
  double total = 0.0;
  for (const auto& g : equation.groups) {
    double group_total = 0.0;
    for (const auto& m : g.members) {
      const auto c = called.find(m.callee);
      if (c == called.end() || !c->second) continue;
      const auto it = measured.find(m.callee);
      if (it == measured.end()) {
        throw ContractViolation("evaluate: callee " + m.callee.str() + " is called but has no measurement");
      }
      const double v = m.lambda * it->second;
      group_total = g.concurrent() ? std::max(group_total, v) : group_total + v;
    }
    total += group_total;
  }
  return total;
}

double evaluate_steps(const CausalEquation& equation, std::span<const ObservedStep> steps) {
  double total = 0.0;
  for (const auto& step : steps) {
    const TermGroup* g = equation.find_group(step.label);
    if (g == nullptr || step.latencies.size() != g->members.size()) {
      throw ContractViolation("evaluate_steps: step " + label(step.label) + " is not part of the equation");
    }
    total += group_value(*g, step.latencies);
  }
  return total;
}

double expected_latency(const CausalEquation& equation) {
  double total = 0.0;
  for (const auto& g : equation.groups) {
    std::vector<double> means;
    for (const auto& m : g.members) means.push_back(m.mean_latency);
    total += g.expected_visits * group_value(g, means);
  }
  return total;
}

bool sample_called(double c, Rng& rng) {
  if (!(c >= 0.0 && c <= 1.0)) throw ContractViolation("called probability must lie in [0, 1]");
  return rng.uniform01() < c;
}

bool sample_called(const CalledNode& node, Rng& rng) { return sample_called(node.c, rng); }

}  // namespace palette
