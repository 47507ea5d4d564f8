#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palette/common.hpp"
#include "palette/pfa.hpp"
#include "palette/reservoir.hpp"
#include "palette/trace_ingest.hpp"

namespace palette {

enum class EquationKind { sequential, concurrent, choice, probability };

std::string_view to_string(EquationKind kind);
EquationKind equation_kind_from_string(std::string_view text);

// One callee's contribution: p_a * lambda_a * a.
struct Term {
  VertexId callee;
  double call_probability = 1.0;  // p_a
  double lambda = 1.0;
  double mean_latency = 0.0;  // mean observed callee latency, used for expectations

  bool operator==(const Term&) const = default;
};

// All PFA steps sharing one call-set label. A single-member group is a plain
// term; a multi-member group is a Concurrent max over its members.
struct TermGroup {
  CallSet label;
  std::vector<Term> members;  // aligned with `label`
  double reach_probability = 0.0;
  double expected_visits = 0.0;

  bool concurrent() const { return members.size() > 1; }
  bool operator==(const TermGroup&) const = default;
};

// A branch out of the start state. The empty label is the finish branch.
struct ChoiceBranch {
  CallSet label;
  double probability = 0.0;

  bool operator==(const ChoiceBranch&) const = default;
};

// Local work (the "+ C" term) as an empirical distribution of residuals.
// Leaf APIs key their residuals by the immediate upstream caller.
struct ResidualModel {
  enum class Mode { empirical, constant };

  Mode mode = Mode::empirical;
  double constant_us = 0.0;
  Reservoir pooled{kResidualCapacity};
  bool keyed_by_caller = false;
  std::map<std::string, Reservoir> by_caller;

  static constexpr std::size_t kResidualCapacity = 10000;

  static ResidualModel constant(double us);

  // Never negative.
  double sample(Rng& rng, std::string_view caller = {}) const;
  double mean() const;

  bool operator==(const ResidualModel&) const = default;
};

struct CausalEquation {
  EquationKind kind = EquationKind::sequential;
  std::vector<TermGroup> groups;  // ordered by label
  std::vector<ChoiceBranch> choices;
  double intercept = 0.0;  // fitted constant part of C, reported only
  ResidualModel local_work;

  const TermGroup* find_group(const CallSet& label) const;
  std::vector<VertexId> callees() const;  // distinct, sorted

  bool operator==(const CausalEquation&) const = default;
};

// Bernoulli "called" node feeding the API's latency node.
struct CalledNode {
  VertexId callee;
  double c = 0.0;

  bool operator==(const CalledNode&) const = default;
};

// Latency causal graph of one API: one latency node per distinct callee and
// one called node per callee, all with edges into the API's latency node.
struct CausalGraph {
  VertexId api;
  std::vector<VertexId> child_latency_nodes;
  std::vector<CalledNode> called_nodes;

  bool operator==(const CausalGraph&) const = default;
};

struct CausalModel {
  CausalGraph graph;
  CausalEquation equation;

  bool operator==(const CausalModel&) const = default;
};

// Derives graph and unfitted equation (lambda = 1) from an automaton.
CausalModel build_causal_graph(const Pfa& pfa);

// One step of an observed invocation; latencies align with the label.
struct ObservedStep {
  CallSet label;
  std::vector<double> latencies;
};

struct Observation {
  double latency = 0.0;
  std::vector<ObservedStep> steps;
  std::string upstream_caller;  // empty for trace roots
};

std::vector<ObservedStep> observed_steps(std::span<const Span> children, std::int64_t epsilon_us);
std::map<VertexId, std::vector<Observation>> collect_observations(std::span<const TraceTree> traces,
                                                                  std::int64_t epsilon_us);

struct FitOptions {
  std::size_t reservoir_size = ResidualModel::kResidualCapacity;
  std::uint64_t seed = 42;
  std::size_t max_iterations = 100;
};

struct FitReport {
  VertexId api;
  EquationKind kind = EquationKind::sequential;
  std::vector<std::pair<std::string, double>> lambdas;  // "label/callee" -> lambda
  double intercept = 0.0;
  double residual_mean = 0.0;
  double residual_p50 = 0.0;
  double residual_p99 = 0.0;
  std::size_t sample_count = 0;
  std::size_t skipped_observations = 0;
  std::size_t iterations = 0;
  bool converged = true;
  std::string status = "ok";  // ok | not_converged | underdetermined
};

struct FitResult {
  CausalEquation equation;
  FitReport report;
};

class UnderdeterminedFit : public Error {
 public:
  using Error::Error;
};

// Fits lambdas (nonnegative) and the residual model. Sequential and Choice
// terms use NNLS on called * latency; Concurrent groups alternate argmax
// reassignment and NNLS until the assignment is stable.
FitResult fit(const VertexId& api, const CausalEquation& skeleton, std::span<const Observation> observations,
              const FitOptions& options = {});

// Structural latency (no residual) from per-callee measurements.
double evaluate(const CausalEquation& equation, const std::map<VertexId, double>& measured,
                const std::map<VertexId, bool>& called);
// Structural latency of a realized step sequence.
double evaluate_steps(const CausalEquation& equation, std::span<const ObservedStep> steps);
// Structural latency expected over the automaton's paths.
double expected_latency(const CausalEquation& equation);

bool sample_called(double c, Rng& rng);
bool sample_called(const CalledNode& node, Rng& rng);

}  // namespace palette
