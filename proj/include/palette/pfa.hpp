#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "palette/common.hpp"
#include "palette/trace_ingest.hpp"

namespace palette {

enum class StateKind { start, finish, step };

std::string_view to_string(StateKind kind);

using StateId = std::uint32_t;

struct PfaState {
  StateKind kind = StateKind::step;
  CallSet call_set;  // empty for start and finish

  bool operator==(const PfaState&) const = default;
};

struct PfaTransition {
  StateId from = 0;
  StateId to = 0;
  double probability = 0.0;
  std::uint64_t count = 0;

  bool operator==(const PfaTransition&) const = default;
};

// Per-API probabilistic automaton over execution steps. A state's id is its
// index in `states`; start is always 0 and finish always 1. Transitions are
// kept sorted by (from, to) with at most one entry per pair.
struct Pfa {
  static constexpr StateId kStart = 0;
  static constexpr StateId kFinish = 1;

  VertexId api;
  std::vector<PfaState> states;
  std::vector<PfaTransition> transitions;

  std::span<const PfaTransition> outgoing(StateId state) const;
  const PfaTransition* find_transition(StateId from, StateId to) const;
  std::size_t step_count() const { return states.size() - 2; }
  bool is_leaf() const;  // no step states at all

  bool operator==(const Pfa&) const = default;
};

struct CoarsenConfig {
  double tau = 0.05;                    // L1 tolerance on successor distributions
  std::int64_t overlap_epsilon_us = 0;  // sibling overlap slack

  void validate() const;
  bool operator==(const CoarsenConfig&) const = default;
};

// Groups a parent's children into steps. Two children overlap iff
// start_a < end_b + eps and start_b < end_a + eps; steps are the connected
// groups of the overlap relation, ordered by earliest member start.
std::vector<CallSet> extract_steps(std::span<const Span> children, std::int64_t epsilon_us);
// Same grouping, returned as indices into `children`. Members of a group are
// ordered by (vertex, duration) so they line up with the sorted call set.
std::vector<std::vector<std::size_t>> step_groups(std::span<const Span> children, std::int64_t epsilon_us);
std::vector<CallSet> extract_steps(const TraceTree& trace, std::size_t node, std::int64_t epsilon_us);

// Prefix tree over the observed step sequences with maximum-likelihood
// transition probabilities. Every call set must be non-empty.
Pfa build_pfa(const VertexId& api, std::span<const std::vector<CallSet>> sequences);

// Merges same-label step states whose successor distributions (over target
// labels) are within `tau` in L1, lowest id pair first, until no pair
// qualifies. Targets that become same-label siblings are folded as well.
Pfa coarsen(const Pfa& pfa, const CoarsenConfig& config);

class PfaWalkError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kDefaultMaxWalkSteps = 10000;

std::vector<CallSet> sample_path(const Pfa& pfa, Rng& rng,
                                 std::size_t max_steps = kDefaultMaxWalkSteps);

// Distribution over the first step's label; finish is the empty call set.
std::map<CallSet, double> first_step_distribution(const Pfa& pfa);
// Successor distribution of one state, keyed by target label.
std::map<CallSet, double> successor_distribution(const Pfa& pfa, StateId state);

double l1_distance(const std::map<CallSet, double>& a, const std::map<CallSet, double>& b);

// Renumbers states breadth-first from start (targets visited in label
// order), drops states unreachable from start, and recomputes probabilities
// from counts when `from_counts` is set.
Pfa canonicalize(const Pfa& pfa, bool from_counts);

// Invariant violations; empty when the automaton is valid.
std::vector<std::string> check_pfa(const Pfa& pfa);

// One automaton per API seen in the traces (self-call traces skipped).
std::map<VertexId, Pfa> build_pfas(std::span<const TraceTree> traces, const CoarsenConfig& config);

}  // namespace palette
