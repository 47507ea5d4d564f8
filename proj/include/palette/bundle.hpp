#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "palette/causal_model.hpp"
#include "palette/pfa.hpp"
#include "palette/topology.hpp"
#include "palette/trace_ingest.hpp"

namespace palette {

// The learned system model: service graph plus one automaton and one causal
// model per API.
struct Bundle {
  Topology topology;
  CoarsenConfig coarsen;
  std::map<VertexId, Pfa> pfas;
  std::map<VertexId, CausalModel> models;

  bool operator==(const Bundle&) const = default;
};

struct BuildConfig {
  std::size_t reservoir_size = kDefaultReservoirSize;
  std::uint64_t seed = 42;
  CoarsenConfig coarsen;
};

// Topology, automata and unfitted causal models (lambda = 1).
Bundle build_bundle(std::span<const TraceTree> traces, const BuildConfig& config);

// Fits every API's equation in place. APIs without enough complete
// observations keep lambda = 1 and are reported as "underdetermined".
std::vector<FitReport> fit_bundle(Bundle& bundle, std::span<const TraceTree> traces, const FitOptions& options);

// Every invariant of the topology, the automata and the causal models.
std::vector<std::string> validate_bundle(const Bundle& bundle);

}  // namespace palette
