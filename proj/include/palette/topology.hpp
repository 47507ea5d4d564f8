#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "palette/common.hpp"
#include "palette/reservoir.hpp"
#include "palette/trace_ingest.hpp"

namespace palette {

inline constexpr std::size_t kDefaultReservoirSize = 10000;

struct ApiVertex {
  VertexId id;
  std::uint64_t invocation_count = 0;
  // Invocations that were the root of their trace (the observed request mix).
  std::uint64_t root_count = 0;
  Reservoir latency{kDefaultReservoirSize};

  bool operator==(const ApiVertex&) const = default;
};

// Caller -> callee relationship. `latency` holds callee durations observed
// under this caller only.
struct CallEdge {
  VertexId caller;
  VertexId callee;
  std::uint64_t call_count = 0;
  bool is_remote = false;
  Reservoir latency{kDefaultReservoirSize};

  bool operator==(const CallEdge&) const = default;
};

using EdgeKey = std::pair<VertexId, VertexId>;

// Partitioned directed service graph.
struct Topology {
  std::size_t reservoir_size = kDefaultReservoirSize;
  std::uint64_t seed = 0;
  std::set<std::string> partitions;
  std::map<VertexId, ApiVertex> vertices;
  std::map<EdgeKey, CallEdge> edges;

  bool empty() const { return partitions.empty() && vertices.empty() && edges.empty(); }
  bool has_vertex(const VertexId& v) const { return vertices.contains(v); }
  std::vector<const CallEdge*> outgoing(const VertexId& caller) const;
  std::vector<const CallEdge*> incoming(const VertexId& callee) const;

  bool operator==(const Topology&) const = default;
};

// Traces in which some span's parent has the same (service, operation).
// Recursive APIs are outside the model; such traces are excluded from
// learning.
bool has_self_call(const TraceTree& trace);
std::vector<std::string> find_self_loop_traces(std::span<const TraceTree> traces);

// Aggregates traces into a topology. Traces containing self calls are
// skipped. Deterministic given the trace order and seed.
Topology build_topology(std::span<const TraceTree> traces, std::size_t reservoir_size,
                        std::uint64_t seed);

// Adds counts and merges reservoirs. The merge seed is derived symmetrically
// from both inputs' seeds.
Topology merge_topologies(const Topology& a, const Topology& b);

std::vector<std::string> check_topology(const Topology& topology);

}  // namespace palette
