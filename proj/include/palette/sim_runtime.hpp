#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "palette/bundle.hpp"
#include "palette/trace_ingest.hpp"

namespace palette {

enum class WorkModel { virtual_time, busy };

WorkModel work_model_from_string(std::string_view text);

struct SimConfig {
  // When unset, each request picks its root from the observed request mix.
  std::optional<VertexId> root;
  std::size_t request_count = 1;
  std::uint64_t seed = 42;
  double open_loop_rate = 1000.0;  // requests per virtual second
  std::optional<std::size_t> closed_concurrency;
  WorkModel work_model = WorkModel::virtual_time;
  // Mean-only baseline: every API takes its unconditioned mean latency.
  bool naive = false;
  std::size_t max_depth = 64;
  std::size_t threads = 1;

  void validate() const;
};

// Realized vs expected structural latency per API. The expectation is the
// causal equation with fitted means for whichever callees actually ran.
struct Divergence {
  std::uint64_t invocations = 0;
  double expected_sum = 0.0;
  double realized_sum = 0.0;
  double abs_sum = 0.0;
};

struct SimStats {
  std::uint64_t requests = 0;
  std::uint64_t completed = 0;
  std::uint64_t aborted_depth = 0;
  std::uint64_t aborted_walk = 0;
  std::uint64_t spans = 0;
  // Spans whose own latency was shorter than their children's elapsed time
  // and were extended to cover them.
  std::uint64_t stretched_spans = 0;
  std::map<VertexId, Divergence> divergence;
};

struct SimOutput {
  std::vector<Span> spans;  // request order, pre-order within a request
  SimStats stats;
};

SimOutput simulate(const Bundle& bundle, const SimConfig& config);

// Key/value context handed from caller to callee.
using Baggage = std::map<std::string, std::string>;

inline constexpr std::string_view kUpstreamCallerKey = "upstream_caller";

// Child baggage: the parent's entries, the immediate caller under
// kUpstreamCallerKey (replaced at every hop) and `declared` measurements,
// which may not overwrite an existing key.
Baggage make_baggage(const Baggage& parent, const VertexId& caller, const Baggage& declared = {});

// Structural latency with measured values for completed callees and fitted
// mean latencies for pending ones. Callees in neither set are not called.
double correct(const CausalEquation& equation, const std::map<VertexId, double>& measured,
               const std::set<VertexId>& pending);

}  // namespace palette
