#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "palette/bundle.hpp"
#include "palette/interventions.hpp"
#include "palette/trace_ingest.hpp"

namespace palette::fixtures {

// Accumulates spans with sequential ids inside one trace.
class TraceWriter {
 public:
  explicit TraceWriter(std::string trace_id) : trace_id_(std::move(trace_id)) {}

  // Returns the new span's index for use as a parent.
  std::size_t add(std::optional<std::size_t> parent, const VertexId& v, std::int64_t start, std::int64_t duration);
  void set_duration(std::size_t index, std::int64_t duration) { spans_[index].duration_us = duration; }
  std::vector<Span>& spans() { return spans_; }

 private:
  std::string trace_id_;
  std::vector<Span> spans_;
};

double lognormal(Rng& rng, double median, double sigma);

// Five-service example: root A whose first step is B (0.4), C (0.5) or D||E (0.1);
// after B, D||E follows with 0.2; after C, D||E follows with 0.1; D||E is
// always last. 100 * scale traces with exactly those proportions.
inline const VertexId kA{"A", "run"};
inline const VertexId kB{"B", "run"};
inline const VertexId kC{"C", "run"};
inline const VertexId kD{"D", "run"};
inline const VertexId kE{"E", "run"};
std::vector<Span> example_spans(std::size_t scale, std::uint64_t seed);

// Two callers of one leaf: A.call -> B.work (B median 10 ms) and
// C.call -> B.work (B median 100 ms), lognormal sigma 0.5.
inline const VertexId kCallerA{"A", "call"};
inline const VertexId kSharedLeaf{"B", "work"};
inline const VertexId kCallerC{"C", "call"};
inline constexpr double kLightMedianUs = 10000.0;
inline constexpr double kHeavyMedianUs = 100000.0;
inline constexpr double kLeafSigma = 0.5;
std::vector<Span> two_caller_spans(std::size_t per_caller, std::uint64_t seed);

// Random acyclic system: `services` services with one or two operations,
// each non-leaf API picking among a few random step sequences. The first
// three APIs are roots and every other API has at least one caller.
std::vector<Span> random_system_spans(std::size_t services, std::size_t traces, std::uint64_t seed);

std::vector<TraceTree> assemble(const std::vector<Span>& spans);
Bundle fitted_bundle(const std::vector<Span>& spans, const BuildConfig& config);

// A random op that mostly names existing entities; it may still be rejected.
InterventionOp random_op(const Bundle& bundle, Rng& rng, std::size_t serial);

}  // namespace palette::fixtures
