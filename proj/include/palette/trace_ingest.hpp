#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "palette/common.hpp"

namespace palette {

// One observed API execution.
struct Span {
  std::string trace_id;
  std::string span_id;
  std::optional<std::string> parent_span_id;  // absent => root
  std::string service;
  std::string operation;
  std::int64_t start_us = 0;
  std::int64_t duration_us = 0;

  std::int64_t end_us() const { return start_us + duration_us; }
  VertexId vertex() const { return {service, operation}; }

  bool operator==(const Span&) const = default;
};

struct SpanNode {
  Span span;
  std::optional<std::size_t> parent;
  std::vector<std::size_t> children;  // ordered by (start_us, span_id)

  bool operator==(const SpanNode&) const = default;
};

// Per-request tree. `nodes` are stored in pre-order so nodes[0] is the root
// and a parent always precedes its children.
struct TraceTree {
  std::string trace_id;
  std::vector<SpanNode> nodes;

  const SpanNode& root() const { return nodes.front(); }
  std::size_t size() const { return nodes.size(); }

  bool operator==(const TraceTree&) const = default;
};

struct LineDiagnostic {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ParseResult {
  std::vector<Span> spans;
  std::size_t skipped = 0;
  std::vector<LineDiagnostic> diagnostics;
};

// Reads line-delimited span records. Blank lines are ignored; malformed lines
// are skipped and reported. Throws Error if the stream cannot be read.
ParseResult parse_spans(std::istream& in);
ParseResult parse_spans_file(const std::filesystem::path& path);

std::string serialize_span(const Span& span);
void write_spans(std::ostream& out, std::span<const Span> spans);
void write_traces(std::ostream& out, std::span<const TraceTree> traces);

enum class RejectReason { missing_parent, multiple_roots, cycle, duplicate_span_id };

std::string_view to_string(RejectReason reason);

struct RejectedTrace {
  std::string trace_id;
  RejectReason reason;
  std::string detail;
};

struct AssembleResult {
  std::vector<TraceTree> traces;  // in order of first appearance
  std::vector<RejectedTrace> rejected;
  // Children whose interval is not contained in their parent's. Kept, counted.
  std::size_t nesting_warnings = 0;
};

AssembleResult assemble_traces(std::span<const Span> spans);

// Declarative trace filter. Every set predicate must hold for a trace to be
// kept; `hooks` are user-supplied extra predicates.
struct FilterSpec {
  std::optional<std::size_t> min_span_count;
  std::optional<std::size_t> max_span_count;
  std::optional<std::string> required_root_service;
  bool drop_zero_duration = false;
  std::optional<std::set<std::string>> service_allowlist;
  std::set<std::string> service_denylist;
  std::vector<std::function<bool(const TraceTree&)>> hooks;

  // Throws ConfigError on contradictory predicates.
  void validate() const;
  bool accepts(const TraceTree& trace) const;
};

FilterSpec filter_spec_from_json(const nlohmann::json& doc);
FilterSpec load_filter_spec(const std::filesystem::path& path);

std::vector<TraceTree> apply_filters(std::span<const TraceTree> traces, const FilterSpec& spec);

// Flattens trees back to spans in pre-order.
std::vector<Span> flatten(std::span<const TraceTree> traces);

}  // namespace palette
