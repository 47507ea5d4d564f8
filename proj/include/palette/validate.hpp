#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "palette/common.hpp"
#include "palette/trace_ingest.hpp"

namespace palette {

inline constexpr std::string_view kValidationSchema = "palette-validation/v1";

struct Thresholds {
  double max_ks = 0.15;
  double max_median_error = 0.10;
  // Entries with fewer samples on either side are reported but not judged.
  std::size_t min_samples = 1000;
  double max_first_step_l1 = 0.10;
  // Share of all spans that belong to APIs seen in only one dataset.
  double max_uncovered_fraction = 0.01;

  void validate() const;
};

struct LatencySummary {
  std::size_t count = 0;
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
};

// One (API, caller) comparison. An empty caller with `pooled` set covers
// every invocation; otherwise `caller` is the immediate upstream API ("" for
// trace roots).
struct LatencyComparison {
  VertexId api;
  bool pooled = true;
  std::string caller;
  LatencySummary original;
  LatencySummary synthetic;
  double ks = 0.0;
  double median_error = 0.0;
  bool judged = false;
  bool pass = true;
};

struct FirstStepComparison {
  VertexId api;
  std::size_t original_count = 0;
  std::size_t synthetic_count = 0;
  double l1 = 0.0;
  bool judged = false;
  bool pass = true;
};

struct ValidationReport {
  Thresholds thresholds;
  std::vector<LatencyComparison> latencies;
  std::vector<FirstStepComparison> first_steps;
  std::vector<VertexId> original_only;
  std::vector<VertexId> synthetic_only;
  double uncovered_fraction = 0.0;
  bool pass = true;
};

// Spans are grouped by API; traces provide caller keys and step structure.
ValidationReport compare(std::span<const Span> original_spans, std::span<const TraceTree> original_traces,
                         std::span<const Span> synthetic_spans, std::span<const TraceTree> synthetic_traces,
                         const Thresholds& thresholds, std::int64_t overlap_epsilon_us = 0);
ValidationReport compare_files(const std::filesystem::path& original, const std::filesystem::path& synthetic,
                               const Thresholds& thresholds, std::int64_t overlap_epsilon_us = 0);

nlohmann::ordered_json report_to_json(const ValidationReport& report);
std::string report_summary(const ValidationReport& report);

// CSV rows "api,caller,dataset,x,y" of the empirical CDFs per API and caller.
void write_cdfs(const std::filesystem::path& path, std::span<const TraceTree> original,
                std::span<const TraceTree> synthetic);

}  // namespace palette
