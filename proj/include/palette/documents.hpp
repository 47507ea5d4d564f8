#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "palette/bundle.hpp"

namespace palette {

inline constexpr std::string_view kTopologySchema = "palette-topology/v1";
inline constexpr std::string_view kFitReportSchema = "palette-fit-report/v1";

// Vertex references are [service, operation] pairs; "service.operation"
// strings are accepted on input and split at the first '.'.
VertexId parse_vertex(std::string_view text);
VertexId vertex_from_json(const nlohmann::json& j);
nlohmann::ordered_json vertex_to_json(const VertexId& v);

// Throws SchemaError unless doc["schema"] equals `expected`.
void require_schema(const nlohmann::json& doc, std::string_view expected);

// Field order is fixed so equal bundles serialize to identical bytes.
nlohmann::ordered_json bundle_to_json(const Bundle& bundle);
Bundle bundle_from_json(const nlohmann::json& doc);

nlohmann::ordered_json fit_reports_to_json(const std::vector<FitReport>& reports);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& doc);

Bundle load_bundle(const std::filesystem::path& path);
void save_bundle(const std::filesystem::path& path, const Bundle& bundle);

}  // namespace palette
