#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "palette/bundle.hpp"

namespace palette {

inline constexpr std::string_view kInterventionSchema = "palette-interventions/v1";

namespace op {

struct AddVertex {
  VertexId vertex;
};
struct RemoveVertex {
  VertexId vertex;
};
// New single-callee branch out of the caller's start state taken with
// `probability`; the existing branches give up that mass proportionally.
struct AddEdge {
  VertexId caller;
  VertexId callee;
  double probability = 0.0;
  double lambda = 1.0;
};
struct RemoveEdge {
  VertexId caller;
  VertexId callee;
};
struct SetTransitionProb {
  VertexId api;
  StateId from = 0;
  StateId to = 0;
  double probability = 0.0;
};
struct ScaleCoefficient {
  VertexId api;
  VertexId callee;
  double factor = 1.0;
};
struct SetLocalWork {
  VertexId api;
  double constant_us = 0.0;
};
struct Downscale {
  std::set<std::string> keep;
};
struct MergeServices {
  std::vector<std::string> services;
  std::string name;
};

}  // namespace op

using InterventionOp = std::variant<op::AddVertex, op::RemoveVertex, op::AddEdge, op::RemoveEdge,
                                    op::SetTransitionProb, op::ScaleCoefficient, op::SetLocalWork,
                                    op::Downscale, op::MergeServices>;
using InterventionScript = std::vector<InterventionOp>;

std::string_view op_name(const InterventionOp& op);

// A rejected script. `op_index` is the zero-based index of the offending op.
class InterventionError : public Error {
 public:
  InterventionError(std::size_t op_index, std::string reason);

  std::size_t op_index() const { return op_index_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t op_index_;
  std::string reason_;
};

struct ApplyResult {
  Bundle bundle;
  std::vector<std::string> changes;  // every derived repair, in order
};

// Applies all ops or none. The input bundle must validate; the result always
// does.
ApplyResult apply(const Bundle& bundle, const InterventionScript& script);

InterventionScript script_from_json(const nlohmann::json& doc);
nlohmann::ordered_json script_to_json(const InterventionScript& script);
InterventionScript load_script(const std::filesystem::path& path);

}  // namespace palette
