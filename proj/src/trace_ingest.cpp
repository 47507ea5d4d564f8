#include "palette/trace_ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace palette {

namespace {

constexpr std::string_view kFilterSchema = "palette-filters/v1";

std::optional<std::string> read_span_line(const std::string& line, Span& out) {
  const auto doc = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) return "not a valid JSON record";
  if (!doc.is_object()) return "record is not an object";

  auto string_field = [&doc](const char* key, std::string& dst) -> std::optional<std::string> {
    const auto it = doc.find(key);
    if (it == doc.end()) return std::string("missing field '") + key + "'";
    if (!it->is_string()) return std::string("field '") + key + "' is not a string";
    dst = it->get<std::string>();
    return std::nullopt;
  };
  auto int_field = [&doc](const char* key, std::int64_t& dst) -> std::optional<std::string> {
    const auto it = doc.find(key);
    if (it == doc.end()) return std::string("missing field '") + key + "'";
    if (!it->is_number_integer()) return std::string("field '") + key + "' is not an integer";
    dst = it->get<std::int64_t>();
    return std::nullopt;
  };

  if (auto e = string_field("trace_id", out.trace_id)) return e;
  if (auto e = string_field("span_id", out.span_id)) return e;
  if (auto e = string_field("service", out.service)) return e;
  if (auto e = string_field("operation", out.operation)) return e;
  if (auto e = int_field("start_us", out.start_us)) return e;
  if (auto e = int_field("duration_us", out.duration_us)) return e;

  const auto parent = doc.find("parent_span_id");
  if (parent == doc.end()) return "missing field 'parent_span_id'";
  if (parent->is_null()) {
    out.parent_span_id.reset();
  } else if (parent->is_string()) {
    auto value = parent->get<std::string>();
    // Several tracers write "" for the root's parent.
    if (value.empty()) {
      out.parent_span_id.reset();
    } else {
      out.parent_span_id = std::move(value);
    }
  } else {
    return "field 'parent_span_id' is neither a string nor null";
  }

  if (out.trace_id.empty()) return "empty trace_id";
  if (out.span_id.empty()) return "empty span_id";
  if (out.duration_us < 0) return "negative duration_us";
  return std::nullopt;
}

bool child_order(const Span& a, const Span& b) {
  if (a.start_us != b.start_us) return a.start_us < b.start_us;
  return a.span_id < b.span_id;
}

}  // namespace

ParseResult parse_spans(std::istream& in) {
  if (!in) throw Error("span input stream is not readable");
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    Span span;
    if (auto err = read_span_line(line, span)) {
      ++result.skipped;
      result.diagnostics.push_back({line_no, *err});
      continue;
    }
    result.spans.push_back(std::move(span));
  }
  if (in.bad()) throw Error("I/O error while reading spans");
  return result;
}

ParseResult parse_spans_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open span file: " + path.string());
  return parse_spans(in);
}

std::string serialize_span(const Span& span) {
  nlohmann::ordered_json doc;
  doc["trace_id"] = span.trace_id;
  doc["span_id"] = span.span_id;
  if (span.parent_span_id) {
    doc["parent_span_id"] = *span.parent_span_id;
  } else {
    doc["parent_span_id"] = nullptr;
  }
  doc["service"] = span.service;
  doc["operation"] = span.operation;
  doc["start_us"] = span.start_us;
  doc["duration_us"] = span.duration_us;
  return doc.dump();
}

void write_spans(std::ostream& out, std::span<const Span> spans) {
  for (const auto& s : spans) out << serialize_span(s) << '\n';
}

void write_traces(std::ostream& out, std::span<const TraceTree> traces) {
  for (const auto& t : traces) {
    for (const auto& n : t.nodes) out << serialize_span(n.span) << '\n';
  }
}

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::missing_parent: return "missing_parent";
    case RejectReason::multiple_roots: return "multiple_roots";
    case RejectReason::cycle: return "cycle";
    case RejectReason::duplicate_span_id: return "duplicate_span_id";
  }
  return "unknown";
}

AssembleResult assemble_traces(std::span<const Span> spans) {
  AssembleResult result;

  std::unordered_map<std::string, std::size_t> group_index;
  std::vector<std::vector<const Span*>> groups;
  for (const auto& s : spans) {
    auto [it, inserted] = group_index.try_emplace(s.trace_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(&s);
  }

  for (auto& group : groups) {
    const std::string& trace_id = group.front()->trace_id;
    auto reject = [&](RejectReason r, std::string detail) {
      result.rejected.push_back({trace_id, r, std::move(detail)});
    };

    std::unordered_map<std::string_view, std::size_t> by_id;
    bool duplicate = false;
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (!by_id.emplace(group[i]->span_id, i).second) {
        reject(RejectReason::duplicate_span_id, "span_id " + group[i]->span_id + " repeats");
        duplicate = true;
        break;
      }
    }
    if (duplicate) continue;

    std::vector<std::size_t> roots;
    std::vector<std::vector<std::size_t>> children(group.size());
    bool missing = false;
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto& parent = group[i]->parent_span_id;
      if (!parent) {
        roots.push_back(i);
        continue;
      }
      const auto it = by_id.find(*parent);
      if (it == by_id.end()) {
        reject(RejectReason::missing_parent,
               "span " + group[i]->span_id + " references unknown parent " + *parent);
        missing = true;
        break;
      }
      children[it->second].push_back(i);
    }
    if (missing) continue;
    if (roots.size() > 1) {
      reject(RejectReason::multiple_roots, std::to_string(roots.size()) + " root spans");
      continue;
    }
    if (roots.empty()) {
      reject(RejectReason::cycle, "no root span; parent links form a cycle");
      continue;
    }

    for (auto& c : children) {
      std::sort(c.begin(), c.end(),
                [&group](std::size_t a, std::size_t b) { return child_order(*group[a], *group[b]); });
    }

    TraceTree tree;
    tree.trace_id = trace_id;
    tree.nodes.reserve(group.size());
    // Pre-order walk; stack holds (group index, parent node index).
    std::vector<std::pair<std::size_t, std::optional<std::size_t>>> stack{{roots.front(), std::nullopt}};
    while (!stack.empty()) {
      auto [gi, parent] = stack.back();
      stack.pop_back();
      const std::size_t node_index = tree.nodes.size();
      tree.nodes.push_back({*group[gi], parent, {}});
      if (parent) {
        tree.nodes[*parent].children.push_back(node_index);
        const Span& p = tree.nodes[*parent].span;
        const Span& c = *group[gi];
        if (c.start_us < p.start_us || c.end_us() > p.end_us()) ++result.nesting_warnings;
      }
      const auto& kids = children[gi];
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.emplace_back(*it, node_index);
    }
    if (tree.nodes.size() != group.size()) {
      reject(RejectReason::cycle,
             std::to_string(group.size() - tree.nodes.size()) + " spans unreachable from the root");
      continue;
    }
    result.traces.push_back(std::move(tree));
  }
  return result;
}

void FilterSpec::validate() const {
  if (min_span_count && max_span_count && *min_span_count > *max_span_count) {
    throw ConfigError("filter min_span_count (" + std::to_string(*min_span_count) +
                      ") exceeds max_span_count (" + std::to_string(*max_span_count) + ")");
  }
}

bool FilterSpec::accepts(const TraceTree& trace) const {
  if (min_span_count && trace.size() < *min_span_count) return false;
  if (max_span_count && trace.size() > *max_span_count) return false;
  if (required_root_service && trace.root().span.service != *required_root_service) return false;
  for (const auto& node : trace.nodes) {
    const Span& s = node.span;
    if (drop_zero_duration && s.duration_us == 0) return false;
    if (service_allowlist && !service_allowlist->contains(s.service)) return false;
    if (service_denylist.contains(s.service)) return false;
  }
  for (const auto& hook : hooks) {
    if (!hook(trace)) return false;
  }
  return true;
}

FilterSpec filter_spec_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("filter spec must be an object");
  const auto schema = doc.value("schema", std::string{});
  if (schema != kFilterSchema) {
    throw SchemaError("filter spec schema mismatch: expected " + std::string(kFilterSchema) +
                      ", got '" + schema + "'");
  }
  FilterSpec spec;
  try {
    if (doc.contains("min_span_count")) spec.min_span_count = doc.at("min_span_count").get<std::size_t>();
    if (doc.contains("max_span_count")) spec.max_span_count = doc.at("max_span_count").get<std::size_t>();
    if (doc.contains("required_root_service")) {
      spec.required_root_service = doc.at("required_root_service").get<std::string>();
    }
    spec.drop_zero_duration = doc.value("drop_zero_duration", false);
    if (doc.contains("service_allowlist")) {
      spec.service_allowlist = doc.at("service_allowlist").get<std::set<std::string>>();
    }
    if (doc.contains("service_denylist")) {
      spec.service_denylist = doc.at("service_denylist").get<std::set<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed filter spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

FilterSpec load_filter_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open filter spec: " + path.string());
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw SchemaError("filter spec is not valid JSON: " + path.string());
  return filter_spec_from_json(doc);
}

std::vector<TraceTree> apply_filters(std::span<const TraceTree> traces, const FilterSpec& spec) {
  spec.validate();
  std::vector<TraceTree> out;
  for (const auto& t : traces) {
    if (spec.accepts(t)) out.push_back(t);
  }
  return out;
}

std::vector<Span> flatten(std::span<const TraceTree> traces) {
  std::vector<Span> out;
  for (const auto& t : traces) {
    for (const auto& n : t.nodes) out.push_back(n.span);
  }
  return out;
}

}  // namespace palette
