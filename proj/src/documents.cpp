#include "palette/documents.hpp"

#include <fstream>

namespace palette {

using nlohmann::json;
using nlohmann::ordered_json;

VertexId parse_vertex(std::string_view text) {
  const auto dot = text.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == text.size()) {
    throw SchemaError("vertex reference '" + std::string(text) + "' is not service.operation");
  }
  return {std::string(text.substr(0, dot)), std::string(text.substr(dot + 1))};
}

VertexId vertex_from_json(const json& j) {
  if (j.is_string()) return parse_vertex(j.get<std::string>());
  if (j.is_array() && j.size() == 2 && j[0].is_string() && j[1].is_string()) {
    return {j[0].get<std::string>(), j[1].get<std::string>()};
  }
  throw SchemaError("vertex reference must be [service, operation] or \"service.operation\"");
}

ordered_json vertex_to_json(const VertexId& v) { return ordered_json::array({v.service, v.operation}); }

void require_schema(const json& doc, std::string_view expected) {
  if (!doc.is_object() || !doc.contains("schema") || !doc["schema"].is_string()) {
    throw SchemaError("document has no schema tag; expected " + std::string(expected));
  }
  const auto tag = doc["schema"].get<std::string>();
  if (tag != expected) {
    throw SchemaError("schema version mismatch: expected " + std::string(expected) + ", found " + tag);
  }
}

namespace {

ordered_json call_set_to_json(const CallSet& set) {
  ordered_json out = ordered_json::array();
  for (const auto& v : set) out.push_back(vertex_to_json(v));
  return out;
}

CallSet call_set_from_json(const json& j) {
  CallSet out;
  for (const auto& v : j) out.push_back(vertex_from_json(v));
  return make_call_set(std::move(out));
}

ordered_json reservoir_to_json(const Reservoir& r) {
  ordered_json j;
  j["capacity"] = r.capacity();
  j["seen"] = r.seen();
  j["samples"] = r.samples();
  return j;
}

Reservoir reservoir_from_json(const json& j) {
  return Reservoir::from_parts(j.at("capacity").get<std::size_t>(), j.at("seen").get<std::uint64_t>(),
                               j.at("samples").get<std::vector<double>>());
}

StateKind state_kind_from_string(const std::string& s) {
  if (s == "start") return StateKind::start;
  if (s == "finish") return StateKind::finish;
  if (s == "step") return StateKind::step;
  throw SchemaError("unknown state kind '" + s + "'");
}

ordered_json pfa_to_json(const Pfa& pfa) {
  ordered_json j;
  j["api"] = vertex_to_json(pfa.api);
  ordered_json states = ordered_json::array();
  for (std::size_t i = 0; i < pfa.states.size(); ++i) {
    ordered_json s;
    s["id"] = i;
    s["kind"] = to_string(pfa.states[i].kind);
    s["call_set"] = call_set_to_json(pfa.states[i].call_set);
    states.push_back(std::move(s));
  }
  j["states"] = std::move(states);
  ordered_json transitions = ordered_json::array();
  for (const auto& t : pfa.transitions) {
    ordered_json tj;
    tj["from"] = t.from;
    tj["to"] = t.to;
    tj["probability"] = t.probability;
    tj["count"] = t.count;
    transitions.push_back(std::move(tj));
  }
  j["transitions"] = std::move(transitions);
  return j;
}

Pfa pfa_from_json(const json& j) {
  Pfa pfa;
  pfa.api = vertex_from_json(j.at("api"));
  for (const auto& s : j.at("states")) {
    if (s.at("id").get<std::size_t>() != pfa.states.size()) throw SchemaError("automaton states out of order");
    pfa.states.push_back({state_kind_from_string(s.at("kind").get<std::string>()), call_set_from_json(s.at("call_set"))});
  }
  for (const auto& t : j.at("transitions")) {
    pfa.transitions.push_back({t.at("from").get<StateId>(), t.at("to").get<StateId>(),
                               t.at("probability").get<double>(), t.at("count").get<std::uint64_t>()});
  }
  return pfa;
}

ordered_json residual_to_json(const ResidualModel& r) {
  ordered_json j;
  j["mode"] = r.mode == ResidualModel::Mode::constant ? "constant" : "empirical";
  j["constant_us"] = r.constant_us;
  j["keyed_by"] = r.keyed_by_caller ? "upstream_caller" : "none";
  j["pooled"] = reservoir_to_json(r.pooled);
  ordered_json by = ordered_json::object();
  for (const auto& [k, res] : r.by_caller) by[k] = reservoir_to_json(res);
  j["by_caller"] = std::move(by);
  return j;
}

ResidualModel residual_from_json(const json& j) {
  ResidualModel r;
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "constant") {
    r.mode = ResidualModel::Mode::constant;
  } else if (mode != "empirical") {
    throw SchemaError("unknown local work mode '" + mode + "'");
  }
  r.constant_us = j.at("constant_us").get<double>();
  const auto keyed = j.at("keyed_by").get<std::string>();
  if (keyed != "upstream_caller" && keyed != "none") throw SchemaError("unknown conditioning key '" + keyed + "'");
  r.keyed_by_caller = keyed == "upstream_caller";
  r.pooled = reservoir_from_json(j.at("pooled"));
  for (const auto& [k, res] : j.at("by_caller").items()) r.by_caller.emplace(k, reservoir_from_json(res));
  return r;
}

ordered_json model_to_json(const CausalModel& m) {
  const CausalEquation& eq = m.equation;
  ordered_json j;
  j["api"] = vertex_to_json(m.graph.api);
  j["kind"] = to_string(eq.kind);
  ordered_json called = ordered_json::array();
  for (const auto& c : m.graph.called_nodes) {
    ordered_json cj;
    cj["callee"] = vertex_to_json(c.callee);
    cj["c"] = c.c;
    called.push_back(std::move(cj));
  }
  j["called_nodes"] = std::move(called);
  ordered_json groups = ordered_json::array();
  for (const auto& g : eq.groups) {
    ordered_json gj;
    gj["label"] = call_set_to_json(g.label);
    gj["reach_probability"] = g.reach_probability;
    gj["expected_visits"] = g.expected_visits;
    ordered_json members = ordered_json::array();
    for (const auto& t : g.members) {
      ordered_json tj;
      tj["callee"] = vertex_to_json(t.callee);
      tj["call_probability"] = t.call_probability;
      tj["lambda"] = t.lambda;
      tj["mean_latency"] = t.mean_latency;
      members.push_back(std::move(tj));
    }
    gj["members"] = std::move(members);
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  ordered_json choices = ordered_json::array();
  for (const auto& c : eq.choices) {
    ordered_json cj;
    cj["label"] = call_set_to_json(c.label);
    cj["probability"] = c.probability;
    choices.push_back(std::move(cj));
  }
  j["choices"] = std::move(choices);
  j["intercept"] = eq.intercept;
  j["local_work"] = residual_to_json(eq.local_work);
  return j;
}

CausalModel model_from_json(const json& j) {
  CausalModel m;
  m.graph.api = vertex_from_json(j.at("api"));
  CausalEquation& eq = m.equation;
  eq.kind = equation_kind_from_string(j.at("kind").get<std::string>());
  for (const auto& c : j.at("called_nodes")) {
    m.graph.called_nodes.push_back({vertex_from_json(c.at("callee")), c.at("c").get<double>()});
  }
  for (const auto& gj : j.at("groups")) {
    TermGroup g;
    for (const auto& v : gj.at("label")) g.label.push_back(vertex_from_json(v));
    g.reach_probability = gj.at("reach_probability").get<double>();
    g.expected_visits = gj.at("expected_visits").get<double>();
    for (const auto& tj : gj.at("members")) {
      g.members.push_back({vertex_from_json(tj.at("callee")), tj.at("call_probability").get<double>(),
                           tj.at("lambda").get<double>(), tj.at("mean_latency").get<double>()});
    }
    eq.groups.push_back(std::move(g));
  }
  for (const auto& cj : j.at("choices")) {
    eq.choices.push_back({call_set_from_json(cj.at("label")), cj.at("probability").get<double>()});
  }
  eq.intercept = j.at("intercept").get<double>();
  eq.local_work = residual_from_json(j.at("local_work"));
  m.graph.child_latency_nodes = eq.callees();
  return m;
}

}  // namespace

ordered_json bundle_to_json(const Bundle& b) {
  const Topology& t = b.topology;
  ordered_json j;
  j["schema"] = kTopologySchema;
  j["reservoir_size"] = t.reservoir_size;
  j["seed"] = t.seed;
  j["coarsen"] = {{"tau", b.coarsen.tau}, {"overlap_epsilon_us", b.coarsen.overlap_epsilon_us}};
  j["partitions"] = t.partitions;
  ordered_json vertices = ordered_json::array();
  for (const auto& [id, v] : t.vertices) {
    ordered_json vj;
    vj["service"] = id.service;
    vj["operation"] = id.operation;
    vj["invocation_count"] = v.invocation_count;
    vj["root_count"] = v.root_count;
    vj["latency"] = reservoir_to_json(v.latency);
    vertices.push_back(std::move(vj));
  }
  j["vertices"] = std::move(vertices);
  ordered_json edges = ordered_json::array();
  for (const auto& [key, e] : t.edges) {
    ordered_json ej;
    ej["caller"] = vertex_to_json(e.caller);
    ej["callee"] = vertex_to_json(e.callee);
    ej["call_count"] = e.call_count;
    ej["is_remote"] = e.is_remote;
    ej["latency"] = reservoir_to_json(e.latency);
    edges.push_back(std::move(ej));
  }
  j["edges"] = std::move(edges);
  ordered_json pfas = ordered_json::array();
  for (const auto& [api, pfa] : b.pfas) pfas.push_back(pfa_to_json(pfa));
  j["pfas"] = std::move(pfas);
  ordered_json models = ordered_json::array();
  for (const auto& [api, m] : b.models) models.push_back(model_to_json(m));
  j["models"] = std::move(models);
  return j;
}

Bundle bundle_from_json(const json& doc) {
  require_schema(doc, kTopologySchema);
  try {
    Bundle b;
    Topology& t = b.topology;
    t.reservoir_size = doc.at("reservoir_size").get<std::size_t>();
    t.seed = doc.at("seed").get<std::uint64_t>();
    b.coarsen.tau = doc.at("coarsen").at("tau").get<double>();
    b.coarsen.overlap_epsilon_us = doc.at("coarsen").at("overlap_epsilon_us").get<std::int64_t>();
    for (const auto& p : doc.at("partitions")) t.partitions.insert(p.get<std::string>());
    for (const auto& vj : doc.at("vertices")) {
      ApiVertex v;
      v.id = {vj.at("service").get<std::string>(), vj.at("operation").get<std::string>()};
      v.invocation_count = vj.at("invocation_count").get<std::uint64_t>();
      v.root_count = vj.at("root_count").get<std::uint64_t>();
      v.latency = reservoir_from_json(vj.at("latency"));
      if (!t.vertices.emplace(v.id, v).second) throw SchemaError("duplicate vertex " + v.id.str());
    }
    for (const auto& ej : doc.at("edges")) {
      CallEdge e;
      e.caller = vertex_from_json(ej.at("caller"));
      e.callee = vertex_from_json(ej.at("callee"));
      e.call_count = ej.at("call_count").get<std::uint64_t>();
      e.is_remote = ej.at("is_remote").get<bool>();
      e.latency = reservoir_from_json(ej.at("latency"));
      if (!t.edges.emplace(EdgeKey{e.caller, e.callee}, e).second) {
        throw SchemaError("duplicate edge " + e.caller.str() + " -> " + e.callee.str());
      }
    }
    for (const auto& pj : doc.at("pfas")) {
      Pfa p = pfa_from_json(pj);
      const VertexId api = p.api;
      if (!b.pfas.emplace(api, std::move(p)).second) throw SchemaError("duplicate automaton " + api.str());
    }
    for (const auto& mj : doc.at("models")) {
      CausalModel m = model_from_json(mj);
      const VertexId api = m.graph.api;
      if (!b.models.emplace(api, std::move(m)).second) throw SchemaError("duplicate causal model " + api.str());
    }
    return b;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed topology document: ") + e.what());
  }
}

ordered_json fit_reports_to_json(const std::vector<FitReport>& reports) {
  ordered_json j;
  j["schema"] = kFitReportSchema;
  ordered_json apis = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json a;
    a["api"] = vertex_to_json(r.api);
    a["kind"] = to_string(r.kind);
    a["status"] = r.status;
    ordered_json lambdas = ordered_json::object();
    for (const auto& [k, v] : r.lambdas) lambdas[k] = v;
    a["lambdas"] = std::move(lambdas);
    a["intercept"] = r.intercept;
    a["residual"] = {{"mean", r.residual_mean}, {"p50", r.residual_p50}, {"p99", r.residual_p99}};
    a["sample_count"] = r.sample_count;
    a["skipped_observations"] = r.skipped_observations;
    a["iterations"] = r.iterations;
    a["converged"] = r.converged;
    apis.push_back(std::move(a));
  }
  j["apis"] = std::move(apis);
  return j;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const ordered_json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw ConfigError("failed writing " + path.string());
}

Bundle load_bundle(const std::filesystem::path& path) { return bundle_from_json(read_json_file(path)); }

void save_bundle(const std::filesystem::path& path, const Bundle& bundle) {
  write_json_file(path, bundle_to_json(bundle));
}

}  // namespace palette
