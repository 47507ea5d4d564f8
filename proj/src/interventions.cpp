#include "palette/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "palette/documents.hpp"

namespace palette {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

class Rejected : public Error {
 public:
  using Error::Error;
};

std::string fmt(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

class Editor {
 public:
  Editor(Bundle& b, std::vector<std::string>& log) : b_(b), log_(log) {}

  void operator()(const op::AddVertex& o) {
    if (b_.topology.has_vertex(o.vertex)) reject("vertex " + o.vertex.str() + " already exists");
    check_name(o.vertex.service);
    if (o.vertex.operation.empty()) reject("operation name must not be empty");
    if (b_.topology.partitions.insert(o.vertex.service).second) {
      log_.push_back("partition " + o.vertex.service + " created");
    }
    ApiVertex v;
    v.id = o.vertex;
    v.latency = Reservoir(b_.topology.reservoir_size);
    b_.topology.vertices.emplace(o.vertex, std::move(v));

    Pfa pfa;
    pfa.api = o.vertex;
    pfa.states = {{StateKind::start, {}}, {StateKind::finish, {}}};
    pfa.transitions = {{Pfa::kStart, Pfa::kFinish, 1.0, 0}};
    CausalModel model = build_causal_graph(pfa);
    model.equation.local_work = ResidualModel::constant(0.0);
    b_.pfas.emplace(o.vertex, std::move(pfa));
    b_.models.emplace(o.vertex, std::move(model));
  }

  void operator()(const op::RemoveVertex& o) {
    require_vertex(o.vertex);
    remove_vertices({o.vertex});
  }

  void operator()(const op::AddEdge& o) {
    require_vertex(o.caller);
    require_vertex(o.callee);
    if (o.caller == o.callee) reject("self edges are not modeled");
    if (b_.topology.edges.contains({o.caller, o.callee})) {
      reject("edge " + o.caller.str() + " -> " + o.callee.str() + " already exists");
    }
    if (!(o.probability > 0.0 && o.probability <= 1.0)) reject("add_edge probability must lie in (0, 1]");
    if (!(o.lambda >= 0.0) || !std::isfinite(o.lambda)) reject("add_edge lambda must be finite and >= 0");

    const auto& caller = b_.topology.vertices.at(o.caller);
    CallEdge e;
    e.caller = o.caller;
    e.callee = o.callee;
    e.call_count = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(std::llround(o.probability * static_cast<double>(caller.invocation_count))));
    e.is_remote = o.caller.service != o.callee.service;
    e.latency = Reservoir(b_.topology.reservoir_size);
    b_.topology.edges.emplace(EdgeKey{o.caller, o.callee}, std::move(e));

    Pfa pfa = b_.pfas.at(o.caller);
    const auto s = static_cast<StateId>(pfa.states.size());
    pfa.states.push_back({StateKind::step, {o.callee}});
    for (auto& t : pfa.transitions) {
      if (t.from == Pfa::kStart) t.probability *= 1.0 - o.probability;
    }
    const std::uint64_t count = b_.topology.edges.at({o.caller, o.callee}).call_count;
    pfa.transitions.push_back({Pfa::kStart, s, o.probability, count});
    pfa.transitions.push_back({s, Pfa::kFinish, 1.0, count});
    log_.push_back("api " + o.caller.str() + ": start branches scaled by " + fmt(1.0 - o.probability));
    commit_pfa(o.caller, std::move(pfa), {{o.callee, o.lambda}});
  }

  void operator()(const op::RemoveEdge& o) {
    if (!b_.topology.edges.contains({o.caller, o.callee})) {
      reject("no edge " + o.caller.str() + " -> " + o.callee.str());
    }
    remove_callee(o.caller, o.callee);
  }

  void operator()(const op::SetTransitionProb& o) {
    require_vertex(o.api);
    Pfa pfa = b_.pfas.at(o.api);
    if (!(o.probability >= 0.0 && o.probability <= 1.0)) reject("transition probability must lie in [0, 1]");
    if (pfa.find_transition(o.from, o.to) == nullptr) {
      reject("api " + o.api.str() + " has no transition " + std::to_string(o.from) + " -> " + std::to_string(o.to));
    }
    double sibling_mass = 0.0;
    std::size_t siblings = 0;
    for (const auto& t : pfa.outgoing(o.from)) {
      if (t.to == o.to) continue;
      sibling_mass += t.probability;
      ++siblings;
    }
    if (o.probability < 1.0 && !(sibling_mass > 0.0)) {
      reject("state " + std::to_string(o.from) + " of api " + o.api.str() +
             " has no sibling mass to absorb the remaining " + fmt(1.0 - o.probability));
    }
    for (auto& t : pfa.transitions) {
      if (t.from != o.from) continue;
      if (t.to == o.to) {
        t.probability = o.probability;
      } else {
        t.probability *= (1.0 - o.probability) / sibling_mass;
      }
    }
    if (siblings > 0) {
      log_.push_back("api " + o.api.str() + ": rescaled " + std::to_string(siblings) + " sibling transitions of state " +
                     std::to_string(o.from));
    }
    commit_pfa(o.api, std::move(pfa), {});
  }

  void operator()(const op::ScaleCoefficient& o) {
    require_vertex(o.api);
    if (!(o.factor > 0.0) || !std::isfinite(o.factor)) reject("scale factor must be finite and > 0");
    bool found = false;
    for (auto& g : b_.models.at(o.api).equation.groups) {
      for (auto& m : g.members) {
        if (m.callee == o.callee) {
          m.lambda *= o.factor;
          found = true;
        }
      }
    }
    if (!found) reject("api " + o.api.str() + " has no term for " + o.callee.str());
  }

  void operator()(const op::SetLocalWork& o) {
    require_vertex(o.api);
    if (!(o.constant_us >= 0.0) || !std::isfinite(o.constant_us)) reject("local work must be finite and >= 0");
    b_.models.at(o.api).equation.local_work = ResidualModel::constant(o.constant_us);
  }

  void operator()(const op::Downscale& o) {
    for (const auto& s : o.keep) {
      if (!b_.topology.partitions.contains(s)) reject("unknown service " + s);
    }
    std::set<VertexId> drop;
    for (const auto& [id, v] : b_.topology.vertices) {
      if (!o.keep.contains(id.service)) drop.insert(id);
    }
    remove_vertices(drop);
    for (auto it = b_.topology.partitions.begin(); it != b_.topology.partitions.end();) {
      if (o.keep.contains(*it)) {
        ++it;
      } else {
        log_.push_back("partition " + *it + " removed");
        it = b_.topology.partitions.erase(it);
      }
    }
  }

  void operator()(const op::MergeServices& o) {
    if (o.services.empty()) reject("merge_services needs at least one service");
    check_name(o.name);
    const std::set<std::string> merged(o.services.begin(), o.services.end());
    if (merged.size() != o.services.size()) reject("merge_services lists a service twice");
    for (const auto& s : merged) {
      if (!b_.topology.partitions.contains(s)) reject("unknown service " + s);
    }
    if (b_.topology.partitions.contains(o.name) && !merged.contains(o.name)) {
      reject("service " + o.name + " already exists");
    }

    std::map<std::string, std::size_t> op_uses;
    for (const auto& [id, v] : b_.topology.vertices) {
      if (merged.contains(id.service)) ++op_uses[id.operation];
    }
    std::map<VertexId, VertexId> rename;
    std::set<VertexId> targets;
    for (const auto& [id, v] : b_.topology.vertices) {
      VertexId to = id;
      if (merged.contains(id.service)) {
        to.service = o.name;
        if (op_uses[id.operation] > 1) to.operation = id.operation + "_" + id.service;
      }
      if (!targets.insert(to).second) reject("merged operation name " + to.str() + " collides");
      rename.emplace(id, to);
    }
    auto ren = [&rename](const VertexId& v) { return rename.at(v); };
    std::map<std::string, std::string> key_rename;
    for (const auto& [from, to] : rename) {
      key_rename.emplace(from.str(), to.str());
      if (!(from == to)) log_.push_back("vertex " + from.str() + " renamed to " + to.str());
    }

    Topology t;
    t.reservoir_size = b_.topology.reservoir_size;
    t.seed = b_.topology.seed;
    for (const auto& p : b_.topology.partitions) {
      if (merged.contains(p)) {
        if (p != o.name) log_.push_back("partition " + p + " merged into " + o.name);
        t.partitions.insert(o.name);
      } else {
        t.partitions.insert(p);
      }
    }
    for (const auto& [id, v] : b_.topology.vertices) {
      ApiVertex nv = v;
      nv.id = ren(id);
      t.vertices.emplace(nv.id, std::move(nv));
    }
    for (const auto& [key, e] : b_.topology.edges) {
      CallEdge ne = e;
      ne.caller = ren(e.caller);
      ne.callee = ren(e.callee);
      ne.is_remote = ne.caller.service != ne.callee.service;
      t.edges.emplace(EdgeKey{ne.caller, ne.callee}, std::move(ne));
    }

    std::map<VertexId, Pfa> pfas;
    for (const auto& [api, pfa] : b_.pfas) {
      Pfa np = pfa;
      np.api = ren(api);
      for (auto& s : np.states) {
        for (auto& c : s.call_set) c = ren(c);
        s.call_set = make_call_set(std::move(s.call_set));
      }
      pfas.emplace(np.api, canonicalize(np, false));
    }
    std::map<VertexId, CausalModel> models;
    for (const auto& [api, model] : b_.models) {
      CausalModel nm = model;
      nm.graph.api = ren(api);
      for (auto& g : nm.equation.groups) {
        for (auto& m : g.members) m.callee = ren(m.callee);
        std::stable_sort(g.members.begin(), g.members.end(),
                         [](const Term& a, const Term& b) { return a.callee < b.callee; });
        g.label.clear();
        for (const auto& m : g.members) g.label.push_back(m.callee);
      }
      std::sort(nm.equation.groups.begin(), nm.equation.groups.end(),
                [](const TermGroup& a, const TermGroup& b) { return a.label < b.label; });
      auto& by = nm.equation.local_work.by_caller;
      std::map<std::string, Reservoir> renamed_keys;
      for (auto& [k, r] : by) {
        const auto it = key_rename.find(k);
        renamed_keys.emplace(it == key_rename.end() ? k : it->second, std::move(r));
      }
      by = std::move(renamed_keys);
      models.emplace(nm.graph.api, std::move(nm));
    }
    b_.topology = std::move(t);
    b_.pfas = std::move(pfas);
    b_.models = std::move(models);
    for (const auto& [api, pfa] : b_.pfas) rebuild_model(api, {});
  }

 private:
  [[noreturn]] void reject(const std::string& reason) { throw Rejected(reason); }

  void check_name(const std::string& service) {
    if (service.empty()) reject("service name must not be empty");
    if (service.find('.') != std::string::npos) reject("service name '" + service + "' must not contain '.'");
  }

  void require_vertex(const VertexId& v) {
    if (!b_.topology.has_vertex(v)) reject("unknown vertex " + v.str());
  }

  // Drops the vertices and everything that hangs off them, then detaches
  // them from every surviving caller.
  void remove_vertices(const std::set<VertexId>& drop) {
    std::set<VertexId> callers;
    for (auto it = b_.topology.edges.begin(); it != b_.topology.edges.end();) {
      const auto& [caller, callee] = it->first;
      if (drop.contains(caller)) {
        it = b_.topology.edges.erase(it);
        continue;
      }
      if (drop.contains(callee)) callers.insert(caller);
      ++it;
    }
    for (const auto& v : drop) {
      b_.topology.vertices.erase(v);
      b_.pfas.erase(v);
      b_.models.erase(v);
      log_.push_back("vertex " + v.str() + " removed");
    }
    for (const auto& caller : callers) {
      for (const auto& v : drop) {
        if (b_.topology.edges.contains({caller, v})) remove_callee(caller, v);
      }
    }
    std::set<std::string> live;
    for (const auto& [id, v] : b_.topology.vertices) live.insert(id.service);
    for (auto it = b_.topology.partitions.begin(); it != b_.topology.partitions.end();) {
      if (live.contains(*it)) {
        ++it;
      } else {
        log_.push_back("partition " + *it + " removed: no vertices left");
        it = b_.topology.partitions.erase(it);
      }
    }
  }

  // Removes `callee` from every call set of `api`'s automaton. States left
  // with an empty call set are pruned and the mass that flowed into them is
  // redistributed proportionally over the surviving siblings.
  void remove_callee(const VertexId& api, const VertexId& callee) {
    Pfa pfa = b_.pfas.at(api);
    const std::string name = "api " + api.str();
    std::vector<bool> dead(pfa.states.size(), false);
    for (std::size_t s = 2; s < pfa.states.size(); ++s) {
      auto& cs = pfa.states[s].call_set;
      const auto before = label(cs);
      cs.erase(std::remove(cs.begin(), cs.end(), callee), cs.end());
      if (cs.empty()) {
        dead[s] = true;
        log_.push_back(name + ": state " + std::to_string(s) + " (" + before + ") pruned");
      } else if (label(cs) != before) {
        log_.push_back(name + ": state " + std::to_string(s) + " relabeled " + before + " -> " + label(cs));
      }
    }
    std::map<StateId, double> lost;
    std::vector<PfaTransition> kept;
    for (const auto& t : pfa.transitions) {
      if (dead[t.from]) continue;
      if (dead[t.to]) {
        lost[t.from] += t.probability;
        continue;
      }
      kept.push_back(t);
    }
    for (const auto& [s, mass] : lost) {
      double remaining = 0.0;
      for (const auto& t : kept) {
        if (t.from == s) remaining += t.probability;
      }
      if (!(remaining > 0.0)) {
        reject(name + ": state " + std::to_string(s) + " would have no outgoing transitions");
      }
      for (auto& t : kept) {
        if (t.from == s) t.probability /= remaining;
      }
      log_.push_back(name + ": state " + std::to_string(s) + " renormalized after losing mass " + fmt(mass));
    }
    pfa.transitions = std::move(kept);
    commit_pfa(api, std::move(pfa), {});
  }

  // Canonicalizes an edited automaton, drops edges it no longer uses and
  // regenerates the causal skeleton.
  void commit_pfa(const VertexId& api, Pfa pfa, const std::map<VertexId, double>& new_lambdas) {
    const std::size_t before = pfa.states.size();
    std::size_t dead = 0;
    for (std::size_t s = 2; s < pfa.states.size(); ++s) {
      if (pfa.states[s].kind == StateKind::step && pfa.states[s].call_set.empty()) ++dead;
    }
    Pfa c = canonicalize(pfa, false);
    const std::size_t dropped = before - dead - c.states.size();
    if (dropped > 0) {
      log_.push_back("api " + api.str() + ": " + std::to_string(dropped) + " unreachable states dropped");
    }
    const auto problems = check_pfa(c);
    if (!problems.empty()) reject(problems.front());

    std::set<VertexId> used;
    for (const auto& s : c.states) used.insert(s.call_set.begin(), s.call_set.end());
    for (auto it = b_.topology.edges.begin(); it != b_.topology.edges.end();) {
      if (it->first.first == api && !used.contains(it->first.second)) {
        log_.push_back("edge " + api.str() + " -> " + it->first.second.str() + " removed: no longer called");
        it = b_.topology.edges.erase(it);
      } else {
        ++it;
      }
    }
    b_.pfas.at(api) = std::move(c);
    rebuild_model(api, new_lambdas);
  }

  // Regenerates the skeleton from the automaton, carrying fitted values
  // over by (label, callee) first and by callee alone second.
  void rebuild_model(const VertexId& api, const std::map<VertexId, double>& new_lambdas) {
    const CausalModel& old = b_.models.at(api);
    CausalModel fresh = build_causal_graph(b_.pfas.at(api));
    for (auto& g : fresh.equation.groups) {
      const TermGroup* same = old.equation.find_group(g.label);
      for (std::size_t m = 0; m < g.members.size(); ++m) {
        Term& t = g.members[m];
        const Term* prior = nullptr;
        if (same != nullptr && m < same->members.size() && same->members[m].callee == t.callee) {
          prior = &same->members[m];
        }
        for (const auto& og : old.equation.groups) {
          for (const auto& om : og.members) {
            if (prior == nullptr && om.callee == t.callee) prior = &om;
          }
        }
        if (prior != nullptr) {
          t.lambda = prior->lambda;
          t.mean_latency = prior->mean_latency;
        } else {
          const auto nl = new_lambdas.find(t.callee);
          t.lambda = nl == new_lambdas.end() ? 1.0 : nl->second;
          t.mean_latency = b_.topology.vertices.at(t.callee).latency.mean();
        }
      }
    }
    fresh.equation.intercept = old.equation.intercept;
    fresh.equation.local_work = old.equation.local_work;
    b_.models.at(api) = std::move(fresh);
  }

  Bundle& b_;
  std::vector<std::string>& log_;
};

VertexId vertex_field(const json& j, const char* key) {
  if (!j.contains(key)) throw SchemaError(std::string("missing field '") + key + "'");
  return vertex_from_json(j.at(key));
}

InterventionOp op_from_json(const json& j) {
  const auto kind = j.at("op").get<std::string>();
  if (kind == "add_vertex") {
    if (j.contains("vertex")) return op::AddVertex{vertex_field(j, "vertex")};
    return op::AddVertex{{j.at("service").get<std::string>(), j.at("operation").get<std::string>()}};
  }
  if (kind == "remove_vertex") return op::RemoveVertex{vertex_field(j, "vertex")};
  if (kind == "add_edge") {
    return op::AddEdge{vertex_field(j, "caller"), vertex_field(j, "callee"), j.at("probability").get<double>(),
                       j.value("lambda", 1.0)};
  }
  if (kind == "remove_edge") return op::RemoveEdge{vertex_field(j, "caller"), vertex_field(j, "callee")};
  if (kind == "set_transition_prob") {
    return op::SetTransitionProb{vertex_field(j, "api"), j.at("from").get<StateId>(), j.at("to").get<StateId>(),
                                 j.at("probability").get<double>()};
  }
  if (kind == "scale_coefficient") {
    return op::ScaleCoefficient{vertex_field(j, "api"), vertex_field(j, "callee"), j.at("factor").get<double>()};
  }
  if (kind == "set_local_work") return op::SetLocalWork{vertex_field(j, "api"), j.at("constant_us").get<double>()};
  if (kind == "downscale") return op::Downscale{j.at("keep").get<std::set<std::string>>()};
  if (kind == "merge_services") {
    return op::MergeServices{j.at("services").get<std::vector<std::string>>(), j.at("name").get<std::string>()};
  }
  throw SchemaError("unknown intervention op '" + kind + "'");
}

}  // namespace

std::string_view op_name(const InterventionOp& op) {
  static constexpr std::string_view names[] = {"add_vertex",          "remove_vertex",     "add_edge",
                                               "remove_edge",         "set_transition_prob", "scale_coefficient",
                                               "set_local_work",      "downscale",         "merge_services"};
  return names[op.index()];
}

InterventionError::InterventionError(std::size_t op_index, std::string reason)
    : Error("intervention op " + std::to_string(op_index) + " rejected: " + reason),
      op_index_(op_index),
      reason_(std::move(reason)) {}

ApplyResult apply(const Bundle& bundle, const InterventionScript& script) {
  if (const auto v = validate_bundle(bundle); !v.empty()) {
    throw ContractViolation("input bundle is invalid: " + v.front());
  }
  ApplyResult result{bundle, {}};
  Editor editor(result.bundle, result.changes);
  for (std::size_t i = 0; i < script.size(); ++i) {
    try {
      std::visit(editor, script[i]);
    } catch (const Rejected& e) {
      throw InterventionError(i, e.what());
    }
    if (const auto v = validate_bundle(result.bundle); !v.empty()) throw InterventionError(i, v.front());
  }
  return result;
}

InterventionScript script_from_json(const json& doc) {
  require_schema(doc, kInterventionSchema);
  if (!doc.contains("ops") || !doc["ops"].is_array()) throw SchemaError("intervention script has no 'ops' list");
  InterventionScript script;
  for (std::size_t i = 0; i < doc["ops"].size(); ++i) {
    try {
      script.push_back(op_from_json(doc["ops"][i]));
    } catch (const json::exception& e) {
      throw SchemaError("intervention op " + std::to_string(i) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("intervention op " + std::to_string(i) + ": " + e.what());
    }
  }
  return script;
}

ordered_json script_to_json(const InterventionScript& script) {
  ordered_json doc;
  doc["schema"] = kInterventionSchema;
  ordered_json ops = ordered_json::array();
  for (const auto& o : script) {
    ordered_json j;
    j["op"] = op_name(o);
    std::visit(overloaded{
                   [&](const op::AddVertex& x) { j["vertex"] = vertex_to_json(x.vertex); },
                   [&](const op::RemoveVertex& x) { j["vertex"] = vertex_to_json(x.vertex); },
                   [&](const op::AddEdge& x) {
                     j["caller"] = vertex_to_json(x.caller);
                     j["callee"] = vertex_to_json(x.callee);
                     j["probability"] = x.probability;
                     j["lambda"] = x.lambda;
                   },
                   [&](const op::RemoveEdge& x) {
                     j["caller"] = vertex_to_json(x.caller);
                     j["callee"] = vertex_to_json(x.callee);
                   },
                   [&](const op::SetTransitionProb& x) {
                     j["api"] = vertex_to_json(x.api);
                     j["from"] = x.from;
                     j["to"] = x.to;
                     j["probability"] = x.probability;
                   },
                   [&](const op::ScaleCoefficient& x) {
                     j["api"] = vertex_to_json(x.api);
                     j["callee"] = vertex_to_json(x.callee);
                     j["factor"] = x.factor;
                   },
                   [&](const op::SetLocalWork& x) {
                     j["api"] = vertex_to_json(x.api);
                     j["constant_us"] = x.constant_us;
                   },
                   [&](const op::Downscale& x) { j["keep"] = x.keep; },
                   [&](const op::MergeServices& x) {
                     j["services"] = x.services;
                     j["name"] = x.name;
                   },
               },
               o);
    ops.push_back(std::move(j));
  }
  doc["ops"] = std::move(ops);
  return doc;
}

InterventionScript load_script(const std::filesystem::path& path) { return script_from_json(read_json_file(path)); }

}  // namespace palette
