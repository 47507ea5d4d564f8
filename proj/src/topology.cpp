#include "palette/topology.hpp"

namespace palette {

std::vector<const CallEdge*> Topology::outgoing(const VertexId& caller) const {
  std::vector<const CallEdge*> out;
  for (auto it = edges.lower_bound({caller, VertexId{}}); it != edges.end() && it->first.first == caller;
       ++it) {
    out.push_back(&it->second);
  }
  return out;
}

std::vector<const CallEdge*> Topology::incoming(const VertexId& callee) const {
  std::vector<const CallEdge*> out;
  for (const auto& [key, edge] : edges) {
    if (key.second == callee) out.push_back(&edge);
  }
  return out;
}

bool has_self_call(const TraceTree& trace) {
  for (const auto& node : trace.nodes) {
    if (node.parent && trace.nodes[*node.parent].span.vertex() == node.span.vertex()) return true;
  }
  return false;
}

std::vector<std::string> find_self_loop_traces(std::span<const TraceTree> traces) {
  std::vector<std::string> out;
  for (const auto& t : traces) {
    if (has_self_call(t)) out.push_back(t.trace_id);
  }
  return out;
}

Topology build_topology(std::span<const TraceTree> traces, std::size_t reservoir_size,
                        std::uint64_t seed) {
  if (reservoir_size == 0) throw ConfigError("reservoir_size must be >= 1");
  Topology topo;
  topo.reservoir_size = reservoir_size;
  topo.seed = seed;
  Rng rng(seed);

  for (const auto& trace : traces) {
    if (has_self_call(trace)) continue;
    for (const auto& node : trace.nodes) {
      const Span& s = node.span;
      const VertexId id = s.vertex();
      topo.partitions.insert(s.service);
      auto [vit, fresh] = topo.vertices.try_emplace(id);
      ApiVertex& v = vit->second;
      if (fresh) {
        v.id = id;
        v.latency = Reservoir(reservoir_size);
      }
      ++v.invocation_count;
      if (!node.parent) ++v.root_count;
      v.latency.add(static_cast<double>(s.duration_us), rng);

      if (node.parent) {
        const VertexId caller = trace.nodes[*node.parent].span.vertex();
        auto [eit, efresh] = topo.edges.try_emplace({caller, id});
        CallEdge& e = eit->second;
        if (efresh) {
          e.caller = caller;
          e.callee = id;
          e.is_remote = caller.service != id.service;
          e.latency = Reservoir(reservoir_size);
        }
        ++e.call_count;
        e.latency.add(static_cast<double>(s.duration_us), rng);
      }
    }
  }
  return topo;
}

Topology merge_topologies(const Topology& a, const Topology& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.reservoir_size != b.reservoir_size) {
    throw ConfigError("cannot merge topologies with reservoir sizes " + std::to_string(a.reservoir_size) +
                      " and " + std::to_string(b.reservoir_size));
  }
  Topology out;
  out.reservoir_size = a.reservoir_size;
  out.seed = a.seed ^ b.seed;
  Rng rng(mix_seed(out.seed, 0x6d657267ULL));

  out.partitions = a.partitions;
  out.partitions.insert(b.partitions.begin(), b.partitions.end());

  // Iterate the union in key order so both argument orders visit the same
  // sequence of merge decisions.
  out.vertices = a.vertices;
  for (const auto& [id, vb] : b.vertices) {
    auto [it, fresh] = out.vertices.try_emplace(id, vb);
    if (fresh) continue;
    ApiVertex& v = it->second;
    v.invocation_count += vb.invocation_count;
    v.root_count += vb.root_count;
  }
  for (auto& [id, v] : out.vertices) {
    const auto ia = a.vertices.find(id);
    const auto ib = b.vertices.find(id);
    if (ia != a.vertices.end() && ib != b.vertices.end()) {
      v.latency = Reservoir::merged(ia->second.latency, ib->second.latency, rng);
    }
  }

  out.edges = a.edges;
  for (const auto& [key, eb] : b.edges) {
    auto [it, fresh] = out.edges.try_emplace(key, eb);
    if (!fresh) it->second.call_count += eb.call_count;
  }
  for (auto& [key, e] : out.edges) {
    const auto ia = a.edges.find(key);
    const auto ib = b.edges.find(key);
    if (ia != a.edges.end() && ib != b.edges.end()) {
      e.latency = Reservoir::merged(ia->second.latency, ib->second.latency, rng);
    }
  }
  return out;
}

std::vector<std::string> check_topology(const Topology& topo) {
  std::vector<std::string> v;
  for (const auto& [id, vertex] : topo.vertices) {
    if (!(vertex.id == id)) v.push_back("vertex " + id.str() + " stored under a different key");
    if (!topo.partitions.contains(id.service)) {
      v.push_back("vertex " + id.str() + " belongs to unknown partition " + id.service);
    }
    if (vertex.invocation_count < vertex.latency.samples().size()) {
      v.push_back("vertex " + id.str() + " retains more samples than invocations");
    }
  }
  for (const auto& [key, e] : topo.edges) {
    const std::string name = key.first.str() + " -> " + key.second.str();
    if (!(e.caller == key.first && e.callee == key.second)) {
      v.push_back("edge " + name + " stored under a different key");
    }
    if (!topo.vertices.contains(key.first)) v.push_back("edge " + name + " has unknown caller");
    if (!topo.vertices.contains(key.second)) v.push_back("edge " + name + " has unknown callee");
    if (key.first == key.second) v.push_back("edge " + name + " is a self loop");
    if (e.call_count < 1) v.push_back("edge " + name + " has call_count 0");
    if (e.is_remote != (key.first.service != key.second.service)) {
      v.push_back("edge " + name + " has inconsistent is_remote flag");
    }
  }
  return v;
}

}  // namespace palette
