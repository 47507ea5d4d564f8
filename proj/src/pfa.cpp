#include "palette/pfa.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>

#include "palette/topology.hpp"

namespace palette {

namespace {

// Mutable count graph used while building and coarsening.
struct CountGraph {
  std::vector<PfaState> states;
  std::vector<std::map<StateId, std::uint64_t>> out;
  std::vector<bool> alive;

  StateId add(PfaState s) {
    states.push_back(std::move(s));
    out.emplace_back();
    alive.push_back(true);
    return static_cast<StateId>(states.size() - 1);
  }

  static CountGraph from(const Pfa& pfa) {
    CountGraph g;
    for (const auto& s : pfa.states) g.add(s);
    for (const auto& t : pfa.transitions) g.out[t.from][t.to] += t.count;
    return g;
  }

  std::map<CallSet, double> distribution(StateId s) const {
    std::map<CallSet, double> d;
    std::uint64_t total = 0;
    for (const auto& [to, c] : out[s]) total += c;
    if (total == 0) return d;
    for (const auto& [to, c] : out[s]) {
      d[states[to].call_set] += static_cast<double>(c) / static_cast<double>(total);
    }
    return d;
  }

  // Absorbs `b` into `a` and folds same-label targets recursively.
  void merge(StateId a, StateId b) {
    std::vector<StateId> rep(states.size());
    std::iota(rep.begin(), rep.end(), 0);
    auto find = [&rep](StateId x) {
      while (rep[x] != x) x = rep[x] = rep[rep[x]];
      return x;
    };
    std::deque<std::pair<StateId, StateId>> work{{a, b}};
    while (!work.empty()) {
      auto [x, y] = work.front();
      work.pop_front();
      x = find(x);
      y = find(y);
      if (x == y) continue;
      const StateId keep = std::min(x, y);
      const StateId gone = std::max(x, y);

      for (std::size_t s = 0; s < out.size(); ++s) {
        if (!alive[s]) continue;
        auto it = out[s].find(gone);
        if (it == out[s].end()) continue;
        const std::uint64_t c = it->second;
        out[s].erase(it);
        out[s][keep] += c;
      }
      for (const auto& [to, c] : out[gone]) out[keep][to == gone ? keep : to] += c;
      out[gone].clear();
      alive[gone] = false;
      rep[gone] = keep;

      std::map<CallSet, StateId> seen;
      for (const auto& [to, c] : out[keep]) {
        if (states[to].kind != StateKind::step) continue;
        auto [it, fresh] = seen.try_emplace(states[to].call_set, to);
        if (!fresh) work.emplace_back(it->second, to);
      }
    }
  }

  Pfa to_pfa(const VertexId& api) const {
    Pfa p;
    p.api = api;
    std::vector<StateId> remap(states.size(), 0);
    for (std::size_t s = 0; s < states.size(); ++s) {
      if (!alive[s]) continue;
      remap[s] = static_cast<StateId>(p.states.size());
      p.states.push_back(states[s]);
    }
    for (std::size_t s = 0; s < states.size(); ++s) {
      if (!alive[s]) continue;
      for (const auto& [to, c] : out[s]) {
        p.transitions.push_back({remap[s], remap[to], 0.0, c});
      }
    }
    return p;
  }
};

void sort_transitions(std::vector<PfaTransition>& ts) {
  std::sort(ts.begin(), ts.end(), [](const PfaTransition& a, const PfaTransition& b) {
    return std::tie(a.from, a.to) < std::tie(b.from, b.to);
  });
}

}  // namespace

std::string_view to_string(StateKind kind) {
  switch (kind) {
    case StateKind::start: return "start";
    case StateKind::finish: return "finish";
    case StateKind::step: return "step";
  }
  return "unknown";
}

std::span<const PfaTransition> Pfa::outgoing(StateId state) const {
  auto lo = std::lower_bound(transitions.begin(), transitions.end(), state,
                             [](const PfaTransition& t, StateId s) { return t.from < s; });
  auto hi = std::upper_bound(lo, transitions.end(), state,
                             [](StateId s, const PfaTransition& t) { return s < t.from; });
  return {lo, hi};
}

const PfaTransition* Pfa::find_transition(StateId from, StateId to) const {
  for (const auto& t : outgoing(from)) {
    if (t.to == to) return &t;
  }
  return nullptr;
}

bool Pfa::is_leaf() const { return states.size() <= 2; }

void CoarsenConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 2.0)) throw ConfigError("coarsen tau must lie in [0, 2]");
  if (overlap_epsilon_us < 0) throw ConfigError("overlap epsilon must be >= 0");
}

std::vector<std::vector<std::size_t>> step_groups(std::span<const Span> children,
                                                  std::int64_t epsilon_us) {
  const std::size_t n = children.size();
  if (n == 0) return {};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Span& x = children[a];
    const Span& y = children[b];
    return std::tie(x.start_us, x.span_id, x.duration_us, x.service, x.operation) <
           std::tie(y.start_us, y.span_id, y.duration_us, y.service, y.operation);
  });

  std::vector<std::size_t> root(n);
  std::iota(root.begin(), root.end(), 0);
  auto find = [&root](std::size_t x) {
    while (root[x] != x) x = root[x] = root[root[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const Span& a = children[order[i]];
      const Span& b = children[order[j]];
      if (a.start_us < b.end_us() + epsilon_us && b.start_us < a.end_us() + epsilon_us) {
        const std::size_t ra = find(i);
        const std::size_t rb = find(j);
        // The representative is always the earliest member in sorted order.
        if (ra != rb) root[std::max(ra, rb)] = std::min(ra, rb);
      }
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[find(i)].push_back(order[i]);
  std::vector<std::vector<std::size_t>> groups;
  groups.reserve(members.size());
  for (auto& [r, idx] : members) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const Span& x = children[a];
      const Span& y = children[b];
      return std::tie(x.service, x.operation, x.duration_us, x.span_id) <
             std::tie(y.service, y.operation, y.duration_us, y.span_id);
    });
    groups.push_back(std::move(idx));
  }
  return groups;
}

std::vector<CallSet> extract_steps(std::span<const Span> children, std::int64_t epsilon_us) {
  std::vector<CallSet> steps;
  for (const auto& g : step_groups(children, epsilon_us)) {
    CallSet set;
    set.reserve(g.size());
    for (std::size_t i : g) set.push_back(children[i].vertex());
    steps.push_back(std::move(set));
  }
  return steps;
}

std::vector<CallSet> extract_steps(const TraceTree& trace, std::size_t node, std::int64_t epsilon_us) {
  std::vector<Span> children;
  for (std::size_t c : trace.nodes.at(node).children) children.push_back(trace.nodes[c].span);
  return extract_steps(children, epsilon_us);
}

Pfa build_pfa(const VertexId& api, std::span<const std::vector<CallSet>> sequences) {
  CountGraph g;
  g.add({StateKind::start, {}});
  g.add({StateKind::finish, {}});
  std::vector<std::map<CallSet, StateId>> trie(2);

  for (const auto& seq : sequences) {
    StateId cur = Pfa::kStart;
    for (const auto& set : seq) {
      if (set.empty()) throw ContractViolation("build_pfa: empty call set in sequence for " + api.str());
      auto it = trie[cur].find(set);
      StateId next;
      if (it == trie[cur].end()) {
        next = g.add({StateKind::step, set});
        trie.emplace_back();
        trie[cur].emplace(set, next);
      } else {
        next = it->second;
      }
      ++g.out[cur][next];
      cur = next;
    }
    ++g.out[cur][Pfa::kFinish];
  }
  if (g.out[Pfa::kStart].empty()) g.out[Pfa::kStart][Pfa::kFinish] = 0;
  return canonicalize(g.to_pfa(api), /*from_counts=*/true);
}

Pfa coarsen(const Pfa& pfa, const CoarsenConfig& config) {
  config.validate();
  CountGraph g = CountGraph::from(pfa);
  // Small slack so that L1 computed in floating point does not flip an exact
  // tie such as 0.05 vs tau = 0.05.
  const double tol = config.tau + 1e-12;
  for (;;) {
    std::map<CallSet, std::vector<StateId>> buckets;
    std::vector<std::map<CallSet, double>> dist(g.states.size());
    for (StateId s = 0; s < g.states.size(); ++s) {
      if (!g.alive[s] || g.states[s].kind != StateKind::step) continue;
      buckets[g.states[s].call_set].push_back(s);
      dist[s] = g.distribution(s);
    }
    std::optional<std::pair<StateId, StateId>> best;
    for (const auto& [label, ids] : buckets) {
      for (std::size_t a = 0; a < ids.size(); ++a) {
        if (best && ids[a] > best->first) break;
        for (std::size_t b = a + 1; b < ids.size(); ++b) {
          if (l1_distance(dist[ids[a]], dist[ids[b]]) <= tol) {
            const std::pair<StateId, StateId> cand{ids[a], ids[b]};
            if (!best || cand < *best) best = cand;
            break;
          }
        }
      }
    }
    if (!best) break;
    g.merge(best->first, best->second);
  }
  return canonicalize(g.to_pfa(pfa.api), /*from_counts=*/true);
}

std::vector<CallSet> sample_path(const Pfa& pfa, Rng& rng, std::size_t max_steps) {
  std::vector<CallSet> path;
  StateId cur = Pfa::kStart;
  std::size_t steps = 0;
  while (cur != Pfa::kFinish) {
    const auto out = pfa.outgoing(cur);
    if (out.empty()) {
      throw PfaWalkError("PFA for " + pfa.api.str() + " has a state without outgoing transitions");
    }
    const double u = rng.uniform01();
    double cumulative = 0.0;
    const PfaTransition* chosen = nullptr;
    for (const auto& t : out) {
      if (t.probability <= 0.0) continue;
      chosen = &t;
      cumulative += t.probability;
      if (u < cumulative) break;
    }
    if (chosen == nullptr) {
      throw PfaWalkError("PFA for " + pfa.api.str() + " has a state with no probability mass");
    }
    cur = chosen->to;
    if (cur == Pfa::kFinish) break;
    if (++steps > max_steps) {
      throw PfaWalkError("PFA walk for " + pfa.api.str() + " exceeded " + std::to_string(max_steps) +
                         " steps; probable cycle without finish mass");
    }
    path.push_back(pfa.states[cur].call_set);
  }
  return path;
}

std::map<CallSet, double> successor_distribution(const Pfa& pfa, StateId state) {
  std::map<CallSet, double> d;
  for (const auto& t : pfa.outgoing(state)) d[pfa.states[t.to].call_set] += t.probability;
  return d;
}

std::map<CallSet, double> first_step_distribution(const Pfa& pfa) {
  return successor_distribution(pfa, Pfa::kStart);
}

double l1_distance(const std::map<CallSet, double>& a, const std::map<CallSet, double>& b) {
  double d = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      d += std::abs(ia->second);
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      d += std::abs(ib->second);
      ++ib;
    } else {
      d += std::abs(ia->second - ib->second);
      ++ia;
      ++ib;
    }
  }
  return d;
}

Pfa canonicalize(const Pfa& pfa, bool from_counts) {
  const std::size_t n = pfa.states.size();
  std::vector<std::vector<const PfaTransition*>> out(n);
  for (const auto& t : pfa.transitions) {
    if (t.from < n && t.to < n) out[t.from].push_back(&t);
  }

  constexpr StateId kUnset = ~StateId{0};
  std::vector<StateId> remap(n, kUnset);
  std::vector<StateId> order;
  remap[Pfa::kStart] = 0;
  remap[Pfa::kFinish] = 1;
  std::deque<StateId> queue{Pfa::kStart};
  StateId next_id = 2;
  while (!queue.empty()) {
    const StateId s = queue.front();
    queue.pop_front();
    auto targets = out[s];
    std::sort(targets.begin(), targets.end(), [&](const PfaTransition* a, const PfaTransition* b) {
      const auto& la = pfa.states[a->to].call_set;
      const auto& lb = pfa.states[b->to].call_set;
      if (la != lb) return la < lb;
      return a->to < b->to;
    });
    for (const auto* t : targets) {
      if (remap[t->to] != kUnset) continue;
      remap[t->to] = next_id++;
      order.push_back(t->to);
      queue.push_back(t->to);
    }
  }

  Pfa c;
  c.api = pfa.api;
  c.states.resize(next_id);
  c.states[0] = {StateKind::start, {}};
  c.states[1] = {StateKind::finish, {}};
  for (StateId old : order) c.states[remap[old]] = pfa.states[old];

  std::map<std::pair<StateId, StateId>, PfaTransition> merged;
  for (const auto& t : pfa.transitions) {
    if (t.from >= n || t.to >= n) continue;
    if (remap[t.from] == kUnset || remap[t.to] == kUnset) continue;
    auto& m = merged[{remap[t.from], remap[t.to]}];
    m.from = remap[t.from];
    m.to = remap[t.to];
    m.count += t.count;
    m.probability += t.probability;
  }
  for (auto& [key, t] : merged) c.transitions.push_back(t);
  sort_transitions(c.transitions);

  if (from_counts) {
    std::map<StateId, std::uint64_t> totals;
    std::map<StateId, std::size_t> fanout;
    for (const auto& t : c.transitions) {
      totals[t.from] += t.count;
      ++fanout[t.from];
    }
    for (auto& t : c.transitions) {
      const auto total = totals[t.from];
      t.probability = total > 0 ? static_cast<double>(t.count) / static_cast<double>(total)
                                : 1.0 / static_cast<double>(fanout[t.from]);
    }
  }
  return c;
}

std::vector<std::string> check_pfa(const Pfa& pfa) {
  std::vector<std::string> v;
  const std::string name = "pfa " + pfa.api.str();
  const std::size_t n = pfa.states.size();
  if (n < 2 || pfa.states[Pfa::kStart].kind != StateKind::start ||
      pfa.states[Pfa::kFinish].kind != StateKind::finish) {
    v.push_back(name + ": states 0 and 1 must be start and finish");
    return v;
  }
  for (std::size_t s = 0; s < n; ++s) {
    const auto& st = pfa.states[s];
    if (s >= 2 && st.kind != StateKind::step) {
      v.push_back(name + ": state " + std::to_string(s) + " is a second start/finish state");
    }
    if (st.kind != StateKind::step && !st.call_set.empty()) {
      v.push_back(name + ": start/finish state " + std::to_string(s) + " has a call set");
    }
    if (st.kind == StateKind::step && st.call_set.empty()) {
      v.push_back(name + ": step state " + std::to_string(s) + " has an empty call set");
    }
    if (!std::is_sorted(st.call_set.begin(), st.call_set.end())) {
      v.push_back(name + ": state " + std::to_string(s) + " call set is not sorted");
    }
  }

  std::vector<double> sums(n, 0.0);
  std::vector<std::vector<StateId>> fwd(n), back(n);
  for (std::size_t i = 0; i < pfa.transitions.size(); ++i) {
    const auto& t = pfa.transitions[i];
    if (t.from >= n || t.to >= n) {
      v.push_back(name + ": transition references a missing state");
      continue;
    }
    if (i > 0) {
      const auto& prev = pfa.transitions[i - 1];
      if (std::tie(prev.from, prev.to) >= std::tie(t.from, t.to)) {
        v.push_back(name + ": transitions not sorted or duplicated at " + std::to_string(t.from) + "->" +
                    std::to_string(t.to));
      }
    }
    if (t.from == Pfa::kFinish) v.push_back(name + ": finish state has an outgoing transition");
    if (t.to == Pfa::kStart) v.push_back(name + ": start state has an incoming transition");
    if (!(t.probability >= 0.0 && t.probability <= 1.0 + 1e-12)) {
      v.push_back(name + ": transition " + std::to_string(t.from) + "->" + std::to_string(t.to) +
                  " probability out of range");
    }
    sums[t.from] += t.probability;
    fwd[t.from].push_back(t.to);
    back[t.to].push_back(t.from);
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (s == Pfa::kFinish) continue;
    if (std::abs(sums[s] - 1.0) > 1e-9) {
      v.push_back(name + ": state " + std::to_string(s) + " outgoing probabilities sum to " +
                  std::to_string(sums[s]));
    }
  }

  auto reach = [n](const std::vector<std::vector<StateId>>& adj, StateId from) {
    std::vector<bool> seen(n, false);
    std::vector<StateId> stack{from};
    seen[from] = true;
    while (!stack.empty()) {
      const StateId s = stack.back();
      stack.pop_back();
      for (StateId t : adj[s]) {
        if (!seen[t]) {
          seen[t] = true;
          stack.push_back(t);
        }
      }
    }
    return seen;
  };
  const auto from_start = reach(fwd, Pfa::kStart);
  const auto to_finish = reach(back, Pfa::kFinish);
  for (std::size_t s = 0; s < n; ++s) {
    if (!from_start[s] || !to_finish[s]) {
      v.push_back(name + ": state " + std::to_string(s) + " is not on a start->finish path");
    }
  }

  // Same check restricted to transitions that carry mass: a walk must not be
  // able to get trapped in a loop with no way out.
  std::vector<std::vector<StateId>> live_fwd(n), live_back(n);
  for (const auto& t : pfa.transitions) {
    if (t.from >= n || t.to >= n || !(t.probability > 0.0)) continue;
    live_fwd[t.from].push_back(t.to);
    live_back[t.to].push_back(t.from);
  }
  const auto live_start = reach(live_fwd, Pfa::kStart);
  const auto live_finish = reach(live_back, Pfa::kFinish);
  for (std::size_t s = 0; s < n; ++s) {
    if (live_start[s] && !live_finish[s]) {
      v.push_back(name + ": state " + std::to_string(s) + " cannot reach finish with positive probability");
    }
  }
  return v;
}

std::map<VertexId, Pfa> build_pfas(std::span<const TraceTree> traces, const CoarsenConfig& config) {
  config.validate();
  std::map<VertexId, std::vector<std::vector<CallSet>>> sequences;
  for (const auto& trace : traces) {
    if (has_self_call(trace)) continue;
    for (std::size_t i = 0; i < trace.nodes.size(); ++i) {
      sequences[trace.nodes[i].span.vertex()].push_back(
          extract_steps(trace, i, config.overlap_epsilon_us));
    }
  }
  std::map<VertexId, Pfa> out;
  for (const auto& [api, seqs] : sequences) {
    out.emplace(api, coarsen(build_pfa(api, seqs), config));
  }
  return out;
}

}  // namespace palette
