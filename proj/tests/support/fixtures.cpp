#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <numeric>

namespace palette::fixtures {

std::size_t TraceWriter::add(std::optional<std::size_t> parent, const VertexId& v, std::int64_t start,
                             std::int64_t duration) {
  Span s;
  s.trace_id = trace_id_;
  s.span_id = "s" + std::to_string(spans_.size() + 1);
  if (parent) s.parent_span_id = spans_[*parent].span_id;
  s.service = v.service;
  s.operation = v.operation;
  s.start_us = start;
  s.duration_us = duration;
  spans_.push_back(std::move(s));
  return spans_.size() - 1;
}

double lognormal(Rng& rng, double median, double sigma) { return median * std::exp(sigma * rng.normal()); }

namespace {

std::int64_t draw_us(Rng& rng, double median, double sigma) {
  return std::max<std::int64_t>(1, std::llround(lognormal(rng, median, sigma)));
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

}  // namespace

std::vector<Span> example_spans(std::size_t scale, std::uint64_t seed) {
  // Path kinds and their counts per 100 traces.
  enum Kind { kBOnly, kBThenDE, kCOnly, kCThenDE, kDEOnly };
  const std::pair<Kind, std::size_t> mix[] = {{kBOnly, 32}, {kBThenDE, 8}, {kCOnly, 45}, {kCThenDE, 5}, {kDEOnly, 10}};
  std::vector<Kind> kinds;
  for (const auto& [k, n] : mix) kinds.insert(kinds.end(), n * scale, k);
  Rng rng(seed);
  for (std::size_t i = kinds.size(); i > 1; --i) std::swap(kinds[i - 1], kinds[rng.uniform_index(i)]);

  std::vector<Span> out;
  std::int64_t clock = 0;
  for (std::size_t t = 0; t < kinds.size(); ++t) {
    TraceWriter w(numbered("ex-", t));
    const std::int64_t t0 = clock;
    const std::size_t root = w.add(std::nullopt, kA, t0, 0);
    std::int64_t cursor = t0 + 200;
    auto single = [&](const VertexId& v, double median) {
      const auto d = draw_us(rng, median, 0.3);
      w.add(root, v, cursor, d);
      cursor += d + 100;
    };
    auto pair = [&]() {
      const auto dd = draw_us(rng, 5000, 0.3);
      const auto de = draw_us(rng, 8000, 0.3);
      w.add(root, kD, cursor, dd);
      w.add(root, kE, cursor, de);
      cursor += std::max(dd, de) + 100;
    };
    switch (kinds[t]) {
      case kBOnly: single(kB, 10000); break;
      case kBThenDE: single(kB, 10000); pair(); break;
      case kCOnly: single(kC, 20000); break;
      case kCThenDE: single(kC, 20000); pair(); break;
      case kDEOnly: pair(); break;
    }
    w.set_duration(root, cursor - t0 + draw_us(rng, 1000, 0.2));
    clock = cursor + 10000;
    auto& spans = w.spans();
    std::move(spans.begin(), spans.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<Span> two_caller_spans(std::size_t per_caller, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Span> out;
  std::int64_t clock = 0;
  for (std::size_t i = 0; i < 2 * per_caller; ++i) {
    const bool light = i % 2 == 0;
    TraceWriter w(numbered("twocaller-", i));
    const std::size_t root = w.add(std::nullopt, light ? kCallerA : kCallerC, clock, 0);
    const auto b = draw_us(rng, light ? kLightMedianUs : kHeavyMedianUs, kLeafSigma);
    w.add(root, kSharedLeaf, clock + 500, b);
    w.set_duration(root, 500 + b + draw_us(rng, 2000, 0.3));
    clock += 500 + b + 5000;
    auto& spans = w.spans();
    std::move(spans.begin(), spans.end(), std::back_inserter(out));
  }
  return out;
}

namespace {

struct Behavior {
  std::vector<std::vector<std::vector<std::size_t>>> alternatives;  // alt -> step -> callees
  std::vector<double> weights;
  double median_us = 1000.0;
};

std::int64_t generate(const std::vector<VertexId>& apis, const std::vector<Behavior>& behavior, std::size_t api,
                      std::int64_t start, std::optional<std::size_t> parent, TraceWriter& w, Rng& rng) {
  const std::size_t idx = w.add(parent, apis[api], start, 0);
  const Behavior& b = behavior[api];
  if (b.alternatives.empty()) {
    const auto d = draw_us(rng, b.median_us, 0.4);
    w.set_duration(idx, d);
    return d;
  }
  double u = rng.uniform01() * std::accumulate(b.weights.begin(), b.weights.end(), 0.0);
  std::size_t alt = 0;
  while (alt + 1 < b.weights.size() && u >= b.weights[alt]) u -= b.weights[alt++];
  std::int64_t cursor = start + 100;
  for (const auto& step : b.alternatives[alt]) {
    std::int64_t longest = 0;
    for (std::size_t callee : step) longest = std::max(longest, generate(apis, behavior, callee, cursor, idx, w, rng));
    cursor += longest + 50;
  }
  const std::int64_t d = cursor - start + draw_us(rng, b.median_us, 0.3);
  w.set_duration(idx, d);
  return d;
}

}  // namespace

std::vector<Span> random_system_spans(std::size_t services, std::size_t traces, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<VertexId> apis;
  for (std::size_t s = 0; s < services; ++s) {
    const std::size_t ops = 1 + rng.uniform_index(2);
    for (std::size_t o = 0; o < ops; ++o) apis.push_back({numbered("svc", s), "op" + std::to_string(o)});
  }
  const std::size_t n = apis.size();
  std::vector<Behavior> behavior(n);
  for (std::size_t i = 0; i < n; ++i) {
    Behavior& b = behavior[i];
    b.median_us = 500.0 + 20000.0 * rng.uniform01();
    const std::size_t later = n - i - 1;
    if (later == 0 || (i >= 3 && rng.uniform01() < 0.35)) continue;
    const std::size_t alts = 1 + rng.uniform_index(3);
    for (std::size_t a = 0; a < alts; ++a) {
      std::vector<std::vector<std::size_t>> steps;
      const std::size_t k = 1 + rng.uniform_index(3);
      for (std::size_t s = 0; s < k; ++s) {
        std::vector<std::size_t> members{i + 1 + rng.uniform_index(later)};
        if (later > 1 && rng.uniform01() < 0.3) {
          const std::size_t other = i + 1 + rng.uniform_index(later);
          if (other != members[0]) members.push_back(other);
        }
        steps.push_back(std::move(members));
      }
      b.alternatives.push_back(std::move(steps));
      b.weights.push_back(0.2 + rng.uniform01());
    }
  }
  // Give every non-root API a caller so that all services show up in traces.
  for (std::size_t i = 3; i < n; ++i) {
    bool called = false;
    for (std::size_t j = 0; j < i && !called; ++j) {
      for (const auto& alt : behavior[j].alternatives) {
        for (const auto& step : alt) called = called || std::find(step.begin(), step.end(), i) != step.end();
      }
    }
    if (called) continue;
    std::vector<std::size_t> parents;
    for (std::size_t j = 0; j < i; ++j) {
      if (!behavior[j].alternatives.empty()) parents.push_back(j);
    }
    auto& alts = behavior[parents[rng.uniform_index(parents.size())]].alternatives;
    alts[rng.uniform_index(alts.size())].push_back({i});
  }

  std::vector<Span> out;
  std::int64_t clock = 0;
  const std::size_t roots = std::min<std::size_t>(3, n);
  for (std::size_t t = 0; t < traces; ++t) {
    TraceWriter w(numbered("rnd-", t));
    const auto d = generate(apis, behavior, rng.uniform_index(roots), clock, std::nullopt, w, rng);
    clock += d + 1000;
    auto& spans = w.spans();
    std::move(spans.begin(), spans.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<TraceTree> assemble(const std::vector<Span>& spans) { return assemble_traces(spans).traces; }

Bundle fitted_bundle(const std::vector<Span>& spans, const BuildConfig& config) {
  const auto traces = assemble(spans);
  Bundle b = build_bundle(traces, config);
  FitOptions opts;
  opts.reservoir_size = config.reservoir_size;
  opts.seed = config.seed;
  fit_bundle(b, traces, opts);
  return b;
}

namespace {

template <class Map>
auto pick(const Map& m, Rng& rng) {
  auto it = m.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(rng.uniform_index(m.size())));
  return it;
}

}  // namespace

InterventionOp random_op(const Bundle& b, Rng& rng, std::size_t serial) {
  const auto& vertices = b.topology.vertices;
  const auto& services = b.topology.partitions;
  const std::size_t kind = rng.uniform_index(9);
  if (vertices.empty()) return op::AddVertex{{numbered("new", serial), "op"}};
  switch (kind) {
    case 0: {
      if (rng.uniform01() < 0.5) return op::AddVertex{{numbered("new", serial), "op"}};
      return op::AddVertex{{*pick(services, rng), numbered("op", serial)}};
    }
    case 1: return op::RemoveVertex{pick(vertices, rng)->first};
    case 2:
      return op::AddEdge{pick(vertices, rng)->first, pick(vertices, rng)->first, 0.05 + 0.5 * rng.uniform01(),
                         0.5 + rng.uniform01()};
    case 3: {
      if (b.topology.edges.empty()) break;
      const auto& key = pick(b.topology.edges, rng)->first;
      return op::RemoveEdge{key.first, key.second};
    }
    case 4: {
      const auto& [api, pfa] = *pick(b.pfas, rng);
      const auto& t = pfa.transitions[rng.uniform_index(pfa.transitions.size())];
      return op::SetTransitionProb{api, t.from, t.to, rng.uniform01()};
    }
    case 5: {
      const auto& [api, model] = *pick(b.models, rng);
      const auto callees = model.equation.callees();
      if (callees.empty()) break;
      return op::ScaleCoefficient{api, callees[rng.uniform_index(callees.size())], 0.5 + 1.5 * rng.uniform01()};
    }
    case 6: return op::SetLocalWork{pick(vertices, rng)->first, 5000.0 * rng.uniform01()};
    case 7: {
      std::set<std::string> keep;
      for (const auto& s : services) {
        if (rng.uniform01() < 0.8) keep.insert(s);
      }
      return op::Downscale{keep};
    }
    case 8: {
      const std::string a = *pick(services, rng);
      const std::string c = *pick(services, rng);
      std::vector<std::string> merge{a};
      if (c != a) merge.push_back(c);
      return op::MergeServices{merge, numbered("merged", serial)};
    }
  }
  return op::SetLocalWork{pick(vertices, rng)->first, 1000.0};
}

}  // namespace palette::fixtures
