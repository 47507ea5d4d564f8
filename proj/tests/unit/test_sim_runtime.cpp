#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "palette/sim_runtime.hpp"
#include "palette/stats.hpp"

using namespace palette;
using fixtures::TraceWriter;

namespace {

const VertexId L{"L", "leaf"}, A{"A", "x"}, D{"D", "w"}, E{"E", "v"};

Bundle leaf_bundle(double constant_us) {
  TraceWriter w("t");
  w.add(std::nullopt, L, 0, 100);
  BuildConfig cfg;
  cfg.reservoir_size = 16;
  const auto b = fixtures::fitted_bundle(w.spans(), cfg);
  return palette::apply(b, {op::SetLocalWork{L, constant_us}}).bundle;
}

// A calls D and E concurrently; every lambda 1, constant local work.
Bundle concurrent_bundle(double a_us, double d_us, double e_us) {
  std::vector<Span> spans;
  for (int i = 0; i < 20; ++i) {
    TraceWriter w("t" + std::to_string(i));
    const auto root = w.add(std::nullopt, A, 0, 200 + i);
    w.add(root, D, 10, 50 + i);
    w.add(root, E, 10, 80 + 2 * i);
    spans.insert(spans.end(), w.spans().begin(), w.spans().end());
  }
  BuildConfig cfg;
  cfg.reservoir_size = 16;
  Bundle b = fixtures::fitted_bundle(spans, cfg);
  for (auto& g : b.models.at(A).equation.groups) {
    for (auto& m : g.members) m.lambda = 1.0;
  }
  return palette::apply(b, {op::SetLocalWork{A, a_us}, op::SetLocalWork{D, d_us}, op::SetLocalWork{E, e_us}}).bundle;
}

const Bundle& example() {
  static const Bundle b = [] {
    BuildConfig cfg;
    cfg.reservoir_size = 256;
    return fixtures::fitted_bundle(fixtures::example_spans(10, 9), cfg);
  }();
  return b;
}

SimConfig config(std::size_t n, std::uint64_t seed = 1) {
  SimConfig c;
  c.root = fixtures::kA;
  c.request_count = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("constant leaf") {
  SimConfig c;
  c.root = L;
  c.request_count = 3;
  const auto out = simulate(leaf_bundle(5000), c);
  REQUIRE(out.spans.size() == 3);
  std::set<std::string> traces;
  for (const auto& s : out.spans) {
    CHECK(s.duration_us == 5000);
    CHECK_FALSE(s.parent_span_id);
    traces.insert(s.trace_id);
  }
  CHECK(traces.size() == 3);
  CHECK(out.stats.completed == 3);
}

TEST_CASE("concurrent members take the max") {
  SimConfig c;
  c.root = A;
  c.request_count = 1;
  const auto out = simulate(concurrent_bundle(0, 30000, 50000), c);
  REQUIRE(out.spans.size() == 3);
  CHECK(out.spans[0].duration_us == 50000);
  CHECK(out.spans[1].start_us == out.spans[2].start_us);
}

TEST_CASE("baggage") {
  const VertexId B{"B", "y"};
  const auto a = make_baggage({}, A);
  CHECK(a == Baggage{{"upstream_caller", "A.x"}});

  const auto to_b = make_baggage({}, A, {{"A.x.queue_us", "7"}});
  const auto to_c = make_baggage(to_b, B);
  CHECK(to_c.at("upstream_caller") == "B.y");
  CHECK(to_c.at("A.x.queue_us") == "7");
  CHECK(to_b.at("upstream_caller") == "A.x");
  CHECK_THROWS_AS(make_baggage(to_c, B, {{"A.x.queue_us", "8"}}), ContractViolation);
  CHECK_THROWS_AS(make_baggage(to_c, B, {{"upstream_caller", "Z.z"}}), ContractViolation);
}

TEST_CASE("live correction") {
  const VertexId B{"B", "y"}, C{"C", "z"};
  CausalEquation eq;
  eq.groups = {{{B}, {{B, 1.0, 2.0, 100.0}}, 1.0, 1.0}, {{C}, {{C, 1.0, 3.0, 200.0}}, 1.0, 1.0}};
  const std::map<VertexId, double> all{{B, 10.0}, {C, 20.0}};
  CHECK(correct(eq, all, {}) == evaluate(eq, all, {{B, true}, {C, true}}));
  CHECK(correct(eq, {}, {B, C}) == doctest::Approx(expected_latency(eq)));
  CHECK(correct(eq, {}, {B, C}) == doctest::Approx(2 * 100 + 3 * 200));
  // First child measured at twice its expectation shifts the total by lambda_B * 100.
  CHECK(correct(eq, {{B, 200.0}}, {C}) - correct(eq, {}, {B, C}) == doctest::Approx(2.0 * 100.0));
  CHECK(correct(eq, {}, {}) == 0.0);
}

TEST_CASE("output is deterministic and independent of thread count") {
  auto c = config(500, 7);
  const auto one = simulate(example(), c);
  CHECK(simulate(example(), c).spans == one.spans);
  c.threads = 4;
  CHECK(simulate(example(), c).spans == one.spans);
  c.seed = 8;
  c.threads = 1;
  CHECK(simulate(example(), c).spans != one.spans);
}

TEST_CASE("synthetic spans nest properly") {
  auto c = config(2000, 3);
  const auto out = simulate(example(), c);
  CHECK(out.stats.completed == 2000);
  const auto r = assemble_traces(out.spans);
  CHECK(r.rejected.empty());
  CHECK(r.nesting_warnings == 0);
  for (const auto& t : r.traces) {
    for (const auto& n : t.nodes) {
      std::vector<const Span*> kids;
      for (std::size_t k : n.children) kids.push_back(&t.nodes[k].span);
      for (std::size_t i = 0; i < kids.size(); ++i) {
        CHECK(kids[i]->start_us >= n.span.start_us);
        CHECK(kids[i]->end_us() <= n.span.end_us());
        for (std::size_t j = i + 1; j < kids.size(); ++j) {
          const bool overlap = kids[i]->start_us < kids[j]->end_us() && kids[j]->start_us < kids[i]->end_us();
          // Same start means same concurrent step; different start means sequential.
          CHECK(overlap == (kids[i]->start_us == kids[j]->start_us));
        }
      }
    }
  }
}

TEST_CASE("first steps follow the automaton") {
  constexpr std::size_t n = 20000;
  const auto out = simulate(example(), config(n, 11));
  const auto traces = assemble_traces(out.spans).traces;
  std::map<CallSet, double> freq;
  for (const auto& t : traces) {
    const auto steps = extract_steps(t, 0, 0);
    freq[steps.empty() ? CallSet{} : steps.front()] += 1.0 / n;
  }
  // sd at n = 2e4 is at most 0.0036; 0.02 is above 5 sd.
  CHECK(std::abs(freq[{fixtures::kB}] - 0.4) < 0.02);
  CHECK(std::abs(freq[{fixtures::kC}] - 0.5) < 0.02);
  CHECK(std::abs(freq[make_call_set({fixtures::kD, fixtures::kE})] - 0.1) < 0.02);
}

TEST_CASE("caller-conditioned leaf latency versus the naive baseline") {
  BuildConfig cfg;
  cfg.reservoir_size = 4096;
  const auto b = fixtures::fitted_bundle(fixtures::two_caller_spans(3000, 5), cfg);
  SimConfig c;
  c.request_count = 20000;
  c.seed = 2;
  auto medians = [&](bool naive) {
    c.naive = naive;
    const auto traces = assemble_traces(simulate(b, c).spans).traces;
    std::map<std::string, std::vector<double>> by_caller;
    for (const auto& t : traces) {
      for (const auto& node : t.nodes) {
        if (node.span.vertex() == fixtures::kSharedLeaf) {
          by_caller[t.nodes[*node.parent].span.service].push_back(static_cast<double>(node.span.duration_us));
        }
      }
    }
    return std::pair{quantile(by_caller["A"], 0.5), quantile(by_caller["C"], 0.5)};
  };
  const auto [light, heavy] = medians(false);
  CHECK(std::abs(light / fixtures::kLightMedianUs - 1.0) < 0.1);
  CHECK(std::abs(heavy / fixtures::kHeavyMedianUs - 1.0) < 0.1);
  const auto [nl, nh] = medians(true);
  CHECK(std::max({nl / fixtures::kLightMedianUs, fixtures::kLightMedianUs / nl, nh / fixtures::kHeavyMedianUs,
                  fixtures::kHeavyMedianUs / nh}) >= 5.0);
}

TEST_CASE("depth limit aborts requests") {
  auto c = config(50, 1);
  c.max_depth = 1;
  const auto out = simulate(example(), c);
  CHECK(out.stats.aborted_depth + out.stats.completed == 50);
  CHECK(out.stats.aborted_depth > 0);
  for (const auto& s : out.spans) CHECK(s.service == "A");
}

TEST_CASE("closed loop keeps at most the configured requests in flight") {
  auto c = config(300, 4);
  c.closed_concurrency = 2;
  const auto out = simulate(example(), c);
  std::vector<std::pair<std::int64_t, int>> events;
  for (const auto& s : out.spans) {
    if (s.parent_span_id) continue;
    events.push_back({s.start_us, +1});
    events.push_back({s.end_us(), -1});
  }
  std::sort(events.begin(), events.end());
  int live = 0, peak = 0;
  for (const auto& [t, d] : events) peak = std::max(peak, live += d);
  CHECK(peak <= 2);
}

TEST_CASE("configuration is validated") {
  auto c = config(0);
  CHECK_THROWS_AS(simulate(example(), c), ConfigError);
  c = config(1);
  c.open_loop_rate = 0;
  CHECK_THROWS_AS(simulate(example(), c), ConfigError);
  c = config(1);
  c.root = VertexId{"Z", "z"};
  CHECK_THROWS_AS(simulate(example(), c), ConfigError);
  CHECK(work_model_from_string("busy") == WorkModel::busy);
  CHECK_THROWS_AS(work_model_from_string("fast"), ConfigError);
}
