#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "palette/pfa.hpp"

using namespace palette;

namespace {

const VertexId B{"B", "y"}, C{"C", "z"}, D{"D", "w"}, E{"E", "v"}, X{"X", "a"}, Y{"Y", "b"};
const CallSet kB{B}, kC{C}, kDE = make_call_set({D, E}), kX{X}, kY{Y};

Span child(const VertexId& v, std::int64_t start, std::int64_t end, const std::string& id) {
  return {"t", id, std::string("p"), v.service, v.operation, start, end - start};
}

std::vector<StateId> states_labeled(const Pfa& pfa, StateKind kind, const CallSet& set = {}) {
  std::vector<StateId> out;
  for (StateId s = 0; s < pfa.states.size(); ++s) {
    if (pfa.states[s].kind == kind && pfa.states[s].call_set == set) out.push_back(s);
  }
  return out;
}

// Probability from the unique state labeled `from` to the target labeled `to`
// (empty label means finish).
double prob(const Pfa& pfa, StateKind kind, const CallSet& from, const CallSet& to) {
  const auto src = states_labeled(pfa, kind, from);
  REQUIRE(src.size() == 1);
  return successor_distribution(pfa, src.front())[to];
}

std::vector<std::vector<CallSet>> repeat(std::size_t n, std::vector<CallSet> seq) {
  return std::vector<std::vector<CallSet>>(n, std::move(seq));
}

void append(std::vector<std::vector<CallSet>>& a, const std::vector<std::vector<CallSet>>& b) {
  a.insert(a.end(), b.begin(), b.end());
}

std::vector<std::vector<CallSet>> example_sequences() {
  std::vector<std::vector<CallSet>> s;
  append(s, repeat(32, {kB}));
  append(s, repeat(8, {kB, kDE}));
  append(s, repeat(45, {kC}));
  append(s, repeat(5, {kC, kDE}));
  append(s, repeat(10, {kDE}));
  return s;
}

std::uint64_t total_count(const Pfa& pfa) {
  std::uint64_t n = 0;
  for (const auto& t : pfa.transitions) n += t.count;
  return n;
}

void check_outgoing_sums(const Pfa& pfa) {
  for (StateId s = 0; s < pfa.states.size(); ++s) {
    if (s == Pfa::kFinish) continue;
    double sum = 0.0;
    for (const auto& t : pfa.outgoing(s)) sum += t.probability;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

}  // namespace

TEST_CASE("step extraction") {
  CHECK(extract_steps(std::vector<Span>{}, 0).empty());

  const std::vector<Span> seq{child(C, 20, 30, "c"), child(B, 0, 10, "b")};
  CHECK(extract_steps(seq, 0) == std::vector<CallSet>{kB, kC});

  const std::vector<Span> conc{child(D, 0, 10, "d"), child(E, 5, 15, "e")};
  CHECK(extract_steps(conc, 0) == std::vector<CallSet>{kDE});

  // Touching intervals are sequential unless the slack bridges them.
  const std::vector<Span> touch{child(B, 0, 10, "b"), child(C, 10, 20, "c")};
  CHECK(extract_steps(touch, 0).size() == 2);
  CHECK(extract_steps(touch, 1) == std::vector<CallSet>{make_call_set({B, C})});
}

TEST_CASE("overlap chains form one step and duplicates stay in the multiset") {
  // B overlaps C and C overlaps D while B and D are disjoint.
  const std::vector<Span> chain{child(B, 0, 10, "1"), child(C, 8, 20, "2"), child(D, 18, 30, "3")};
  CHECK(extract_steps(chain, 0) == std::vector<CallSet>{make_call_set({B, C, D})});
  const std::vector<Span> twice{child(B, 0, 10, "1"), child(B, 2, 12, "2")};
  CHECK(extract_steps(twice, 0) == std::vector<CallSet>{CallSet{B, B}});
}

TEST_CASE("step extraction ignores input order") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Span> kids;
    const VertexId pool[] = {B, C, D, E};
    for (int i = 0; i < 8; ++i) {
      const auto s = static_cast<std::int64_t>(rng.uniform_index(100));
      kids.push_back(child(pool[rng.uniform_index(4)], s, s + 1 + static_cast<std::int64_t>(rng.uniform_index(20)),
                           "k" + std::to_string(i)));
    }
    const auto expect = extract_steps(kids, 0);
    for (int shuffle = 0; shuffle < 5; ++shuffle) {
      for (std::size_t i = kids.size(); i > 1; --i) std::swap(kids[i - 1], kids[rng.uniform_index(i)]);
      CHECK(extract_steps(kids, 0) == expect);
    }
  }
}

TEST_CASE("trivial automata") {
  const auto leaf = build_pfa(B, std::vector<std::vector<CallSet>>(3));
  CHECK(leaf.is_leaf());
  REQUIRE(leaf.transitions.size() == 1);
  CHECK(leaf.transitions[0].to == Pfa::kFinish);
  CHECK(leaf.transitions[0].probability == 1.0);

  const auto one = build_pfa(B, repeat(1, {kC}));
  CHECK(prob(one, StateKind::start, {}, kC) == 1.0);
  CHECK(prob(one, StateKind::step, kC, {}) == 1.0);
  CHECK(check_pfa(one).empty());
}

TEST_CASE("maximum likelihood transitions of the five-service example") {
  const auto seqs = example_sequences();
  const auto pfa = build_pfa(fixtures::kA, seqs);
  CHECK(prob(pfa, StateKind::start, {}, kB) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(prob(pfa, StateKind::start, {}, kC) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(prob(pfa, StateKind::start, {}, kDE) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(prob(pfa, StateKind::step, kB, {}) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(prob(pfa, StateKind::step, kB, kDE) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(prob(pfa, StateKind::step, kC, {}) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(prob(pfa, StateKind::step, kC, kDE) == doctest::Approx(0.1).epsilon(1e-12));
  for (StateId s : states_labeled(pfa, StateKind::step, kDE)) {
    CHECK(successor_distribution(pfa, s) == std::map<CallSet, double>{{CallSet{}, 1.0}});
  }
  CHECK(check_pfa(pfa).empty());
  check_outgoing_sums(pfa);

  // Coarsening folds the three identical D||E suffixes into one state.
  const auto c = coarsen(pfa, CoarsenConfig{});
  CHECK(c.states.size() == 5);
  CHECK(prob(c, StateKind::step, kDE, {}) == 1.0);
  CHECK(prob(c, StateKind::step, kB, kDE) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(total_count(c) == total_count(pfa));
}

TEST_CASE("automata built from example traces match the hand counts") {
  const auto traces = fixtures::assemble(fixtures::example_spans(1, 7));
  const auto pfas = build_pfas(traces, CoarsenConfig{});
  const Pfa& a = pfas.at(fixtures::kA);
  const CallSet b{fixtures::kB}, c{fixtures::kC}, de = make_call_set({fixtures::kD, fixtures::kE});
  CHECK(prob(a, StateKind::start, {}, b) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(prob(a, StateKind::start, {}, c) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(prob(a, StateKind::start, {}, de) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(prob(a, StateKind::step, b, {}) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(prob(a, StateKind::step, c, de) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(prob(a, StateKind::step, de, {}) == 1.0);
  for (const auto& v : {fixtures::kB, fixtures::kC, fixtures::kD, fixtures::kE}) CHECK(pfas.at(v).is_leaf());
}

namespace {

// Two {B} states reached through X and Y with successor distributions
// (finish a/100, DE 1 - a/100) and (finish b/100, ...).
Pfa two_b_states(std::size_t a, std::size_t b) {
  std::vector<std::vector<CallSet>> s;
  append(s, repeat(a, {kX, kB}));
  append(s, repeat(100 - a, {kX, kB, kDE}));
  append(s, repeat(b, {kY, kB}));
  append(s, repeat(100 - b, {kY, kB, kDE}));
  return build_pfa(fixtures::kA, s);
}

}  // namespace

TEST_CASE("coarsening merges states within tau") {
  const auto pfa = two_b_states(80, 82);
  REQUIRE(states_labeled(pfa, StateKind::step, kB).size() == 2);
  // L1 = |0.8 - 0.82| + |0.2 - 0.18| = 0.04.
  const auto bs = states_labeled(pfa, StateKind::step, kB);
  CHECK(l1_distance(successor_distribution(pfa, bs[0]), successor_distribution(pfa, bs[1])) ==
        doctest::Approx(0.04));

  CoarsenConfig cfg;
  cfg.tau = 0.05;
  const auto merged = coarsen(pfa, cfg);
  CHECK(prob(merged, StateKind::step, kB, {}) == doctest::Approx(162.0 / 200.0).epsilon(1e-12));
  CHECK(check_pfa(merged).empty());
  CHECK(total_count(merged) == total_count(pfa));

  cfg.tau = 0.03;
  CHECK(states_labeled(coarsen(pfa, cfg), StateKind::step, kB).size() == 2);
}

TEST_CASE("coarsening limits") {
  const auto pfa = two_b_states(80, 82);
  CoarsenConfig cfg;
  cfg.tau = 0.0;
  const auto exact = coarsen(pfa, cfg);
  CHECK(states_labeled(exact, StateKind::step, kB).size() == 2);
  CHECK(states_labeled(exact, StateKind::step, kDE).size() == 1);

  const auto far = two_b_states(100, 0);
  cfg.tau = 2.0;
  const auto all = coarsen(far, cfg);
  CHECK(states_labeled(all, StateKind::step, kB).size() == 1);
  CHECK(prob(all, StateKind::step, kB, {}) == doctest::Approx(0.5));

  cfg.tau = 3.0;
  CHECK_THROWS_AS(coarsen(pfa, cfg), ConfigError);
}

TEST_CASE("coarsening conserves counts and never grows the automaton") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto traces = fixtures::assemble(fixtures::random_system_spans(8, 200, seed));
    for (double tau : {0.0, 0.05, 0.5, 2.0}) {
      CoarsenConfig none;
      none.tau = 0.0;
      for (const auto& [api, pfa] : build_pfas(traces, none)) {
        CoarsenConfig cfg;
        cfg.tau = tau;
        const auto c = coarsen(pfa, cfg);
        CHECK(c.states.size() <= pfa.states.size());
        CHECK(total_count(c) == total_count(pfa));
        CHECK(check_pfa(c).empty());
        check_outgoing_sums(c);
        CHECK(coarsen(c, cfg) == c);
      }
    }
  }
}

TEST_CASE("path sampling") {
  Rng rng(1);
  const auto leaf = build_pfa(B, std::vector<std::vector<CallSet>>(1));
  CHECK(sample_path(leaf, rng).empty());
  const auto chain = build_pfa(B, repeat(1, {kC}));
  for (int i = 0; i < 10; ++i) CHECK(sample_path(chain, rng) == std::vector<CallSet>{kC});

  // Frequencies: binomial sd at n = 1e5 is at most 0.0016, so 0.01 is > 6 sd.
  const auto pfa = coarsen(build_pfa(fixtures::kA, example_sequences()), CoarsenConfig{});
  std::map<CallSet, double> freq;
  constexpr int n = 100000;
  Rng r(2024);
  for (int i = 0; i < n; ++i) freq[sample_path(pfa, r).front()] += 1.0 / n;
  CHECK(std::abs(freq[kB] - 0.4) <= 0.01);
  CHECK(std::abs(freq[kC] - 0.5) <= 0.01);
  CHECK(std::abs(freq[kDE] - 0.1) <= 0.01);

  Rng r1(5), r2(5);
  for (int i = 0; i < 100; ++i) CHECK(sample_path(pfa, r1) == sample_path(pfa, r2));
}

TEST_CASE("rebuilding from sampled paths converges") {
  const auto pfa = coarsen(build_pfa(fixtures::kA, example_sequences()), CoarsenConfig{});
  Rng rng(77);
  constexpr std::size_t n = 20000;
  std::vector<std::vector<CallSet>> paths;
  for (std::size_t i = 0; i < n; ++i) paths.push_back(sample_path(pfa, rng));
  const auto rebuilt = build_pfa(fixtures::kA, paths);
  const double bound = 3.0 * std::sqrt(std::log(static_cast<double>(n)) / static_cast<double>(n));
  CHECK(l1_distance(first_step_distribution(rebuilt), first_step_distribution(pfa)) <= bound);
}

TEST_CASE("a cycle without finish mass fails the walk and the checker") {
  Pfa p;
  p.api = B;
  p.states = {{StateKind::start, {}}, {StateKind::finish, {}}, {StateKind::step, kC}};
  p.transitions = {{0, 2, 1.0, 1}, {2, 2, 1.0, 1}};
  Rng rng(1);
  CHECK_THROWS_AS(sample_path(p, rng, 100), PfaWalkError);
  CHECK_FALSE(check_pfa(p).empty());
}
