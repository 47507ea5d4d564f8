#include "palette/sim_runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <queue>
#include <thread>

#include <Eigen/Dense>

namespace palette {

WorkModel work_model_from_string(std::string_view text) {
  if (text == "virtual") return WorkModel::virtual_time;
  if (text == "busy") return WorkModel::busy;
  throw ConfigError("unknown work model '" + std::string(text) + "' (expected virtual or busy)");
}

void SimConfig::validate() const {
  if (request_count < 1) throw ConfigError("request count must be >= 1");
  if (!closed_concurrency && !(open_loop_rate > 0.0 && std::isfinite(open_loop_rate))) {
    throw ConfigError("open-loop rate must be > 0");
  }
  if (closed_concurrency && *closed_concurrency < 1) throw ConfigError("closed-loop concurrency must be >= 1");
  if (max_depth < 1) throw ConfigError("max depth must be >= 1");
  if (threads < 1) throw ConfigError("thread count must be >= 1");
}

Baggage make_baggage(const Baggage& parent, const VertexId& caller, const Baggage& declared) {
  Baggage child = parent;
  child[std::string(kUpstreamCallerKey)] = caller.str();
  for (const auto& [k, v] : declared) {
    if (child.contains(k)) throw ContractViolation("baggage key '" + k + "' is already set upstream");
    child.emplace(k, v);
  }
  return child;
}

double correct(const CausalEquation& equation, const std::map<VertexId, double>& measured,
               const std::set<VertexId>& pending) {
  std::map<VertexId, double> values = measured;
  std::map<VertexId, bool> called;
  for (const auto& [callee, v] : measured) called[callee] = true;
  for (const auto& g : equation.groups) {
    for (const auto& m : g.members) {
      if (!measured.contains(m.callee) && pending.contains(m.callee)) {
        values[m.callee] = m.mean_latency;
        called[m.callee] = true;
      }
    }
  }
  return evaluate(equation, values, called);
}

namespace {

// Spends real CPU time roughly proportional to the requested microseconds
// using small dense matrix products. Calibrated once at construction.
class BusyWorker {
 public:
  BusyWorker() : a_(Eigen::MatrixXd::Random(32, 32)), b_(Eigen::MatrixXd::Random(32, 32)) {
    const auto t0 = std::chrono::steady_clock::now();
    constexpr int kProbe = 200;
    for (int i = 0; i < kProbe; ++i) spin_once();
    const double us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
    us_per_iteration_ = std::max(us / kProbe, 1e-3);
  }

  void burn(double us) {
    const auto n = static_cast<std::int64_t>(us / us_per_iteration_);
    for (std::int64_t i = 0; i < n; ++i) spin_once();
  }

 private:
  void spin_once() {
    c_.noalias() = a_ * b_;
    sink_ = sink_ + c_(0, 0);
  }

  Eigen::MatrixXd a_, b_, c_;
  volatile double sink_ = 0.0;
  double us_per_iteration_ = 1.0;
};

struct DepthExceeded {};

struct RequestResult {
  enum class Outcome { completed, depth, walk } outcome = Outcome::completed;
  std::vector<Span> spans;
  std::int64_t duration = 0;
  std::uint64_t stretched = 0;
  std::vector<std::pair<VertexId, std::pair<double, double>>> divergence;  // (expected, realized)
};

std::string hex_id(std::uint64_t n) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(n));
  return buf;
}

std::string trace_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "req-%09zu", index);
  return buf;
}

class Runner {
 public:
  Runner(const Bundle& b, const SimConfig& cfg) : b_(b), cfg_(cfg) {
    if (cfg.root) {
      if (!b.topology.has_vertex(*cfg.root)) throw ConfigError("root " + cfg.root->str() + " is not in the topology");
    } else {
      for (const auto& [id, v] : b.topology.vertices) {
        if (v.root_count > 0) {
          roots_.push_back(id);
          root_total_ += v.root_count;
          root_cumulative_.push_back(root_total_);
        }
      }
      if (roots_.empty()) throw ConfigError("no root given and the topology has no observed root APIs");
    }
    for (const auto& [id, v] : b.topology.vertices) {
      if (!b.pfas.contains(id) || !b.models.contains(id)) {
        throw ConfigError("api " + id.str() + " has no automaton or causal model");
      }
    }
  }

  RequestResult run(std::size_t index, BusyWorker* busy) const {
    Rng rng(mix_seed(cfg_.seed, index));
    VertexId root;
    if (cfg_.root) {
      root = *cfg_.root;
    } else {
      const std::uint64_t u = rng.uniform_index(root_total_);
      const auto it = std::upper_bound(root_cumulative_.begin(), root_cumulative_.end(), u);
      root = roots_[static_cast<std::size_t>(it - root_cumulative_.begin())];
    }
    RequestResult r;
    Context ctx{trace_id(index), rng, r, busy, 1};
    try {
      r.duration = exec(root, 0, 0, Baggage{}, std::nullopt, ctx);
    } catch (const DepthExceeded&) {
      r = RequestResult{};
      r.outcome = RequestResult::Outcome::depth;
    } catch (const PfaWalkError&) {
      r = RequestResult{};
      r.outcome = RequestResult::Outcome::walk;
    }
    return r;
  }

 private:
  struct Context {
    std::string trace_id;
    Rng& rng;
    RequestResult& out;
    BusyWorker* busy;
    std::uint64_t next_span;
  };

  std::int64_t exec(const VertexId& api, std::int64_t start, std::size_t depth, const Baggage& baggage,
                    std::optional<std::size_t> parent, Context& ctx) const {
    if (depth >= cfg_.max_depth) throw DepthExceeded{};
    const std::size_t idx = ctx.out.spans.size();
    {
      Span s;
      s.trace_id = ctx.trace_id;
      s.span_id = hex_id(ctx.next_span++);
      if (parent) s.parent_span_id = ctx.out.spans[*parent].span_id;
      s.service = api.service;
      s.operation = api.operation;
      s.start_us = start;
      ctx.out.spans.push_back(std::move(s));
    }

    const CausalEquation& eq = b_.models.at(api).equation;
    const auto path = sample_path(b_.pfas.at(api), ctx.rng);
    const Baggage child_baggage = make_baggage(baggage, api);

    std::vector<ObservedStep> steps;
    steps.reserve(path.size());
    std::int64_t cursor = start;
    for (const auto& call_set : path) {
      ObservedStep step{call_set, {}};
      std::int64_t longest = 0;
      for (const auto& callee : call_set) {
        const std::size_t member = ctx.out.spans.size();
        std::int64_t d = exec(callee, cursor, depth + 1, child_baggage, idx, ctx);
        if (call_set.size() > 1 && d < 1) {
          // Concurrent members must overlap in time, which needs nonzero extent.
          d = 1;
          ctx.out.spans[member].duration_us = d;
        }
        step.latencies.push_back(static_cast<double>(d));
        longest = std::max(longest, d);
      }
      cursor += longest;
      steps.push_back(std::move(step));
    }
    const std::int64_t elapsed = cursor - start;

    double own;
    if (cfg_.naive) {
      own = b_.topology.vertices.at(api).latency.mean();
    } else {
      const auto caller = baggage.find(std::string(kUpstreamCallerKey));
      const double residual = eq.local_work.sample(ctx.rng, caller == baggage.end() ? "" : caller->second);
      if (ctx.busy != nullptr) ctx.busy->burn(residual);
      const double structural = evaluate_steps(eq, steps);
      own = structural + residual;

      std::map<VertexId, double> measured;
      std::set<VertexId> ran;
      for (const auto& s : steps) {
        for (std::size_t m = 0; m < s.label.size(); ++m) {
          measured[s.label[m]] = s.latencies[m];
          ran.insert(s.label[m]);
        }
      }
      ctx.out.divergence.push_back({api, {correct(eq, {}, ran), correct(eq, measured, {})}});
    }

    std::int64_t duration = std::max<std::int64_t>(0, std::llround(own));
    if (duration < elapsed) {
      duration = elapsed;
      ++ctx.out.stretched;
    }
    ctx.out.spans[idx].duration_us = duration;
    return duration;
  }

  const Bundle& b_;
  const SimConfig& cfg_;
  std::vector<VertexId> roots_;
  std::vector<std::uint64_t> root_cumulative_;
  std::uint64_t root_total_ = 0;
};

}  // namespace

SimOutput simulate(const Bundle& bundle, const SimConfig& config) {
  config.validate();
  const Runner runner(bundle, config);
  const std::size_t n = config.request_count;
  std::vector<RequestResult> results(n);

  auto work = [&](std::size_t first, std::size_t stride) {
    std::optional<BusyWorker> busy;
    if (config.work_model == WorkModel::busy) busy.emplace();
    for (std::size_t i = first; i < n; i += stride) results[i] = runner.run(i, busy ? &*busy : nullptr);
  };
  const std::size_t threads = std::min(config.threads, n);
  if (threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }

  // Arrival times depend only on the seed and, in closed loop, on the
  // already computed durations, so they are assigned after execution.
  std::vector<std::int64_t> arrival(n, 0);
  if (config.closed_concurrency) {
    std::priority_queue<std::int64_t, std::vector<std::int64_t>, std::greater<>> free_at;
    for (std::size_t c = 0; c < *config.closed_concurrency; ++c) free_at.push(0);
    for (std::size_t i = 0; i < n; ++i) {
      arrival[i] = free_at.top();
      free_at.pop();
      free_at.push(arrival[i] + results[i].duration);
    }
  } else {
    Rng arrivals(mix_seed(config.seed, 0x61727269ULL));
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      arrival[i] = std::llround(t);
      t += arrivals.exponential(config.open_loop_rate) * 1e6;
    }
  }

  SimOutput out;
  SimStats& st = out.stats;
  st.requests = n;
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = results[i];
    switch (r.outcome) {
      case RequestResult::Outcome::completed: ++st.completed; break;
      case RequestResult::Outcome::depth: ++st.aborted_depth; continue;
      case RequestResult::Outcome::walk: ++st.aborted_walk; continue;
    }
    st.stretched_spans += r.stretched;
    for (const auto& [api, ev] : r.divergence) {
      auto& d = st.divergence[api];
      ++d.invocations;
      d.expected_sum += ev.first;
      d.realized_sum += ev.second;
      d.abs_sum += std::abs(ev.second - ev.first);
    }
    for (auto& s : r.spans) {
      s.start_us += arrival[i];
      out.spans.push_back(std::move(s));
    }
    r.spans.clear();
    r.spans.shrink_to_fit();
  }
  st.spans = out.spans.size();
  return out;
}

}  // namespace palette
