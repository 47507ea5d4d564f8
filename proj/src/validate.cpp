#include "palette/validate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "palette/pfa.hpp"
#include "palette/stats.hpp"

namespace palette {

using nlohmann::ordered_json;

void Thresholds::validate() const {
  if (!(max_ks >= 0.0 && max_ks <= 1.0)) throw ConfigError("max KS must lie in [0, 1]");
  if (!(max_median_error >= 0.0)) throw ConfigError("max median error must be >= 0");
  if (!(max_first_step_l1 >= 0.0 && max_first_step_l1 <= 2.0)) throw ConfigError("max first-step L1 must lie in [0, 2]");
  if (!(max_uncovered_fraction >= 0.0 && max_uncovered_fraction <= 1.0)) {
    throw ConfigError("max uncovered fraction must lie in [0, 1]");
  }
}

namespace {

using Samples = std::map<VertexId, std::vector<double>>;
using CallerSamples = std::map<VertexId, std::map<std::string, std::vector<double>>>;

Samples by_api(std::span<const Span> spans) {
  Samples out;
  for (const auto& s : spans) out[s.vertex()].push_back(static_cast<double>(s.duration_us));
  return out;
}

CallerSamples by_caller(std::span<const TraceTree> traces) {
  CallerSamples out;
  for (const auto& t : traces) {
    for (const auto& n : t.nodes) {
      const std::string key = n.parent ? t.nodes[*n.parent].span.vertex().str() : std::string();
      out[n.span.vertex()][key].push_back(static_cast<double>(n.span.duration_us));
    }
  }
  return out;
}

struct FirstSteps {
  std::size_t count = 0;
  std::map<CallSet, double> counts;
};

std::map<VertexId, FirstSteps> first_steps(std::span<const TraceTree> traces, std::int64_t eps) {
  std::map<VertexId, FirstSteps> out;
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const auto steps = extract_steps(t, i, eps);
      auto& f = out[t.nodes[i].span.vertex()];
      ++f.count;
      f.counts[steps.empty() ? CallSet{} : steps.front()] += 1.0;
    }
  }
  return out;
}

LatencySummary summarize(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return {v.size(), quantile_sorted(v, 0.5), quantile_sorted(v, 0.9), quantile_sorted(v, 0.99)};
}

double relative_error(double truth, double value) {
  if (truth == value) return 0.0;
  return std::abs(truth - value) / std::max(std::abs(truth), 1e-9);
}

LatencyComparison compare_samples(const VertexId& api, bool pooled, const std::string& caller,
                                  const std::vector<double>& a, const std::vector<double>& b, const Thresholds& th) {
  LatencyComparison c;
  c.api = api;
  c.pooled = pooled;
  c.caller = caller;
  c.original = summarize(a);
  c.synthetic = summarize(b);
  c.ks = ks_statistic(a, b);
  c.median_error = relative_error(c.original.p50, c.synthetic.p50);
  c.judged = a.size() >= th.min_samples && b.size() >= th.min_samples;
  c.pass = !c.judged || (c.ks <= th.max_ks && c.median_error <= th.max_median_error);
  return c;
}

std::string caller_label(const LatencyComparison& c) {
  if (c.pooled) return "*";
  return c.caller.empty() ? "(root)" : c.caller;
}

}  // namespace

ValidationReport compare(std::span<const Span> original_spans, std::span<const TraceTree> original_traces,
                         std::span<const Span> synthetic_spans, std::span<const TraceTree> synthetic_traces,
                         const Thresholds& thresholds, std::int64_t overlap_epsilon_us) {
  thresholds.validate();
  ValidationReport r;
  r.thresholds = thresholds;

  const Samples orig = by_api(original_spans);
  const Samples synth = by_api(synthetic_spans);
  const CallerSamples orig_callers = by_caller(original_traces);
  const CallerSamples synth_callers = by_caller(synthetic_traces);
  const auto orig_steps = first_steps(original_traces, overlap_epsilon_us);
  const auto synth_steps = first_steps(synthetic_traces, overlap_epsilon_us);

  std::size_t uncovered = 0;
  for (const auto& [api, v] : orig) {
    if (!synth.contains(api)) {
      r.original_only.push_back(api);
      uncovered += v.size();
    }
  }
  for (const auto& [api, v] : synth) {
    if (!orig.contains(api)) {
      r.synthetic_only.push_back(api);
      uncovered += v.size();
    }
  }
  const std::size_t total = original_spans.size() + synthetic_spans.size();
  r.uncovered_fraction = total ? static_cast<double>(uncovered) / static_cast<double>(total) : 0.0;

  static const std::vector<double> kNone;
  static const std::map<std::string, std::vector<double>> kNoCallers;
  for (const auto& [api, a] : orig) {
    const auto sb = synth.find(api);
    if (sb == synth.end()) continue;
    r.latencies.push_back(compare_samples(api, true, "", a, sb->second, thresholds));

    const auto oc = orig_callers.find(api);
    const auto sc = synth_callers.find(api);
    const auto& oc_map = oc == orig_callers.end() ? kNoCallers : oc->second;
    const auto& sc_map = sc == synth_callers.end() ? kNoCallers : sc->second;
    std::set<std::string> keys;
    for (const auto& [k, v] : oc_map) keys.insert(k);
    for (const auto& [k, v] : sc_map) keys.insert(k);
    if (keys.size() > 1) {
      for (const auto& k : keys) {
        const auto ia = oc_map.find(k);
        const auto ib = sc_map.find(k);
        r.latencies.push_back(compare_samples(api, false, k, ia == oc_map.end() ? kNone : ia->second,
                                              ib == sc_map.end() ? kNone : ib->second, thresholds));
      }
    }

    const auto fa = orig_steps.find(api);
    const auto fb = synth_steps.find(api);
    if (fa == orig_steps.end() || fb == synth_steps.end()) continue;
    FirstStepComparison f;
    f.api = api;
    f.original_count = fa->second.count;
    f.synthetic_count = fb->second.count;
    std::map<CallSet, double> pa, pb;
    for (const auto& [l, n] : fa->second.counts) pa[l] = n / static_cast<double>(f.original_count);
    for (const auto& [l, n] : fb->second.counts) pb[l] = n / static_cast<double>(f.synthetic_count);
    f.l1 = l1_distance(pa, pb);
    f.judged = f.original_count >= thresholds.min_samples && f.synthetic_count >= thresholds.min_samples;
    f.pass = !f.judged || f.l1 <= thresholds.max_first_step_l1;
    r.first_steps.push_back(std::move(f));
  }

  r.pass = r.uncovered_fraction <= thresholds.max_uncovered_fraction;
  for (const auto& c : r.latencies) r.pass = r.pass && c.pass;
  for (const auto& f : r.first_steps) r.pass = r.pass && f.pass;
  return r;
}

ValidationReport compare_files(const std::filesystem::path& original, const std::filesystem::path& synthetic,
                               const Thresholds& thresholds, std::int64_t overlap_epsilon_us) {
  const auto a = parse_spans_file(original);
  const auto b = parse_spans_file(synthetic);
  const auto ta = assemble_traces(a.spans);
  const auto tb = assemble_traces(b.spans);
  return compare(a.spans, ta.traces, b.spans, tb.traces, thresholds, overlap_epsilon_us);
}

ordered_json report_to_json(const ValidationReport& r) {
  ordered_json j;
  j["schema"] = kValidationSchema;
  j["pass"] = r.pass;
  j["thresholds"] = {{"max_ks", r.thresholds.max_ks},
                     {"max_median_error", r.thresholds.max_median_error},
                     {"min_samples", r.thresholds.min_samples},
                     {"max_first_step_l1", r.thresholds.max_first_step_l1},
                     {"max_uncovered_fraction", r.thresholds.max_uncovered_fraction}};
  auto summary = [](const LatencySummary& s) {
    return ordered_json{{"count", s.count}, {"p50", s.p50}, {"p90", s.p90}, {"p99", s.p99}};
  };
  ordered_json lat = ordered_json::array();
  for (const auto& c : r.latencies) {
    ordered_json e;
    e["api"] = c.api.str();
    e["caller"] = c.pooled ? ordered_json(nullptr) : ordered_json(c.caller);
    e["original"] = summary(c.original);
    e["synthetic"] = summary(c.synthetic);
    e["ks"] = c.ks;
    e["median_error"] = c.median_error;
    e["judged"] = c.judged;
    e["pass"] = c.pass;
    lat.push_back(std::move(e));
  }
  j["latencies"] = std::move(lat);
  ordered_json fs = ordered_json::array();
  for (const auto& f : r.first_steps) {
    fs.push_back({{"api", f.api.str()},
                  {"original_count", f.original_count},
                  {"synthetic_count", f.synthetic_count},
                  {"l1", f.l1},
                  {"judged", f.judged},
                  {"pass", f.pass}});
  }
  j["first_steps"] = std::move(fs);
  ordered_json uncovered;
  uncovered["original_only"] = ordered_json::array();
  for (const auto& v : r.original_only) uncovered["original_only"].push_back(v.str());
  uncovered["synthetic_only"] = ordered_json::array();
  for (const auto& v : r.synthetic_only) uncovered["synthetic_only"].push_back(v.str());
  uncovered["fraction"] = r.uncovered_fraction;
  j["uncovered"] = std::move(uncovered);
  return j;
}

std::string report_summary(const ValidationReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& c : r.latencies) {
    os << (c.judged ? (c.pass ? "PASS " : "FAIL ") : "---- ") << c.api.str() << " caller=" << caller_label(c)
       << " n=" << c.original.count << "/" << c.synthetic.count << " p50=" << c.original.p50 << "/"
       << c.synthetic.p50 << " ks=" << c.ks << " median_err=" << c.median_error << '\n';
  }
  for (const auto& f : r.first_steps) {
    os << (f.judged ? (f.pass ? "PASS " : "FAIL ") : "---- ") << f.api.str() << " first_step_l1=" << f.l1 << '\n';
  }
  for (const auto& v : r.original_only) os << "UNCOVERED original only: " << v.str() << '\n';
  for (const auto& v : r.synthetic_only) os << "UNCOVERED synthetic only: " << v.str() << '\n';
  os << "uncovered fraction " << r.uncovered_fraction << '\n';
  os << "overall: " << (r.pass ? "PASS" : "FAIL") << '\n';
  return os.str();
}

void write_cdfs(const std::filesystem::path& path, std::span<const TraceTree> original,
                std::span<const TraceTree> synthetic) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "api,caller,dataset,x,y\n";
  out.precision(17);
  auto emit = [&out](std::span<const TraceTree> traces, const char* name) {
    for (const auto& [api, callers] : by_caller(traces)) {
      std::vector<double> all;
      for (const auto& [k, v] : callers) {
        all.insert(all.end(), v.begin(), v.end());
        for (const auto& [x, y] : ecdf(v)) {
          out << api.str() << ',' << (k.empty() ? "(root)" : k) << ',' << name << ',' << x << ',' << y << '\n';
        }
      }
      for (const auto& [x, y] : ecdf(all)) out << api.str() << ",*," << name << ',' << x << ',' << y << '\n';
    }
  };
  emit(original, "original");
  emit(synthetic, "synthetic");
}

}  // namespace palette
