#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "palette/bundle.hpp"
#include "palette/documents.hpp"
#include "palette/interventions.hpp"
#include "palette/sim_runtime.hpp"
#include "palette/trace_ingest.hpp"
#include "palette/validate.hpp"

namespace {

using namespace palette;

constexpr int kExitError = 2;

// PALETTE_SEED, when set, wins over --seed.
std::uint64_t effective_seed(std::uint64_t flag) {
  const char* env = std::getenv("PALETTE_SEED");
  if (env == nullptr || *env == '\0') return flag;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used, 10);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("PALETTE_SEED is not an unsigned integer: ") + env);
  }
}

struct Input {
  std::vector<Span> spans;
  AssembleResult assembled;
};

Input read_traces(const std::string& path) {
  auto parsed = parse_spans_file(path);
  for (const auto& d : parsed.diagnostics) std::cerr << path << ":" << d.line << ": skipped: " << d.message << '\n';
  auto assembled = assemble_traces(parsed.spans);
  for (const auto& r : assembled.rejected) {
    std::cerr << "trace " << r.trace_id << " rejected (" << to_string(r.reason) << "): " << r.detail << '\n';
  }
  return {std::move(parsed.spans), std::move(assembled)};
}

Bundle load_valid_bundle(const std::string& path) {
  Bundle b = load_bundle(path);
  if (const auto v = validate_bundle(b); !v.empty()) {
    for (const auto& m : v) std::cerr << "invalid bundle: " << m << '\n';
    throw ContractViolation(path + " does not validate (" + std::to_string(v.size()) + " violations)");
  }
  return b;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"palette: learn, edit and replay microservice topologies from traces"};
  app.require_subcommand(1);

  // ingest
  std::string in_input, in_filters, in_out;
  auto* ingest = app.add_subcommand("ingest", "Parse, assemble and filter span records");
  ingest->add_option("--input", in_input, "Line-delimited span file")->required();
  ingest->add_option("--filters", in_filters, "Filter document (palette-filters/v1)");
  ingest->add_option("--out", in_out, "Output span file with kept traces")->required();

  // build
  std::string b_traces, b_out;
  std::size_t b_reservoir = kDefaultReservoirSize;
  std::uint64_t b_seed = 42;
  CoarsenConfig b_coarsen;
  auto* build = app.add_subcommand("build", "Learn topology, automata and causal skeletons");
  build->add_option("--traces", b_traces)->required();
  build->add_option("--out", b_out)->required();
  build->add_option("--reservoir", b_reservoir, "Samples retained per vertex and edge")->capture_default_str();
  build->add_option("--seed", b_seed)->capture_default_str();
  build->add_option("--coarsen-tau", b_coarsen.tau)->capture_default_str();
  build->add_option("--overlap-epsilon-us", b_coarsen.overlap_epsilon_us)->capture_default_str();

  // fit
  std::string f_topology, f_traces, f_out, f_report;
  std::optional<std::uint64_t> f_seed;
  auto* fitc = app.add_subcommand("fit", "Fit causal equations against traces");
  fitc->add_option("--topology", f_topology)->required();
  fitc->add_option("--traces", f_traces)->required();
  fitc->add_option("--out", f_out)->required();
  fitc->add_option("--report", f_report, "Fit report path (default: <out>.fit-report.json)");
  fitc->add_option("--seed", f_seed, "Residual sampling seed (default: the topology's seed)");

  // intervene
  std::string i_topology, i_script, i_out, i_changes;
  auto* intervene = app.add_subcommand("intervene", "Apply an intervention script");
  intervene->add_option("--topology", i_topology)->required();
  intervene->add_option("--script", i_script)->required();
  intervene->add_option("--out", i_out)->required();
  intervene->add_option("--changes", i_changes, "Write the change log here instead of stdout");

  // simulate
  std::string s_topology, s_root, s_out, s_work = "virtual", s_stats;
  SimConfig s_cfg;
  std::optional<double> s_rate;
  std::optional<std::size_t> s_closed;
  auto* sim = app.add_subcommand("simulate", "Generate synthetic traces from a fitted bundle");
  sim->add_option("--topology", s_topology)->required();
  sim->add_option("--root", s_root, "Root API as service.operation (default: observed request mix)");
  sim->add_option("--requests", s_cfg.request_count)->required()->check(CLI::PositiveNumber);
  sim->add_option("--seed", s_cfg.seed)->capture_default_str();
  auto* rate_opt = sim->add_option("--rate", s_rate, "Open-loop arrivals per virtual second (default 1000)");
  sim->add_option("--closed", s_closed, "Closed-loop concurrency")->excludes(rate_opt);
  sim->add_option("--work-model", s_work)->check(CLI::IsMember({"virtual", "busy"}))->capture_default_str();
  sim->add_flag("--naive", s_cfg.naive, "Mean-only baseline");
  sim->add_option("--max-depth", s_cfg.max_depth)->capture_default_str();
  sim->add_option("--threads", s_cfg.threads)->capture_default_str();
  sim->add_option("--stats", s_stats, "Write run statistics as JSON");
  sim->add_option("--out", s_out)->required();

  // validate
  std::string v_original, v_synthetic, v_report, v_cdf;
  Thresholds v_th;
  std::int64_t v_eps = 0;
  auto* val = app.add_subcommand("validate", "Compare original and synthetic traces");
  val->add_option("--original", v_original)->required();
  val->add_option("--synthetic", v_synthetic)->required();
  val->add_option("--report", v_report, "Write the report document here");
  val->add_option("--cdf", v_cdf, "Write empirical CDFs as CSV here");
  val->add_option("--max-ks", v_th.max_ks)->capture_default_str();
  val->add_option("--max-median-error", v_th.max_median_error)->capture_default_str();
  val->add_option("--min-samples", v_th.min_samples)->capture_default_str();
  val->add_option("--max-first-step-l1", v_th.max_first_step_l1)->capture_default_str();
  val->add_option("--max-uncovered-fraction", v_th.max_uncovered_fraction)->capture_default_str();
  val->add_option("--overlap-epsilon-us", v_eps)->capture_default_str();

  // export
  std::string e_topology, e_out;
  auto* exp = app.add_subcommand("export", "Validate a bundle and write it in canonical form");
  exp->add_option("--topology", e_topology)->required();
  exp->add_option("--out", e_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitError;
  }

  try {
    if (*ingest) {
      auto assembled = read_traces(in_input).assembled;
      std::vector<TraceTree> kept = std::move(assembled.traces);
      if (!in_filters.empty()) kept = apply_filters(kept, load_filter_spec(in_filters));
      auto out = open_out(in_out);
      write_traces(out, kept);
      std::cerr << "kept " << kept.size() << " traces, rejected " << assembled.rejected.size() << ", nesting warnings "
                << assembled.nesting_warnings << '\n';
    } else if (*build) {
      const auto assembled = read_traces(b_traces).assembled;
      BuildConfig cfg{b_reservoir, effective_seed(b_seed), b_coarsen};
      save_bundle(b_out, build_bundle(assembled.traces, cfg));
    } else if (*fitc) {
      Bundle b = load_valid_bundle(f_topology);
      const auto assembled = read_traces(f_traces).assembled;
      FitOptions opts;
      opts.seed = effective_seed(f_seed.value_or(b.topology.seed));
      const auto reports = fit_bundle(b, assembled.traces, opts);
      save_bundle(f_out, b);
      write_json_file(f_report.empty() ? f_out + ".fit-report.json" : f_report, fit_reports_to_json(reports));
      for (const auto& r : reports) {
        if (r.status != "ok") std::cerr << "fit " << r.api.str() << ": " << r.status << '\n';
      }
    } else if (*intervene) {
      const Bundle b = load_valid_bundle(i_topology);
      const auto result = palette::apply(b, load_script(i_script));
      save_bundle(i_out, result.bundle);
      if (i_changes.empty()) {
        for (const auto& c : result.changes) std::cout << c << '\n';
      } else {
        auto out = open_out(i_changes);
        for (const auto& c : result.changes) out << c << '\n';
      }
    } else if (*sim) {
      const Bundle b = load_valid_bundle(s_topology);
      if (!s_root.empty()) s_cfg.root = parse_vertex(s_root);
      s_cfg.seed = effective_seed(s_cfg.seed);
      if (s_rate) s_cfg.open_loop_rate = *s_rate;
      s_cfg.closed_concurrency = s_closed;
      s_cfg.work_model = work_model_from_string(s_work);
      const auto result = simulate(b, s_cfg);
      auto out = open_out(s_out);
      write_spans(out, result.spans);
      const auto& st = result.stats;
      std::cerr << "requests " << st.requests << ", completed " << st.completed << ", aborted (depth) "
                << st.aborted_depth << ", aborted (walk) " << st.aborted_walk << ", spans " << st.spans
                << ", stretched " << st.stretched_spans << '\n';
      if (!s_stats.empty()) {
        nlohmann::ordered_json j;
        j["requests"] = st.requests;
        j["completed"] = st.completed;
        j["aborted_depth"] = st.aborted_depth;
        j["aborted_walk"] = st.aborted_walk;
        j["spans"] = st.spans;
        j["stretched_spans"] = st.stretched_spans;
        nlohmann::ordered_json div = nlohmann::ordered_json::object();
        for (const auto& [api, d] : st.divergence) {
          const double n = static_cast<double>(d.invocations);
          div[api.str()] = {{"invocations", d.invocations},
                            {"mean_expected", d.expected_sum / n},
                            {"mean_realized", d.realized_sum / n},
                            {"mean_abs_divergence", d.abs_sum / n}};
        }
        j["divergence"] = std::move(div);
        write_json_file(s_stats, j);
      }
    } else if (*val) {
      const auto a = read_traces(v_original);
      const auto b = read_traces(v_synthetic);
      const auto report = compare(a.spans, a.assembled.traces, b.spans, b.assembled.traces, v_th, v_eps);
      std::cout << report_summary(report);
      if (!v_report.empty()) write_json_file(v_report, report_to_json(report));
      if (!v_cdf.empty()) write_cdfs(v_cdf, a.assembled.traces, b.assembled.traces);
      return report.pass ? 0 : 1;
    } else if (*exp) {
      save_bundle(e_out, load_valid_bundle(e_topology));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
