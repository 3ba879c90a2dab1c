// Command-line front end: workload generation, index building, experiment
// runs, trace statistics and the rewrite gateway.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxreuse/context_index.hpp"
#include "ctxreuse/error.hpp"
#include "ctxreuse/gateway.hpp"
#include "ctxreuse/pipeline.hpp"
#include "ctxreuse/workload.hpp"

namespace fs = std::filesystem;
using namespace ctxreuse;

namespace {

constexpr const char* kDataDirEnv = "CTXREUSE_DATA_DIR";

GatewayServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void add_workload_flags(CLI::App* cmd, WorkloadSpec& spec) {
  cmd->add_option("--docs", spec.n_docs, "Corpus size")->capture_default_str();
  cmd->add_option("--sessions", spec.n_sessions, "Number of sessions")->capture_default_str();
  cmd->add_option("--turns", spec.turns_per_session, "Turns per session")->capture_default_str();
  cmd->add_option("-k,--top-k", spec.k, "Documents retrieved per turn")->capture_default_str();
  cmd->add_option("--zipf", spec.zipf_s, "Zipf exponent of document popularity")->capture_default_str();
  cmd->add_option("--overlap", spec.intra_session_overlap, "Fraction of a turn's docs drawn from session history")
      ->capture_default_str();
  cmd->add_option("--order-noise", spec.order_noise, "Log-normal sigma applied when ranking retrievals")
      ->capture_default_str();
  cmd->add_option("--doc-tokens", spec.doc_tokens, "Tokens per document")->capture_default_str();
  cmd->add_option("--workload-seed", spec.seed, "Generator seed")->capture_default_str();
}

void write_json(const nlohmann::json& j, const std::optional<fs::path>& out) {
  if (!out) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (out->has_parent_path()) fs::create_directories(out->parent_path());
  write_file_atomically(*out, j.dump(2) + "\n");
}

nlohmann::json stats_json(const TraceStats& s) {
  return {{"records", s.records},
          {"sessions", s.sessions},
          {"distinct_docs", s.distinct_docs},
          {"mean_retrieved", s.mean_retrieved},
          {"top20_share", s.top20_share},
          {"intra_session_overlap", s.intra_session_overlap},
          {"cross_session_overlap", s.cross_session_overlap}};
}

std::optional<fs::path> default_data_dir() {
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return fs::path(env);
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context reuse engine: retrieval reordering, scheduling and de-duplication for prefix caches"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ctxreuse 0.1.0");

  // gen-workload
  WorkloadSpec gen_spec;
  std::optional<fs::path> gen_out;
  std::optional<double> gen_target;
  auto* gen = app.add_subcommand("gen-workload", "Generate a synthetic trace (NDJSON)");
  add_workload_flags(gen, gen_spec);
  gen->add_option("-o,--out", gen_out, "Output trace path (stdout if omitted)");
  gen->add_option("--target-top20", gen_target, "Calibrate --zipf so the top 20% of docs take this share");

  // build-index
  fs::path build_trace;
  std::optional<fs::path> build_out;
  DistanceParams build_params;
  auto* build = app.add_subcommand("build-index", "Build the context index from a trace's first turns");
  build->add_option("trace", build_trace, "Trace path")->required()->check(CLI::ExistingFile);
  build->add_option("-o,--out", build_out, "Snapshot path (default: <data dir>/index.json, else stdout)");
  build->add_option("--alpha", build_params.alpha, "Position weight of the distance")->capture_default_str();
  build->add_flag("--allow-out-of-band", build_params.allow_out_of_band, "Accept alpha outside [0.001, 0.01]");
  std::optional<fs::path> build_data_dir = default_data_dir();
  build->add_option("--data-dir", build_data_dir, "Data directory")->envname(kDataDirEnv);

  // run
  ExperimentConfig cfg;
  WorkloadSpec run_spec;
  std::optional<fs::path> run_trace;
  std::optional<std::uint64_t> run_seed;
  bool no_timings = false;
  auto* run = app.add_subcommand("run", "Run an experiment and its ablation ladder");
  add_workload_flags(run, run_spec);
  run->add_option("--trace", run_trace, "Replay this trace instead of generating one")->check(CLI::ExistingFile);
  run->add_option("--capacity", cfg.cache.capacity_tokens, "Prefix cache budget in tokens")->capture_default_str();
  run->add_option("--alpha", cfg.distance.alpha, "Position weight of the distance")->capture_default_str();
  run->add_flag("--allow-out-of-band", cfg.distance.allow_out_of_band, "Accept alpha outside [0.001, 0.01]");
  run->add_flag("--ordering,!--no-ordering", cfg.toggles.ordering, "Context ordering (default on)");
  run->add_flag("--scheduling,!--no-scheduling", cfg.toggles.scheduling, "Prefix-group scheduling (default on)");
  run->add_flag("--dedup,!--no-dedup", cfg.toggles.dedup, "Multi-turn de-duplication (default on)");
  run->add_flag("--hints,!--no-hints", cfg.toggles.hints, "Order and location hints (default on)");
  run->add_option("--batch-size", cfg.batch_size, "First-turn batch size (0 = one batch)")->capture_default_str();
  run->add_option("--scaffold-tokens", cfg.scaffold_tokens, "System prompt tokens before the documents")
      ->capture_default_str();
  run->add_option("--seed", run_seed, "Overrides the workload seed");
  run->add_option("-o,--out", cfg.output_prefix, "Write <prefix>.csv and <prefix>.json");
  run->add_flag("--no-timings", no_timings, "Write wall-clock fields as 0 for byte-identical outputs");

  // serve
  std::string bind = "127.0.0.1:7311";
  GatewayOptions gw;
  gw.data_dir = default_data_dir();
  std::optional<fs::path> serve_seed;
  bool no_order_hints = false;
  bool no_dedup = false;
  auto* serve = app.add_subcommand("serve", "Serve the rewrite gateway (newline-delimited JSON over TCP)");
  serve->add_option("--bind", bind, "host:port")->capture_default_str();
  serve->add_option("--data-dir", gw.data_dir, "State directory")->envname(kDataDirEnv);
  serve->add_option("--seed-trace", serve_seed, "Seed a fresh index from this trace's first turns")
      ->check(CLI::ExistingFile);
  serve->add_option("--alpha", gw.distance.alpha, "Position weight of the distance")->capture_default_str();
  serve->add_option("--system-prompt", gw.system_prompt, "Text placed before every prompt");
  serve->add_flag("--no-order-hints", no_order_hints, "Omit order hints");
  serve->add_flag("--no-dedup", no_dedup, "Send every retrieved document on every turn");

  // stats
  WorkloadSpec stats_spec;
  std::optional<fs::path> stats_trace;
  std::size_t stats_corpus = 0;
  auto* stats = app.add_subcommand("stats", "Overlap statistics of a trace or a generated workload");
  add_workload_flags(stats, stats_spec);
  stats->add_option("--trace", stats_trace, "Trace path")->check(CLI::ExistingFile);
  stats->add_option("--corpus-size", stats_corpus, "Corpus size for the top-20% cut (traces only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      if (gen_target) gen_spec.zipf_s = calibrate_zipf(gen_spec, *gen_target);
      const Trace trace = generate(gen_spec);
      if (gen_out) {
        if (gen_out->has_parent_path()) fs::create_directories(gen_out->parent_path());
        save_trace(*gen_out, trace);
        std::cerr << "wrote " << trace.records.size() << " records to " << gen_out->string() << " (zipf "
                  << gen_spec.zipf_s << ")\n";
      } else {
        write_trace(std::cout, trace);
      }
    } else if (*build) {
      build_params.validate();
      const Trace trace = load_trace(build_trace);
      std::vector<Context> first;
      for (const TraceRecord& rec : trace.records) {
        if (rec.turn == 0) first.push_back(to_context(rec));
      }
      if (first.empty()) throw ValidationError("trace has no first-turn records");
      const ContextIndex index = ContextIndex::build(first, build_params);
      if (!build_out && build_data_dir) build_out = *build_data_dir / "index.json";
      write_json(index.to_json(), build_out);
      std::cerr << "indexed " << first.size() << " contexts: " << index.live_node_count() << " nodes, height "
                << index.height() << '\n';
    } else if (*run) {
      if (run_trace) {
        cfg.trace_path = run_trace;
      } else {
        cfg.workload = run_spec;
      }
      cfg.seed = run_seed;
      cfg.record_timings = !no_timings;
      const ExperimentSummary summary = run_experiment(cfg);
      std::cout << summary_to_json(summary, cfg.record_timings).dump(2) << '\n';
    } else if (*serve) {
      gw.order_hints = !no_order_hints;
      gw.dedup = !no_dedup;
      gw.distance.validate();
      Gateway gateway(gw);
      if (serve_seed) {
        const Trace trace = load_trace(*serve_seed);
        gateway.seed(trace.records, trace.interner);
      }
      const auto [host, port] = parse_bind(bind);
      GatewayServer server(gateway, host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << host << ":" << server.port() << '\n';
      server.run();
      g_server = nullptr;
      gateway.save();
    } else if (*stats) {
      TraceStats s;
      if (stats_trace) {
        const Trace trace = load_trace(*stats_trace);
        s = compute_stats(trace.records, stats_corpus);
      } else {
        stats_spec.validate();
        s = compute_stats(generate(stats_spec).records, stats_spec.n_docs);
      }
      std::cout << stats_json(s).dump(2) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
