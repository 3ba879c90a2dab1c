#include "ctxreuse/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <numeric>

#include "ctxreuse/context_index.hpp"
#include "ctxreuse/dedup.hpp"
#include "ctxreuse/error.hpp"
#include "ctxreuse/hints.hpp"
#include "ctxreuse/ordering.hpp"
#include "ctxreuse/scheduler.hpp"

namespace ctxreuse {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct LiveSession {
  SessionState state;
  std::vector<DocId> prompt_keys;  // every document key prefilled so far, in prompt order
  std::vector<TokenCount> prompt_tokens;
};

// Forwards simulator events to the index. Appended/Accessed target the
// request's node by handle; they are dropped if the index already evicted it.
void forward_events(ContextIndex& index, const PrefillReport& report, NodeId node) {
  for (const CacheEvent& event : report.events) {
    if (std::holds_alternative<EvictedEvent>(event)) {
      index.apply(event);
      continue;
    }
    if (node == kNoNode || !index.alive(node)) continue;
    const SearchPath path = index.path_of(node);
    if (const auto* appended = std::get_if<AppendedEvent>(&event)) {
      index.apply(AppendedEvent{path, appended->n_tokens});
    } else {
      index.apply(AccessedEvent{path});
    }
  }
}

std::string request_id(const TraceRecord& rec) {
  return rec.session_id + "#" + std::to_string(rec.turn);
}

}  // namespace

DocId turn_key(std::uint32_t turn, DocId doc) {
  if (turn == 0) return doc;
  if (raw(doc) >= (std::uint64_t{1} << 40) || turn >= (1u << 22)) {
    throw PreconditionError("doc id or turn too large for a cache key");
  }
  return DocId{(std::uint64_t{turn} << 40) | raw(doc)};
}

void ExperimentConfig::validate() const {
  if (!workload && !trace_path) throw PreconditionError("experiment needs a workload spec or a trace path");
  if (workload) workload->validate();
  cache.validate();
  distance.validate();
  if (scaffold_tokens < 0) throw PreconditionError("scaffold_tokens must be non-negative");
}

Trace load_workload(const ExperimentConfig& config) {
  if (config.trace_path) return load_trace(*config.trace_path);
  WorkloadSpec spec = *config.workload;
  if (config.seed) spec.seed = *config.seed;
  return generate(spec);
}

RunResult simulate(const Trace& trace, const ExperimentConfig& config) {
  config.validate();
  const StageToggles& on = config.toggles;
  const bool use_index = on.ordering || on.scheduling || on.dedup;
  const AssembleOptions hint_options;

  RunResult result;
  PrefixCacheSim cache(config.cache);
  std::optional<ContextIndex> index;
  std::map<std::string, LiveSession> sessions;

  // Turn rounds in trace order.
  std::map<std::uint32_t, std::vector<const TraceRecord*>> rounds;
  for (const TraceRecord& rec : trace.records) rounds[rec.turn].push_back(&rec);

  auto record = [&](const TraceRecord& rec, PrefillReport report, TokenCount saved, std::size_t hint_tokens) {
    result.hit_tokens += report.hit_tokens;
    result.total_tokens += report.total_tokens;
    result.prefilled_tokens += report.miss_tokens;
    result.dedup_saved_tokens += saved;
    result.hint_tokens += hint_tokens;
    result.requests.push_back({request_id(rec), std::move(report), saved, hint_tokens});
  };

  for (const auto& [turn, recs] : rounds) {
    if (turn == 0) {
      const std::size_t step = config.batch_size == 0 ? recs.size() : config.batch_size;
      for (std::size_t begin = 0; begin < recs.size(); begin += step) {
        const std::size_t end = std::min(recs.size(), begin + step);
        std::vector<Context> batch;
        for (std::size_t i = begin; i < end; ++i) batch.push_back(to_context(*recs[i]));

        std::vector<OrderedContext> ordered;
        std::vector<std::size_t> exec(batch.size());
        std::iota(exec.begin(), exec.end(), 0);
        const auto start = Clock::now();
        if (use_index) {
          if (!index) {
            index = ContextIndex::build(batch, config.distance);
            ordered = ordered_from_build(*index, batch);
          } else {
            ordered = order_batch(*index, batch);
          }
          result.index_build_seconds += seconds_since(start);
          if (on.scheduling) exec = schedule(ordered).order;
        }
        result.overhead_seconds += seconds_since(start);

        for (std::size_t i : exec) {
          const TraceRecord& rec = *recs[begin + i];
          const Context& ctx = batch[i];
          const std::vector<DocId>& docs = on.ordering ? ordered[i].docs : ctx.docs;
          std::vector<TokenCount> tokens;
          for (DocId d : docs) tokens.push_back(ctx.tokens_of(d));
          const NodeId node = use_index ? ordered[i].node : kNoNode;
          const SearchPath tag = use_index ? index->path_of(node) : SearchPath{};
          PrefillReport report = cache.prefill(docs, tokens, config.scaffold_tokens, tag);
          if (index) forward_events(*index, report, node);

          std::size_t hint_tokens = 0;
          if (on.hints && on.ordering) {
            RewrittenRequest req;
            req.original = ctx;
            req.ordered_docs = docs;
            attach_hints(req, hint_options);
            if (req.order_hint) hint_tokens = whitespace_token_count(*req.order_hint);
          }

          LiveSession session;
          Context first = ctx;
          first.docs = docs;
          session.state = start_session(first, use_index ? tag : SearchPath{}, node);
          if (on.dedup && index && index->alive(node)) {
            session.state.path = index->path_of(node);
            activate_multi_turn(session.state, *index);
          }
          session.prompt_keys = docs;
          session.prompt_tokens = tokens;
          sessions[rec.session_id] = std::move(session);
          record(rec, std::move(report), 0, hint_tokens);
        }
      }
      continue;
    }

    for (const TraceRecord* rp : recs) {
      const TraceRecord& rec = *rp;
      auto it = sessions.find(rec.session_id);
      if (it == sessions.end()) throw UnknownSessionError(rec.session_id);
      LiveSession& session = it->second;
      const Context ctx = to_context(rec);

      std::vector<DocId> novel = ctx.docs;
      TokenCount saved = 0;
      std::size_t hint_tokens = 0;
      const NodeId node = session.state.node;
      if (on.dedup) {
        DedupResult dedup;
        if (index && index->alive(node)) {
          session.state.path = index->path_of(node);
          dedup = dedup_turn(session.state, *index, ctx);
        } else {
          ++result.evicted_session_nodes;
          dedup = dedup_history(session.state, ctx);
        }
        novel = dedup.request.ordered_docs;
        for (const DedupRef& ref : dedup.request.dedup_refs) saved += ctx.tokens_of(ref.doc);
        if (on.hints) {
          attach_hints(dedup.request, hint_options);
          for (const std::string& h : dedup.request.location_hints) hint_tokens += whitespace_token_count(h);
        }
        session.state = std::move(dedup.state);
      } else {
        ++session.state.turn;
      }

      std::vector<DocId> keys = session.prompt_keys;
      std::vector<TokenCount> tokens = session.prompt_tokens;
      for (DocId d : novel) {
        keys.push_back(turn_key(rec.turn, d));
        tokens.push_back(ctx.tokens_of(d));
      }
      const bool tracked = index && index->alive(node);
      PrefillReport report =
          cache.prefill(keys, tokens, config.scaffold_tokens, tracked ? index->path_of(node) : SearchPath{});
      if (index) forward_events(*index, report, tracked ? node : kNoNode);
      session.prompt_keys = std::move(keys);
      session.prompt_tokens = std::move(tokens);
      record(rec, std::move(report), saved, hint_tokens);
    }
  }

  result.hit_rate = result.total_tokens == 0
                        ? 0.0
                        : static_cast<double>(result.hit_tokens) / static_cast<double>(result.total_tokens);
  return result;
}

ExperimentSummary run_experiment(const ExperimentConfig& config) {
  config.validate();
  const Trace trace = load_workload(config);

  ExperimentSummary summary;
  summary.result = simulate(trace, config);

  // Ablation ladder: baseline, then each enabled stage added cumulatively.
  ExperimentConfig step = config;
  step.toggles = StageToggles{false, false, false, false};
  std::vector<std::pair<std::string, StageToggles>> ladder{{"baseline", step.toggles}};
  if (config.toggles.ordering) {
    step.toggles.ordering = true;
    ladder.emplace_back("ordering", step.toggles);
  }
  if (config.toggles.scheduling) {
    step.toggles.scheduling = true;
    ladder.emplace_back("scheduling", step.toggles);
  }
  if (config.toggles.dedup) {
    step.toggles.dedup = true;
    ladder.emplace_back("dedup", step.toggles);
  }
  double previous = 0.0;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    step.toggles = ladder[i].second;
    const RunResult r = simulate(trace, step);
    StageResult stage{ladder[i].first, r.hit_rate, r.prefilled_tokens, i == 0 ? 0.0 : r.hit_rate - previous};
    previous = r.hit_rate;
    summary.stages.push_back(std::move(stage));
  }

  if (config.output_prefix) {
    const std::filesystem::path csv_path = config.output_prefix->string() + ".csv";
    const std::filesystem::path json_path = config.output_prefix->string() + ".json";
    if (config.output_prefix->has_parent_path()) {
      std::filesystem::create_directories(config.output_prefix->parent_path());
    }
    std::vector<ReportRow> rows;
    rows.reserve(summary.result.requests.size());
    for (const RequestOutcome& r : summary.result.requests) rows.push_back({r.request_id, &r.report});
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    write_reports_csv(csv, rows);
    std::ofstream json(json_path, std::ios::binary);
    if (!json) throw IoError("cannot write " + json_path.string());
    json << summary_to_json(summary, config.record_timings).dump(2) << '\n';
  }
  return summary;
}

nlohmann::json summary_to_json(const ExperimentSummary& summary, bool record_timings) {
  const RunResult& r = summary.result;
  nlohmann::json stages = nlohmann::json::array();
  for (const StageResult& s : summary.stages) {
    stages.push_back({{"stage", s.stage},
                      {"hit_rate", s.hit_rate},
                      {"prefilled_tokens", s.prefilled_tokens},
                      {"delta_hit_rate", s.delta_hit_rate}});
  }
  return {
      {"requests", r.requests.size()},
      {"hit_rate", r.hit_rate},
      {"hit_tokens", r.hit_tokens},
      {"total_tokens", r.total_tokens},
      {"prefilled_tokens", r.prefilled_tokens},
      {"dedup_saved_tokens", r.dedup_saved_tokens},
      {"hint_tokens", r.hint_tokens},
      {"evicted_session_nodes", r.evicted_session_nodes},
      {"index_build_seconds", record_timings ? r.index_build_seconds : 0.0},
      {"overhead_seconds", record_timings ? r.overhead_seconds : 0.0},
      {"stages", std::move(stages)},
  };
}

}  // namespace ctxreuse
