#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxreuse/cache_sim.hpp"
#include "ctxreuse/distance.hpp"
#include "ctxreuse/workload.hpp"

namespace ctxreuse {

// Independent pipeline stages; each maps to one ablation step.
struct StageToggles {
  bool ordering = true;
  bool scheduling = true;
  bool dedup = true;
  bool hints = true;
};

struct ExperimentConfig {
  std::optional<WorkloadSpec> workload;
  std::optional<std::filesystem::path> trace_path;
  CacheConfig cache{1 << 20};
  DistanceParams distance;
  StageToggles toggles;
  // First-turn requests are processed in batches of this many (0 = one batch
  // per turn round).
  std::size_t batch_size = 0;
  TokenCount scaffold_tokens = 0;
  std::optional<std::uint64_t> seed;  // overrides workload.seed
  // Writes <prefix>.csv and <prefix>.json when set.
  std::optional<std::filesystem::path> output_prefix;
  // Wall-clock fields are written as 0 when false, making outputs
  // byte-identical across runs.
  bool record_timings = true;

  void validate() const;
};

struct RequestOutcome {
  std::string request_id;
  PrefillReport report;
  TokenCount dedup_saved_tokens = 0;
  std::size_t hint_tokens = 0;
};

struct RunResult {
  std::vector<RequestOutcome> requests;
  double hit_rate = 0.0;
  TokenCount hit_tokens = 0;
  TokenCount total_tokens = 0;
  TokenCount prefilled_tokens = 0;
  TokenCount dedup_saved_tokens = 0;
  std::size_t hint_tokens = 0;
  std::size_t evicted_session_nodes = 0;
  double index_build_seconds = 0.0;
  // Index construction, ordering and scheduling combined.
  double overhead_seconds = 0.0;
};

// Replays `trace` through the enabled stages and the cache simulator.
// Records are processed in turn rounds; every session's turn t runs before
// any turn t + 1.
RunResult simulate(const Trace& trace, const ExperimentConfig& config);

struct StageResult {
  std::string stage;
  double hit_rate = 0.0;
  TokenCount prefilled_tokens = 0;
  double delta_hit_rate = 0.0;  // against the previous stage
};

struct ExperimentSummary {
  RunResult result;
  std::vector<StageResult> stages;  // baseline, then each enabled stage added in turn
};

// Loads or generates the workload, runs the configured pipeline plus its
// ablation ladder and writes outputs when an output prefix is set.
ExperimentSummary run_experiment(const ExperimentConfig& config);

Trace load_workload(const ExperimentConfig& config);

nlohmann::json summary_to_json(const ExperimentSummary& summary, bool record_timings);

// Cache key of a document prefilled in a later turn of a conversation;
// first-turn documents use their own id.
DocId turn_key(std::uint32_t turn, DocId doc);

}  // namespace ctxreuse
