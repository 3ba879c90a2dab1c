#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxreuse/types.hpp"

namespace ctxreuse {

// String document names <-> DocId. Ids are dense and assigned in first-seen
// order.
class Interner {
 public:
  DocId intern(std::string_view name);
  std::optional<DocId> find(std::string_view name) const;
  const std::string& name(DocId id) const;
  std::size_t size() const noexcept { return names_.size(); }

  bool operator==(const Interner& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, DocId> ids_;
};

struct TraceRecord {
  std::string session_id;
  std::uint32_t turn = 0;
  std::optional<std::string> query;
  std::vector<DocId> retrieved;
  std::map<DocId, TokenCount> doc_tokens;

  bool operator==(const TraceRecord&) const = default;
};

struct Trace {
  Interner interner;
  std::vector<TraceRecord> records;
};

Context to_context(const TraceRecord& record);

struct WorkloadSpec {
  std::size_t n_docs = 5000;
  std::size_t n_sessions = 2000;
  std::size_t turns_per_session = 1;
  std::size_t k = 15;
  double zipf_s = 1.2;
  double intra_session_overlap = 0.4;
  std::uint64_t seed = 42;
  TokenCount doc_tokens = kDefaultDocTokens;
  // Sigma of the log-normal multiplier applied to popularity when ranking a
  // retrieval. 0 ranks purely by popularity.
  double order_noise = 3.0;

  void validate() const;
};

// Popularity of rank r (0-based) proportional to 1 / (r + 1)^s.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s);

  std::size_t operator()(std::mt19937_64& rng) const;
  double cdf(std::size_t rank) const;  // P(X <= rank)
  double weight(std::size_t rank) const { return weights_[rank]; }
  std::size_t size() const noexcept { return weights_.size(); }

 private:
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

// Synthetic multi-session trace. Doc i is named "doc<i>" and is the i-th
// most popular. Deterministic for a given spec.
Trace generate(const WorkloadSpec& spec);

// Line-delimited JSON, one record per line.
void save_trace(const std::filesystem::path& path, const Trace& trace);
void write_trace(std::ostream& out, const Trace& trace);

// Parses and validates a trace, interning names into `interner`. Throws
// ParseError (with line number) or ValidationError (with session/turn).
std::vector<TraceRecord> load_trace(const std::filesystem::path& path, Interner& interner);
std::vector<TraceRecord> read_trace(std::istream& in, Interner& interner);
Trace load_trace(const std::filesystem::path& path);

struct TraceStats {
  std::size_t records = 0;
  std::size_t sessions = 0;
  std::size_t distinct_docs = 0;
  double mean_retrieved = 0.0;
  // Share of retrievals that hit the 20% most frequently retrieved docs.
  double top20_share = 0.0;
  // Mean fraction of a turn's docs already retrieved earlier in its session
  // (turns >= 1 only).
  double intra_session_overlap = 0.0;
  // Mean |A n B| / k over all pairs of first-turn retrievals.
  double cross_session_overlap = 0.0;
};

// `corpus_size` counts never-retrieved docs toward the top-20% cut; 0 means
// only retrieved docs are counted.
TraceStats compute_stats(const std::vector<TraceRecord>& records, std::size_t corpus_size = 0);

// Bisects zipf_s so the generated trace's top-20% share reaches `target`.
double calibrate_zipf(WorkloadSpec spec, double target_top20_share, double tolerance = 0.005);

}  // namespace ctxreuse
