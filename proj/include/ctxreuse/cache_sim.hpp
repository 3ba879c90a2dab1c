#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxreuse/types.hpp"

namespace ctxreuse {

enum class EvictionPolicy { kLru };

struct CacheConfig {
  TokenCount capacity_tokens = 0;
  EvictionPolicy policy = EvictionPolicy::kLru;

  void validate() const;
};

struct PrefillReport {
  TokenCount hit_tokens = 0;
  TokenCount miss_tokens = 0;
  TokenCount total_tokens = 0;
  TokenCount evicted_tokens = 0;
  std::vector<CacheEvent> events;
};

// Keys at or above this value are reserved for system-prompt scaffold nodes.
inline constexpr std::uint64_t kScaffoldKeyBase = std::uint64_t{1} << 63;

// Document-granularity prefix cache: a trie of document keys, each node
// holding that document's tokens, under a token budget. Least recently
// used leaves are evicted first; nodes on the request being prefilled are
// pinned. Single-threaded.
class PrefixCacheSim {
 public:
  explicit PrefixCacheSim(CacheConfig config);

  // Prefills `docs` (sizes in `tokens`, aligned) after a scaffold of
  // `scaffold_tokens` system-prompt tokens. The longest resident prefix is a
  // hit; the rest is inserted. Events carry `tag`, the request's index path.
  // Throws OverCapacityError if the request alone exceeds the budget.
  PrefillReport prefill(std::span<const DocId> docs, std::span<const TokenCount> tokens,
                        TokenCount scaffold_tokens = 0, const SearchPath& tag = {});

  PrefillReport prefill(const Context& ctx, TokenCount scaffold_tokens = 0,
                        const SearchPath& tag = {});

  TokenCount resident_tokens() const noexcept { return resident_; }
  const CacheConfig& config() const noexcept { return config_; }
  std::size_t resident_nodes() const noexcept { return live_nodes_; }

  // Sum of resident tokens held under keys below kScaffoldKeyBase.
  TokenCount resident_doc_tokens() const;

 private:
  struct Node {
    std::uint64_t key = 0;
    TokenCount tokens = 0;
    std::uint32_t parent = 0;
    std::unordered_map<std::uint64_t, std::uint32_t> children;
    std::uint64_t last_access = 0;
    std::uint64_t created = 0;
    bool alive = false;
  };
  using LeafKey = std::pair<std::pair<std::uint64_t, std::uint64_t>, std::uint32_t>;

  LeafKey leaf_key(std::uint32_t id) const;
  void set_access(std::uint32_t id, std::uint64_t when);
  std::uint32_t add_child(std::uint32_t parent, std::uint64_t key, TokenCount tokens, std::uint64_t when);
  TokenCount evict_one(const std::vector<bool>& pinned);

  CacheConfig config_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> free_;
  std::set<LeafKey> leaves_;  // evictable candidates, LRU first
  TokenCount resident_ = 0;
  std::size_t live_nodes_ = 0;
  std::uint64_t clock_ = 0;
  std::uint64_t created_ = 0;
};

// sum(hit) / sum(total). Throws PreconditionError on an empty input.
double hit_rate(std::span<const PrefillReport> reports);

struct ReportRow {
  std::string request_id;
  const PrefillReport* report = nullptr;
};

// Columns: request_id,hit_tokens,miss_tokens,total_tokens,evicted_tokens
void write_reports_csv(std::ostream& out, std::span<const ReportRow> rows);
nlohmann::json reports_to_json(std::span<const ReportRow> rows);

std::string csv_escape(const std::string& field);

}  // namespace ctxreuse
