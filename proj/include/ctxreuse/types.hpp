#pragma once

// Domain types shared by every module. Plain values, no algorithms.

#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace ctxreuse {

// Engine-assigned document identity. Two retrievals of the same chunk
// carry the same DocId; string names are interned by the workload layer.
enum class DocId : std::uint64_t {};

constexpr std::uint64_t raw(DocId id) noexcept {
  return static_cast<std::uint64_t>(id);
}

// Stable handle of a node inside a ContextIndex arena.
enum class NodeId : std::uint32_t {};

inline constexpr NodeId kNoNode{std::numeric_limits<std::uint32_t>::max()};
inline constexpr NodeId kRootNode{0};

constexpr std::uint32_t raw(NodeId id) noexcept {
  return static_cast<std::uint32_t>(id);
}

using TokenCount = std::int64_t;

// Default per-document size when a trace does not carry token counts
// (matches a 1024-token chunker).
inline constexpr TokenCount kDefaultDocTokens = 1024;

// Ordered documents retrieved for one request, most relevant first.
struct Context {
  std::vector<DocId> docs;
  std::map<DocId, TokenCount> token_counts;
  std::string session_id;
  std::uint32_t turn = 0;

  // Throws PreconditionError on duplicate docs, missing or non-positive
  // token counts.
  void validate() const;

  TokenCount tokens_of(DocId doc) const;
  TokenCount total_tokens() const;

  bool operator==(const Context&) const = default;
};

// Builds a context with every doc sized `tokens_per_doc`.
Context make_context(std::vector<DocId> docs,
                     TokenCount tokens_per_doc = kDefaultDocTokens,
                     std::string session_id = {}, std::uint32_t turn = 0);

// Child indices from the root to a node.
struct SearchPath {
  std::vector<std::uint32_t> steps;

  bool empty() const noexcept { return steps.empty(); }
  std::size_t size() const noexcept { return steps.size(); }

  SearchPath extended(std::uint32_t child) const {
    SearchPath out = *this;
    out.steps.push_back(child);
    return out;
  }

  auto operator<=>(const SearchPath&) const = default;
};

std::string to_string(const SearchPath& path);

// One node of the context index. Children are stored as arena handles;
// a detached child leaves kNoNode in its slot so sibling paths stay valid.
struct IndexNode {
  NodeId id = kRootNode;
  NodeId parent = kNoNode;
  std::vector<DocId> context;
  SearchPath path;
  TokenCount seq_len = 0;
  bool multi_turn = false;
  bool is_virtual = false;
  std::vector<NodeId> children;
  std::uint64_t last_access = 0;

  std::size_t live_children() const;
};

// Notifications from the serving engine's prefix cache.
struct EvictedEvent {
  TokenCount n_tokens = 0;
  bool operator==(const EvictedEvent&) const = default;
};
struct AppendedEvent {
  SearchPath path;
  TokenCount n_tokens = 0;
  bool operator==(const AppendedEvent&) const = default;
};
struct AccessedEvent {
  SearchPath path;
  bool operator==(const AccessedEvent&) const = default;
};

using CacheEvent = std::variant<EvictedEvent, AppendedEvent, AccessedEvent>;

struct DedupRef {
  DocId doc{};
  std::uint32_t turn = 0;  // turn in which the doc was first prefilled
  bool operator==(const DedupRef&) const = default;
};

// Output unit of the rewrite pipeline.
struct RewrittenRequest {
  Context original;
  std::vector<DocId> ordered_docs;
  std::vector<DedupRef> dedup_refs;
  std::optional<std::string> order_hint;
  std::vector<std::string> location_hints;
  SearchPath path;

  // Throws ValidationError if a document was lost, invented or duplicated.
  void check_conservation() const;

  bool operator==(const RewrittenRequest&) const = default;
};

}  // namespace ctxreuse
