#pragma once

#include <cstdint>
#include <queue>
#include <span>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ctxreuse/distance.hpp"
#include "ctxreuse/types.hpp"

namespace ctxreuse {

// Outcome of a greedy descent. `shared_prefix` is the longest leading run
// of the stopping node's context made only of query documents; it is the
// part of the query that can reuse that node's cached prefix.
struct SearchResult {
  NodeId node = kRootNode;
  SearchPath path;
  std::vector<DocId> shared_prefix;
  std::uint64_t structure_version = 0;
};

// Tree of cached context prefixes. The root holds the empty context; every
// child context starts with its parent's context. Leaves are the contexts
// that were actually registered; virtual nodes hold shared prefixes.
//
// Mutations need exclusive access. Concurrent const access is safe between
// mutations.
class ContextIndex {
 public:
  explicit ContextIndex(DistanceParams params = {});

  // Agglomerative clustering: repeatedly merges the closest pair of
  // clusters (lowest (i, j) slot pair on ties) into a virtual node holding
  // their sorted intersection. Clusters with disjoint documents are never
  // merged; they hang off the root as separate branches. Leaf contexts are
  // stored prefix-first. `build_leaves()[i]` is the leaf of contexts[i].
  static ContextIndex build(std::span<const Context> contexts, DistanceParams params = {});

  SearchResult search(const Context& query) const;

  // Registers `query` at the node found by `search`. Appends a leaf under a
  // virtual node whose context is fully shared; otherwise splits the
  // matched node by inserting a virtual node for the shared prefix. Returns
  // the new leaf's path. Throws InvalidPathError if the tree changed since
  // the search.
  SearchPath insert(const Context& query, const SearchResult& at);

  // search + insert.
  SearchPath add(const Context& query);

  const IndexNode& traverse(const SearchPath& path) const;

  void apply(const CacheEvent& event);
  void apply(std::span<const CacheEvent> events);

  void set_multi_turn(const SearchPath& path, bool value = true);

  const IndexNode& root() const { return nodes_[0]; }
  const IndexNode& node(NodeId id) const;
  bool alive(NodeId id) const;
  SearchPath path_of(NodeId id) const;

  const std::vector<NodeId>& build_leaves() const noexcept { return build_leaves_; }
  const DistanceParams& params() const noexcept { return params_; }
  std::uint64_t structure_version() const noexcept { return structure_version_; }
  std::uint64_t clock() const noexcept { return clock_; }

  std::size_t live_node_count() const;
  std::size_t leaf_count() const;
  std::size_t height() const;
  TokenCount total_seq_len() const;

  // Live node ids in depth-first (child slot) order, root first.
  std::vector<NodeId> live_nodes() const;

  // Debug snapshot: live nodes with parent references and child slots.
  nlohmann::json to_json() const;
  static ContextIndex from_json(const nlohmann::json& doc);

 private:
  struct HeapEntry {
    std::uint64_t last_access;
    std::uint32_t id;
    bool operator>(const HeapEntry& o) const {
      return std::tie(last_access, id) > std::tie(o.last_access, o.id);
    }
  };

  NodeId new_node(NodeId parent, std::vector<DocId> context, bool is_virtual);
  IndexNode& mut(NodeId id) { return nodes_[raw(id)]; }
  IndexNode& mut_traverse(const SearchPath& path);
  void touch(IndexNode& n);
  void evict(TokenCount n_tokens);
  void detach_if_empty(NodeId id);
  void reassign_paths(NodeId id, const SearchPath& path);

  DistanceParams params_;
  std::vector<IndexNode> nodes_;
  std::vector<bool> alive_;
  std::vector<NodeId> build_leaves_;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> heap_;
  std::uint64_t clock_ = 0;
  std::uint64_t structure_version_ = 0;
};

// Longest leading run of `context` whose documents all occur in `query`.
std::size_t shared_prefix_length(std::span<const DocId> context, const PositionedDocs& query);

// `prefix` followed by the documents of `docs` not in it, in their
// original relative order.
std::vector<DocId> prefix_first(std::span<const DocId> prefix, std::span<const DocId> docs);

}  // namespace ctxreuse
