#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "ctxreuse/context_index.hpp"
#include "ctxreuse/types.hpp"

namespace ctxreuse {

// Per-session conversation history. `turn` is the next turn to process;
// `node` is the session's context node (its path is refreshed from the
// index when the tree is restructured).
struct SessionState {
  std::string session_id;
  SearchPath path;
  NodeId node = kNoNode;
  std::map<DocId, std::uint32_t> seen_docs;  // doc -> turn of first prefill
  TokenCount cumulative_tokens = 0;
  std::uint32_t turn = 0;

  bool operator==(const SessionState&) const = default;
};

// State after a completed first turn whose prefilled docs are `first_turn`.
SessionState start_session(const Context& first_turn, const SearchPath& path, NodeId node);

// Marks the session's index node as multi-turn. Idempotent. Throws
// PreconditionError if the session has no completed turn, InvalidPathError
// if its path does not resolve.
void activate_multi_turn(const SessionState& state, ContextIndex& index);

struct DedupResult {
  RewrittenRequest request;
  SessionState state;
};

// Drops the retrieved docs already prefilled earlier in the session. The
// remaining docs keep retrieval order; dropped docs become dedup_refs
// naming the turn they were first prefilled in. Requires an active
// multi-turn flag on the session node.
DedupResult dedup_turn(const SessionState& state, const ContextIndex& index, const Context& retrieved);

// The history partition alone, without consulting the index. Used when the
// session's cached node has been evicted but its text is still in the
// conversation.
DedupResult dedup_history(const SessionState& state, const Context& retrieved);

nlohmann::json to_json(const SessionState& state);
SessionState session_from_json(const nlohmann::json& j);

}  // namespace ctxreuse
