#include "ctxreuse/dedup.hpp"

#include "ctxreuse/error.hpp"

namespace ctxreuse {

SessionState start_session(const Context& first_turn, const SearchPath& path, NodeId node) {
  first_turn.validate();
  SessionState s;
  s.session_id = first_turn.session_id;
  s.path = path;
  s.node = node;
  for (DocId d : first_turn.docs) s.seen_docs.emplace(d, first_turn.turn);
  s.cumulative_tokens = first_turn.total_tokens();
  s.turn = first_turn.turn + 1;
  return s;
}

void activate_multi_turn(const SessionState& state, ContextIndex& index) {
  if (state.turn == 0) {
    throw PreconditionError("session '" + state.session_id + "' has no completed turn");
  }
  index.set_multi_turn(state.path, true);
}

DedupResult dedup_history(const SessionState& state, const Context& retrieved) {
  retrieved.validate();
  if (state.turn == 0) {
    throw PreconditionError("session '" + state.session_id + "' has no completed turn");
  }
  if (retrieved.session_id != state.session_id) throw UnknownSessionError(retrieved.session_id);

  DedupResult out{RewrittenRequest{}, state};
  out.request.original = retrieved;
  out.request.path = state.path;
  for (DocId d : retrieved.docs) {
    auto it = state.seen_docs.find(d);
    if (it != state.seen_docs.end()) {
      out.request.dedup_refs.push_back({d, it->second});
    } else {
      out.request.ordered_docs.push_back(d);
      out.state.seen_docs.emplace(d, state.turn);
      out.state.cumulative_tokens += retrieved.tokens_of(d);
    }
  }
  out.state.turn = state.turn + 1;
  return out;
}

DedupResult dedup_turn(const SessionState& state, const ContextIndex& index, const Context& retrieved) {
  if (retrieved.session_id != state.session_id) throw UnknownSessionError(retrieved.session_id);
  const IndexNode& node = index.traverse(state.path);
  if (!node.multi_turn) {
    throw PreconditionError("session '" + state.session_id + "' is not in multi-turn mode");
  }
  return dedup_history(state, retrieved);
}

nlohmann::json to_json(const SessionState& state) {
  nlohmann::json seen = nlohmann::json::array();
  for (const auto& [doc, turn] : state.seen_docs) seen.push_back({raw(doc), turn});
  return {
      {"session_id", state.session_id},
      {"path", state.path.steps},
      {"node", state.node == kNoNode ? nlohmann::json(nullptr) : nlohmann::json(raw(state.node))},
      {"seen_docs", std::move(seen)},
      {"cumulative_tokens", state.cumulative_tokens},
      {"turn", state.turn},
  };
}

SessionState session_from_json(const nlohmann::json& j) {
  try {
    SessionState s;
    s.session_id = j.at("session_id").get<std::string>();
    s.path.steps = j.at("path").get<std::vector<std::uint32_t>>();
    s.node = j.at("node").is_null() ? kNoNode : NodeId{j.at("node").get<std::uint32_t>()};
    for (const auto& pair : j.at("seen_docs")) {
      s.seen_docs.emplace(DocId{pair.at(0).get<std::uint64_t>()}, pair.at(1).get<std::uint32_t>());
    }
    s.cumulative_tokens = j.at("cumulative_tokens").get<TokenCount>();
    s.turn = j.at("turn").get<std::uint32_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed session state: ") + e.what());
  }
}

}  // namespace ctxreuse
