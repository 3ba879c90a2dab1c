#include "ctxreuse/gateway.hpp"

#include <fstream>
#include <sstream>

#include "ctxreuse/error.hpp"
#include "ctxreuse/ordering.hpp"

namespace ctxreuse {
namespace {

constexpr int kStateVersion = 1;

std::string turn_text(const PromptLayout& layout) {
  std::string out;
  for (const Segment& s : layout.segments) {
    if (s.kind == SegmentKind::kSystemPrompt || s.kind == SegmentKind::kHistoryTurn) continue;
    if (!out.empty()) out += "\n\n";
    out += s.text;
  }
  return out;
}

// Turn without de-duplication: every retrieved doc is prefilled again.
DedupResult pass_through(const SessionState& state, const Context& retrieved) {
  DedupResult out{RewrittenRequest{}, state};
  out.request.original = retrieved;
  out.request.ordered_docs = retrieved.docs;
  out.request.path = state.path;
  for (DocId d : retrieved.docs) {
    out.state.seen_docs.emplace(d, state.turn);
    out.state.cumulative_tokens += retrieved.tokens_of(d);
  }
  out.state.turn = state.turn + 1;
  return out;
}

}  // namespace

nlohmann::json error_reply(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

void write_file_atomically(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)), index_(options_.distance) {
  if (options_.data_dir) {
    std::filesystem::create_directories(*options_.data_dir);
    load();
  }
}

std::size_t Gateway::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

void Gateway::seed(const std::vector<TraceRecord>& records, const Interner& names) {
  std::lock_guard lock(mu_);
  std::vector<Context> contexts;
  for (const TraceRecord& rec : records) {
    if (rec.turn != 0) continue;
    Context ctx;
    ctx.session_id = rec.session_id;
    for (DocId d : rec.retrieved) {
      const DocId id = interner_.intern(names.name(d));
      ctx.docs.push_back(id);
      auto it = rec.doc_tokens.find(d);
      ctx.token_counts[id] = it == rec.doc_tokens.end() ? kDefaultDocTokens : it->second;
    }
    contexts.push_back(std::move(ctx));
  }
  if (contexts.empty()) return;
  index_ = ContextIndex::build(contexts, options_.distance);
  persist();
}

std::string Gateway::label(DocId doc) const { return "[Doc_" + interner_.name(doc) + "]"; }

std::string Gateway::handle_line(std::string_view line) {
  nlohmann::json request;
  try {
    request = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    return error_reply("parse", e.what()).dump();
  }
  return handle(request).dump();
}

nlohmann::json Gateway::handle(const nlohmann::json& request) {
  std::lock_guard lock(mu_);
  try {
    nlohmann::json reply;
    if (request.is_array() || (request.is_object() && request.contains("type"))) {
      reply = apply_events(request);
    } else if (request.is_object()) {
      reply = rewrite(request);
    } else {
      return error_reply("bad_request", "request must be a JSON object or an array of events");
    }
    persist();
    return reply;
  } catch (const Error& e) {
    return error_reply(e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_reply("bad_request", e.what());
  }
}

nlohmann::json Gateway::rewrite(const nlohmann::json& request) {
  const auto session_id = request.at("session_id").get<std::string>();
  const auto turn = request.at("turn").get<std::uint32_t>();
  const auto names = request.at("retrieved").get<std::vector<std::string>>();
  const auto tokens = request.value("doc_tokens", std::map<std::string, TokenCount>{});
  const std::string question = request.value("question", std::string{});
  if (names.empty()) throw PreconditionError("request retrieved no documents");

  Context ctx;
  ctx.session_id = session_id;
  ctx.turn = turn;
  for (const std::string& name : names) {
    const DocId id = interner_.intern(name);
    ctx.docs.push_back(id);
    auto it = tokens.find(name);
    ctx.token_counts[id] = it == tokens.end() ? kDefaultDocTokens : it->second;
  }
  ctx.validate();

  AssembleOptions prompt;
  prompt.system_prompt = options_.system_prompt;
  prompt.order_hints = options_.order_hints;
  prompt.labeler = [this](DocId d) { return label(d); };

  RewrittenRequest req;
  PromptLayout layout;
  Session* session = nullptr;
  if (turn == 0) {
    const OrderedContext oc = order_context(index_, ctx);
    req.original = ctx;
    req.ordered_docs = oc.docs;
    req.path = oc.path;
    attach_hints(req, prompt);
    layout = assemble(req, question, {}, prompt);

    Context first = ctx;
    first.docs = oc.docs;
    Session fresh;
    fresh.state = start_session(first, oc.path, oc.node);
    if (options_.dedup) activate_multi_turn(fresh.state, index_);
    session = &(sessions_[session_id] = std::move(fresh));
  } else {
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw UnknownSessionError(session_id);
    session = &it->second;
    if (turn != session->state.turn) {
      throw ValidationError("session '" + session_id + "' expects turn " +
                            std::to_string(session->state.turn) + ", got " + std::to_string(turn));
    }
    const bool resident = index_.alive(session->state.node);
    SessionState state = session->state;
    if (resident) state.path = index_.path_of(state.node);
    DedupResult result;
    if (!options_.dedup) {
      result = pass_through(state, ctx);
    } else if (resident && index_.node(state.node).multi_turn) {
      result = dedup_turn(state, index_, ctx);
    } else {
      result = dedup_history(state, ctx);
    }
    req = std::move(result.request);
    attach_hints(req, prompt);
    layout = assemble(req, question, session->history, prompt);
    session->state = std::move(result.state);
  }
  req.check_conservation();
  session->history.push_back({turn, turn_text(layout)});

  nlohmann::json ordered = nlohmann::json::array();
  for (DocId d : req.ordered_docs) ordered.push_back(interner_.name(d));
  nlohmann::json refs = nlohmann::json::array();
  for (const DedupRef& ref : req.dedup_refs) refs.push_back({{"doc", interner_.name(ref.doc)}, {"turn", ref.turn}});
  return {
      {"session_id", session_id},
      {"turn", turn},
      {"ordered_docs", std::move(ordered)},
      {"dedup_refs", std::move(refs)},
      {"order_hint", req.order_hint ? nlohmann::json(*req.order_hint) : nlohmann::json(nullptr)},
      {"location_hints", req.location_hints},
      {"prompt_text", layout.to_text()},
      {"path", req.path.steps},
  };
}

CacheEvent Gateway::parse_event(const nlohmann::json& j) const {
  const auto type = j.at("type").get<std::string>();
  if (type == "evicted") return EvictedEvent{j.at("n_tokens").get<TokenCount>()};
  if (type == "appended") {
    return AppendedEvent{SearchPath{j.at("path").get<std::vector<std::uint32_t>>()},
                         j.at("n_tokens").get<TokenCount>()};
  }
  if (type == "accessed") return AccessedEvent{SearchPath{j.at("path").get<std::vector<std::uint32_t>>()}};
  throw ValidationError("unknown cache event type '" + type + "'");
}

nlohmann::json Gateway::apply_events(const nlohmann::json& events) {
  std::vector<CacheEvent> parsed;
  if (events.is_array()) {
    for (const auto& e : events) parsed.push_back(parse_event(e));
  } else {
    parsed.push_back(parse_event(events));
  }
  for (const CacheEvent& e : parsed) index_.apply(e);
  return {{"ok", true}, {"applied", parsed.size()}};
}

nlohmann::json Gateway::state_json() const {
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t i = 0; i < interner_.size(); ++i) names.push_back(interner_.name(DocId{i}));
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& [id, s] : sessions_) {
    nlohmann::json j = to_json(s.state);
    nlohmann::json history = nlohmann::json::array();
    for (const HistoryTurn& h : s.history) history.push_back({{"turn", h.turn}, {"text", h.text}});
    j["history"] = std::move(history);
    sessions.push_back(std::move(j));
  }
  return {{"version", kStateVersion},
          {"names", std::move(names)},
          {"index", index_.to_json()},
          {"sessions", std::move(sessions)}};
}

void Gateway::persist() const {
  if (!options_.data_dir) return;
  write_file_atomically(*options_.data_dir / "state.json", state_json().dump());
}

void Gateway::save() const {
  std::lock_guard lock(mu_);
  persist();
}

bool Gateway::load() {
  if (!options_.data_dir) return false;
  const std::filesystem::path path = *options_.data_dir / "state.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("corrupt gateway state " + path.string() + ": " + e.what());
  }
  std::lock_guard lock(mu_);
  try {
    if (doc.at("version").get<int>() != kStateVersion) {
      throw ParseError("unsupported gateway state version in " + path.string());
    }
    Interner names;
    for (const auto& n : doc.at("names")) names.intern(n.get<std::string>());
    ContextIndex index = ContextIndex::from_json(doc.at("index"));
    std::map<std::string, Session> sessions;
    for (const auto& j : doc.at("sessions")) {
      Session s;
      s.state = session_from_json(j);
      for (const auto& h : j.at("history")) {
        s.history.push_back({h.at("turn").get<std::uint32_t>(), h.at("text").get<std::string>()});
      }
      sessions.emplace(s.state.session_id, std::move(s));
    }
    interner_ = std::move(names);
    index_ = std::move(index);
    sessions_ = std::move(sessions);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupt gateway state " + path.string() + ": " + e.what());
  }
  return true;
}

}  // namespace ctxreuse
