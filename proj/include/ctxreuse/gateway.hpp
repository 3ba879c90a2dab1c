#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ctxreuse/context_index.hpp"
#include "ctxreuse/dedup.hpp"
#include "ctxreuse/hints.hpp"
#include "ctxreuse/workload.hpp"

namespace ctxreuse {

struct GatewayOptions {
  // State is loaded from and atomically persisted to <data_dir>/state.json.
  std::optional<std::filesystem::path> data_dir;
  DistanceParams distance;
  std::string system_prompt;
  bool order_hints = true;
  bool dedup = true;
};

// Rewrite service. One JSON object per request line, one per reply line.
//
// Rewrite request: {session_id, turn, retrieved[], doc_tokens{}, question}
// Reply:           {session_id, turn, ordered_docs[], dedup_refs[],
//                   order_hint, location_hints[], prompt_text, path[]}
// Cache events:    {type: evicted|appended|accessed, n_tokens, path[]}
//                  or an array of them; reply {ok: true, applied: n}.
// Failures reply {error: {code, message}}.
//
// Replies depend only on the stored state and the request. Requests are
// serialized internally; handle() is safe to call from many threads.
class Gateway {
 public:
  explicit Gateway(GatewayOptions options = {});

  // Builds the index from the first turns of `records`.
  void seed(const std::vector<TraceRecord>& records, const Interner& names);

  std::string handle_line(std::string_view line);
  nlohmann::json handle(const nlohmann::json& request);

  void save() const;
  bool load();

  const ContextIndex& index() const { return index_; }
  std::size_t session_count() const;

 private:
  struct Session {
    SessionState state;
    std::vector<HistoryTurn> history;
  };

  nlohmann::json rewrite(const nlohmann::json& request);
  nlohmann::json apply_events(const nlohmann::json& events);
  CacheEvent parse_event(const nlohmann::json& j) const;
  std::string label(DocId doc) const;
  nlohmann::json state_json() const;
  void persist() const;

  GatewayOptions options_;
  mutable std::mutex mu_;
  ContextIndex index_;
  Interner interner_;
  std::map<std::string, Session> sessions_;
};

nlohmann::json error_reply(const std::string& code, const std::string& message);

// Writes `contents` to a temporary sibling of `path` and renames it over
// `path`, so readers see either the old or the new file.
void write_file_atomically(const std::filesystem::path& path, const std::string& contents);

// Newline-delimited JSON over TCP. Each connection is served by its own
// thread and processes its requests in order.
class GatewayServer {
 public:
  GatewayServer(Gateway& gateway, const std::string& host, std::uint16_t port);
  ~GatewayServer();

  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  // Accepts connections until stop() is called.
  void run();
  void stop();

 private:
  void serve_connection(int fd);

  Gateway& gateway_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

// "host:port" -> (host, port). Throws PreconditionError.
std::pair<std::string, std::uint16_t> parse_bind(const std::string& bind);

}  // namespace ctxreuse
