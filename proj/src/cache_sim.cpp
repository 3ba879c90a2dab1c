#include "ctxreuse/cache_sim.hpp"

#include <ostream>
#include <unordered_set>

#include "ctxreuse/error.hpp"

namespace ctxreuse {

void CacheConfig::validate() const {
  if (capacity_tokens <= 0) throw PreconditionError("cache capacity must be positive");
}

PrefixCacheSim::PrefixCacheSim(CacheConfig config) : config_(config) {
  config_.validate();
  Node root;
  root.alive = true;
  nodes_.push_back(std::move(root));
}

PrefixCacheSim::LeafKey PrefixCacheSim::leaf_key(std::uint32_t id) const {
  return {{nodes_[id].last_access, nodes_[id].created}, id};
}

void PrefixCacheSim::set_access(std::uint32_t id, std::uint64_t when) {
  Node& n = nodes_[id];
  const bool is_leaf = id != 0 && n.children.empty();
  if (is_leaf) leaves_.erase(leaf_key(id));
  n.last_access = when;
  if (is_leaf) leaves_.insert(leaf_key(id));
}

std::uint32_t PrefixCacheSim::add_child(std::uint32_t parent, std::uint64_t key, TokenCount tokens,
                                        std::uint64_t when) {
  std::uint32_t id;
  if (!free_.empty()) {
    id = free_.back();
    free_.pop_back();
  } else {
    id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
  }
  Node& n = nodes_[id];
  n.key = key;
  n.tokens = tokens;
  n.parent = parent;
  n.children.clear();
  n.last_access = when;
  n.created = ++created_;
  n.alive = true;
  if (parent != 0 && nodes_[parent].children.empty()) leaves_.erase(leaf_key(parent));
  nodes_[parent].children.emplace(key, id);
  leaves_.insert(leaf_key(id));
  resident_ += tokens;
  ++live_nodes_;
  return id;
}

TokenCount PrefixCacheSim::evict_one(const std::vector<bool>& pinned) {
  for (auto it = leaves_.begin(); it != leaves_.end(); ++it) {
    const std::uint32_t id = it->second;
    if (id < pinned.size() && pinned[id]) continue;
    leaves_.erase(it);
    Node& n = nodes_[id];
    const TokenCount freed = n.tokens;
    const std::uint32_t parent = n.parent;
    nodes_[parent].children.erase(n.key);
    n.alive = false;
    n.children.clear();
    free_.push_back(id);
    resident_ -= freed;
    --live_nodes_;
    if (parent != 0 && nodes_[parent].children.empty()) leaves_.insert(leaf_key(parent));
    return freed;
  }
  return 0;
}

PrefillReport PrefixCacheSim::prefill(std::span<const DocId> docs, std::span<const TokenCount> tokens,
                                      TokenCount scaffold_tokens, const SearchPath& tag) {
  if (docs.size() != tokens.size()) throw PreconditionError("docs and token counts differ in length");
  if (scaffold_tokens < 0) throw PreconditionError("scaffold token count is negative");
  std::vector<std::pair<std::uint64_t, TokenCount>> keys;
  keys.reserve(docs.size() + 1);
  if (scaffold_tokens > 0) {
    keys.emplace_back(kScaffoldKeyBase | static_cast<std::uint64_t>(scaffold_tokens), scaffold_tokens);
  }
  std::unordered_set<DocId> seen;
  TokenCount total = scaffold_tokens;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (raw(docs[i]) >= kScaffoldKeyBase) throw PreconditionError("doc id collides with scaffold keys");
    if (!seen.insert(docs[i]).second) throw PreconditionError("prefill docs contain a duplicate");
    if (tokens[i] <= 0) throw PreconditionError("prefill token counts must be positive");
    keys.emplace_back(raw(docs[i]), tokens[i]);
    total += tokens[i];
  }
  if (total > config_.capacity_tokens) {
    throw OverCapacityError("request needs " + std::to_string(total) + " tokens but capacity is " +
                            std::to_string(config_.capacity_tokens) + " (short by " +
                            std::to_string(total - config_.capacity_tokens) + ")");
  }

  PrefillReport report;
  report.total_tokens = total;
  const std::uint64_t now = ++clock_;
  std::vector<bool> pinned(nodes_.size() + keys.size(), false);
  std::uint32_t cur = 0;
  std::size_t i = 0;
  TokenCount doc_hits = 0;
  for (; i < keys.size(); ++i) {
    auto it = nodes_[cur].children.find(keys[i].first);
    if (it == nodes_[cur].children.end()) break;
    cur = it->second;
    pinned[cur] = true;
    set_access(cur, now);
    report.hit_tokens += keys[i].second;
    if (keys[i].first < kScaffoldKeyBase) doc_hits += keys[i].second;
  }
  TokenCount appended = 0;
  for (; i < keys.size(); ++i) {
    while (resident_ + keys[i].second > config_.capacity_tokens) {
      const TokenCount freed = evict_one(pinned);
      if (freed == 0) throw OverCapacityError("cannot free enough unpinned cache tokens");
      report.evicted_tokens += freed;
    }
    cur = add_child(cur, keys[i].first, keys[i].second, now);
    if (cur >= pinned.size()) pinned.resize(cur + 1, false);
    pinned[cur] = true;
    if (keys[i].first < kScaffoldKeyBase) appended += keys[i].second;
  }
  report.miss_tokens = report.total_tokens - report.hit_tokens;

  if (appended > 0) {
    report.events.emplace_back(AppendedEvent{tag, appended});
  } else if (doc_hits > 0) {
    report.events.emplace_back(AccessedEvent{tag});
  }
  if (report.evicted_tokens > 0) report.events.emplace_back(EvictedEvent{report.evicted_tokens});
  return report;
}

PrefillReport PrefixCacheSim::prefill(const Context& ctx, TokenCount scaffold_tokens,
                                      const SearchPath& tag) {
  std::vector<TokenCount> tokens;
  tokens.reserve(ctx.docs.size());
  for (DocId d : ctx.docs) tokens.push_back(ctx.tokens_of(d));
  return prefill(ctx.docs, tokens, scaffold_tokens, tag);
}

TokenCount PrefixCacheSim::resident_doc_tokens() const {
  TokenCount total = 0;
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    if (nodes_[i].alive && nodes_[i].key < kScaffoldKeyBase) total += nodes_[i].tokens;
  }
  return total;
}

double hit_rate(std::span<const PrefillReport> reports) {
  if (reports.empty()) throw PreconditionError("hit_rate needs at least one report");
  TokenCount hit = 0;
  TokenCount total = 0;
  for (const PrefillReport& r : reports) {
    hit += r.hit_tokens;
    total += r.total_tokens;
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_reports_csv(std::ostream& out, std::span<const ReportRow> rows) {
  out << "request_id,hit_tokens,miss_tokens,total_tokens,evicted_tokens\n";
  for (const ReportRow& row : rows) {
    const PrefillReport& r = *row.report;
    out << csv_escape(row.request_id) << ',' << r.hit_tokens << ',' << r.miss_tokens << ','
        << r.total_tokens << ',' << r.evicted_tokens << '\n';
  }
}

nlohmann::json reports_to_json(std::span<const ReportRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const ReportRow& row : rows) {
    const PrefillReport& r = *row.report;
    out.push_back({{"request_id", row.request_id},
                   {"hit_tokens", r.hit_tokens},
                   {"miss_tokens", r.miss_tokens},
                   {"total_tokens", r.total_tokens},
                   {"evicted_tokens", r.evicted_tokens}});
  }
  return out;
}

}  // namespace ctxreuse
