#include "ctxreuse/context_index.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "ctxreuse/error.hpp"

namespace ctxreuse {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Distances closer than this are treated as equal during descent.
constexpr double kTieTolerance = 1e-12;

// Working cluster during agglomerative construction.
struct Cluster {
  std::vector<DocId> rep;  // input order for leaves, ascending for merged clusters
  PositionedDocs positioned;
  std::vector<std::size_t> children;  // indices into the cluster list
  std::size_t input = 0;              // valid for leaves
  bool is_virtual = false;
};

std::vector<DocId> sorted_intersection(const PositionedDocs& a, const PositionedDocs& b) {
  std::vector<DocId> out;
  const auto& ea = a.entries();
  const auto& eb = b.entries();
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < ea.size() && j < eb.size()) {
    if (ea[i].doc < eb[j].doc) {
      ++i;
    } else if (eb[j].doc < ea[i].doc) {
      ++j;
    } else {
      out.push_back(ea[i].doc);
      ++i;
      ++j;
    }
  }
  return out;
}

double cluster_distance(const Cluster& a, const Cluster& b, double alpha) {
  const Overlap o = overlap(a.positioned, b.positioned);
  if (o.shared == 0) return kInf;
  return distance_from_overlap(o, a.rep.size(), b.rep.size(), alpha);
}

}  // namespace

std::size_t shared_prefix_length(std::span<const DocId> context, const PositionedDocs& query) {
  std::size_t n = 0;
  while (n < context.size() && query.contains(context[n])) ++n;
  return n;
}

std::vector<DocId> prefix_first(std::span<const DocId> prefix, std::span<const DocId> docs) {
  std::vector<DocId> out(prefix.begin(), prefix.end());
  const PositionedDocs in_prefix(prefix);
  for (DocId doc : docs) {
    if (!in_prefix.contains(doc)) out.push_back(doc);
  }
  return out;
}

ContextIndex::ContextIndex(DistanceParams params) : params_(params) {
  params_.validate();
  IndexNode root;
  root.id = kRootNode;
  root.is_virtual = true;
  nodes_.push_back(std::move(root));
  alive_.push_back(true);
}

NodeId ContextIndex::new_node(NodeId parent, std::vector<DocId> context, bool is_virtual) {
  const NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  IndexNode n;
  n.id = id;
  n.parent = parent;
  n.context = std::move(context);
  n.is_virtual = is_virtual;
  nodes_.push_back(std::move(n));
  alive_.push_back(true);
  return id;
}

ContextIndex ContextIndex::build(std::span<const Context> contexts, DistanceParams params) {
  if (contexts.empty()) {
    throw PreconditionError("build requires at least one context");
  }
  for (const Context& ctx : contexts) {
    ctx.validate();
    if (ctx.docs.empty()) throw PreconditionError("build requires non-empty contexts");
  }
  ContextIndex index(params);
  const double alpha = index.params_.alpha;
  const std::size_t n = contexts.size();

  std::vector<Cluster> clusters;
  clusters.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Cluster c;
    c.rep = contexts[i].docs;
    c.positioned = PositionedDocs(c.rep);
    c.input = i;
    clusters.push_back(std::move(c));
  }

  // slot -> cluster; a merge writes the new cluster into the lower slot.
  std::vector<std::size_t> slot_cluster(n);
  std::vector<bool> active(n, true);
  for (std::size_t i = 0; i < n; ++i) slot_cluster[i] = i;

  std::vector<double> dist(n * n, kInf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = cluster_distance(clusters[i], clusters[j], alpha);
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }
  }

  // Nearest active neighbour per slot, lowest slot on ties.
  std::vector<std::size_t> nn(n, n);
  std::vector<double> nn_dist(n, kInf);
  auto rescan = [&](std::size_t k) {
    nn[k] = n;
    nn_dist[k] = kInf;
    const double* row = &dist[k * n];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == k || !active[j]) continue;
      if (row[j] < nn_dist[k]) {
        nn_dist[k] = row[j];
        nn[k] = j;
      }
    }
  };
  for (std::size_t k = 0; k < n; ++k) rescan(k);

  for (;;) {
    std::size_t lo = n;
    double best = kInf;
    for (std::size_t k = 0; k < n; ++k) {
      if (active[k] && nn_dist[k] < best) {
        best = nn_dist[k];
        lo = k;
      }
    }
    if (lo == n) break;  // only disjoint clusters remain
    const std::size_t hi = nn[lo];

    Cluster merged;
    merged.is_virtual = true;
    const Cluster& a = clusters[slot_cluster[lo]];
    const Cluster& b = clusters[slot_cluster[hi]];
    merged.rep = sorted_intersection(a.positioned, b.positioned);
    merged.positioned = PositionedDocs(merged.rep);
    // A virtual child with the same shared set adds nothing; adopt its children.
    for (std::size_t side : {slot_cluster[lo], slot_cluster[hi]}) {
      const Cluster& c = clusters[side];
      if (c.is_virtual && c.rep.size() == merged.rep.size()) {
        merged.children.insert(merged.children.end(), c.children.begin(), c.children.end());
      } else {
        merged.children.push_back(side);
      }
    }
    clusters.push_back(std::move(merged));
    slot_cluster[lo] = clusters.size() - 1;
    active[hi] = false;
    nn_dist[hi] = kInf;

    const Cluster& fresh = clusters[slot_cluster[lo]];
    for (std::size_t k = 0; k < n; ++k) {
      if (k == lo || !active[k]) continue;
      const double d = cluster_distance(fresh, clusters[slot_cluster[k]], alpha);
      dist[lo * n + k] = d;
      dist[k * n + lo] = d;
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (k == lo || !active[k]) continue;
      if (nn[k] == lo || nn[k] == hi) {
        rescan(k);
      } else {
        const double d = dist[k * n + lo];
        if (d < nn_dist[k] || (d == nn_dist[k] && lo < nn[k])) {
          nn_dist[k] = d;
          nn[k] = lo;
        }
      }
    }
    rescan(lo);
  }

  // Materialize the cluster forest under the root, children before
  // grandchildren in slot order. Stored contexts are prefix-first.
  index.build_leaves_.assign(n, kNoNode);
  struct Pending {
    std::size_t cluster;
    NodeId parent;
  };
  std::vector<Pending> stack;
  for (std::size_t k = n; k-- > 0;) {
    if (active[k]) stack.push_back({slot_cluster[k], kRootNode});
  }
  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    const Cluster& c = clusters[p.cluster];
    const std::vector<DocId> parent_ctx = index.nodes_[raw(p.parent)].context;
    std::vector<DocId> ctx;
    if (c.is_virtual) {
      ctx = parent_ctx;
      const PositionedDocs in_parent(parent_ctx);
      for (DocId d : c.rep) {
        if (!in_parent.contains(d)) ctx.push_back(d);
      }
    } else {
      ctx = prefix_first(parent_ctx, c.rep);
    }
    const NodeId id = index.new_node(p.parent, std::move(ctx), c.is_virtual);
    IndexNode& parent = index.mut(p.parent);
    index.mut(id).path = parent.path.extended(static_cast<std::uint32_t>(parent.children.size()));
    parent.children.push_back(id);
    if (c.is_virtual) {
      for (std::size_t i = c.children.size(); i-- > 0;) stack.push_back({c.children[i], id});
    } else {
      index.build_leaves_[c.input] = id;
    }
  }
  ++index.structure_version_;
  return index;
}

SearchResult ContextIndex::search(const Context& query) const {
  query.validate();
  const PositionedDocs q(query.docs);
  SearchResult out;
  out.structure_version = structure_version_;
  NodeId cur = kRootNode;
  for (;;) {
    const IndexNode& node = nodes_[raw(cur)];
    const std::size_t base = node.context.size();
    NodeId best = kNoNode;
    std::uint32_t best_slot = 0;
    std::size_t best_prefix = base;
    double best_dist = kInf;
    for (std::uint32_t slot = 0; slot < node.children.size(); ++slot) {
      const NodeId cid = node.children[slot];
      if (cid == kNoNode) continue;
      const IndexNode& child = nodes_[raw(cid)];
      const std::size_t p = shared_prefix_length(child.context, q);
      // Only children that extend the reusable prefix are worth descending into.
      if (p <= base || p < best_prefix) continue;
      const double d = distance_from_overlap(overlap(child.context, q), child.context.size(),
                                             query.docs.size(), params_.alpha);
      if (p > best_prefix || d < best_dist - kTieTolerance) {
        best = cid;
        best_slot = slot;
        best_prefix = p;
        best_dist = d;
      }
    }
    if (best == kNoNode) {
      out.node = cur;
      out.shared_prefix = node.context;
      return out;
    }
    out.path.steps.push_back(best_slot);
    const IndexNode& child = nodes_[raw(best)];
    if (!child.is_virtual || best_prefix < child.context.size()) {
      out.node = best;
      out.shared_prefix.assign(child.context.begin(),
                               child.context.begin() + static_cast<std::ptrdiff_t>(best_prefix));
      return out;
    }
    cur = best;
  }
}

SearchPath ContextIndex::insert(const Context& query, const SearchResult& at) {
  query.validate();
  if (query.docs.empty()) throw PreconditionError("cannot insert an empty context");
  if (at.structure_version != structure_version_) {
    throw InvalidPathError("search result is stale: the index changed since the search");
  }
  if (traverse(at.path).id != at.node) {
    throw InvalidPathError("search path " + to_string(at.path) + " does not lead to the matched node");
  }
  const PositionedDocs q(query.docs);
  const NodeId target = at.node;
  const std::size_t p = shared_prefix_length(nodes_[raw(target)].context, q);
  const bool appendable = target == kRootNode ||
                          (nodes_[raw(target)].is_virtual && p == nodes_[raw(target)].context.size());

  NodeId parent = target;
  if (!appendable) {
    // Split: a virtual node for the shared prefix takes the target's slot.
    const IndexNode& t = nodes_[raw(target)];
    std::vector<DocId> shared(t.context.begin(), t.context.begin() + static_cast<std::ptrdiff_t>(p));
    const NodeId grand = t.parent;
    const SearchPath slot_path = t.path;
    parent = new_node(grand, std::move(shared), /*is_virtual=*/true);
    IndexNode& g = mut(grand);
    *std::find(g.children.begin(), g.children.end(), target) = parent;
    IndexNode& v = mut(parent);
    v.path = slot_path;
    v.children.push_back(target);
    v.last_access = ++clock_;
    mut(target).parent = parent;
    reassign_paths(target, slot_path.extended(0));
  }

  const std::vector<DocId> leaf_ctx = prefix_first(nodes_[raw(parent)].context, query.docs);
  const NodeId leaf = new_node(parent, leaf_ctx, /*is_virtual=*/false);
  IndexNode& pn = mut(parent);
  const SearchPath leaf_path = pn.path.extended(static_cast<std::uint32_t>(pn.children.size()));
  pn.children.push_back(leaf);
  IndexNode& ln = mut(leaf);
  ln.path = leaf_path;
  ln.last_access = ++clock_;
  ++structure_version_;
  return leaf_path;
}

SearchPath ContextIndex::add(const Context& query) { return insert(query, search(query)); }

const IndexNode& ContextIndex::traverse(const SearchPath& path) const {
  NodeId cur = kRootNode;
  for (std::size_t i = 0; i < path.steps.size(); ++i) {
    const IndexNode& n = nodes_[raw(cur)];
    const std::uint32_t step = path.steps[i];
    if (step >= n.children.size() || n.children[step] == kNoNode) {
      throw InvalidPathError("path " + to_string(path) + " is invalid at step " + std::to_string(i));
    }
    cur = n.children[step];
  }
  return nodes_[raw(cur)];
}

IndexNode& ContextIndex::mut_traverse(const SearchPath& path) {
  return mut(traverse(path).id);
}

void ContextIndex::touch(IndexNode& n) {
  n.last_access = ++clock_;
  if (n.seq_len > 0) heap_.push({n.last_access, raw(n.id)});
}

void ContextIndex::apply(const CacheEvent& event) {
  std::visit(
      [this](const auto& e) {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, EvictedEvent>) {
          if (e.n_tokens < 0) throw PreconditionError("evicted token count is negative");
          evict(e.n_tokens);
        } else if constexpr (std::is_same_v<E, AppendedEvent>) {
          if (e.n_tokens < 0) throw PreconditionError("appended token count is negative");
          IndexNode& n = mut_traverse(e.path);
          n.seq_len += e.n_tokens;
          touch(n);
        } else {
          touch(mut_traverse(e.path));
        }
      },
      event);
}

void ContextIndex::apply(std::span<const CacheEvent> events) {
  for (const CacheEvent& e : events) apply(e);
}

void ContextIndex::evict(TokenCount n_tokens) {
  TokenCount remaining = n_tokens;
  while (remaining > 0 && !heap_.empty()) {
    const HeapEntry top = heap_.top();
    heap_.pop();
    const NodeId id{top.id};
    if (!alive_[top.id]) continue;
    IndexNode& n = mut(id);
    if (n.seq_len == 0 || n.last_access != top.last_access) continue;  // stale entry
    const TokenCount take = std::min(n.seq_len, remaining);
    n.seq_len -= take;
    remaining -= take;
    if (n.seq_len == 0) {
      detach_if_empty(id);
    } else {
      heap_.push(top);
    }
  }
}

void ContextIndex::detach_if_empty(NodeId id) {
  while (id != kRootNode && alive_[raw(id)]) {
    IndexNode& n = mut(id);
    if (n.seq_len != 0 || n.live_children() != 0) return;
    IndexNode& parent = mut(n.parent);
    *std::find(parent.children.begin(), parent.children.end(), id) = kNoNode;
    alive_[raw(id)] = false;
    ++structure_version_;
    id = parent.id;
  }
}

void ContextIndex::reassign_paths(NodeId id, const SearchPath& path) {
  std::vector<std::pair<NodeId, SearchPath>> stack{{id, path}};
  while (!stack.empty()) {
    auto [cur, p] = std::move(stack.back());
    stack.pop_back();
    IndexNode& n = mut(cur);
    for (std::uint32_t slot = 0; slot < n.children.size(); ++slot) {
      if (n.children[slot] != kNoNode) stack.emplace_back(n.children[slot], p.extended(slot));
    }
    n.path = std::move(p);
  }
}

void ContextIndex::set_multi_turn(const SearchPath& path, bool value) {
  mut_traverse(path).multi_turn = value;
}

const IndexNode& ContextIndex::node(NodeId id) const {
  if (!alive(id)) throw InvalidPathError("node " + std::to_string(raw(id)) + " is not in the index");
  return nodes_[raw(id)];
}

bool ContextIndex::alive(NodeId id) const {
  return raw(id) < alive_.size() && alive_[raw(id)];
}

SearchPath ContextIndex::path_of(NodeId id) const { return node(id).path; }

std::vector<NodeId> ContextIndex::live_nodes() const {
  std::vector<NodeId> out;
  std::vector<NodeId> stack{kRootNode};
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    out.push_back(id);
    const IndexNode& n = nodes_[raw(id)];
    for (std::size_t i = n.children.size(); i-- > 0;) {
      if (n.children[i] != kNoNode) stack.push_back(n.children[i]);
    }
  }
  return out;
}

std::size_t ContextIndex::live_node_count() const {
  return static_cast<std::size_t>(std::count(alive_.begin(), alive_.end(), true));
}

std::size_t ContextIndex::leaf_count() const {
  std::size_t count = 0;
  for (NodeId id : live_nodes()) {
    if (!nodes_[raw(id)].is_virtual) ++count;
  }
  return count;
}

std::size_t ContextIndex::height() const {
  std::size_t h = 0;
  for (NodeId id : live_nodes()) h = std::max(h, nodes_[raw(id)].path.size());
  return h;
}

TokenCount ContextIndex::total_seq_len() const {
  TokenCount total = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (alive_[i]) total += nodes_[i].seq_len;
  }
  return total;
}

nlohmann::json ContextIndex::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!alive_[i]) continue;
    const IndexNode& n = nodes_[i];
    nlohmann::json ctx = nlohmann::json::array();
    for (DocId d : n.context) ctx.push_back(raw(d));
    nlohmann::json j = {
        {"id", raw(n.id)},
        {"context", std::move(ctx)},
        {"seq_len", n.seq_len},
        {"multi_turn", n.multi_turn},
        {"virtual", n.is_virtual},
        {"last_access", n.last_access},
        {"child_slots", n.children.size()},
    };
    if (n.parent == kNoNode) {
      j["parent"] = nullptr;
      j["slot"] = nullptr;
    } else {
      j["parent"] = raw(n.parent);
      j["slot"] = n.path.steps.back();
    }
    nodes.push_back(std::move(j));
  }
  nlohmann::json leaves = nlohmann::json::array();
  for (NodeId id : build_leaves_) {
    leaves.push_back(id == kNoNode ? nlohmann::json(nullptr) : nlohmann::json(raw(id)));
  }
  return {
      {"alpha", params_.alpha},
      {"allow_out_of_band", params_.allow_out_of_band},
      {"clock", clock_},
      {"structure_version", structure_version_},
      {"node_capacity", nodes_.size()},
      {"build_leaves", std::move(leaves)},
      {"nodes", std::move(nodes)},
  };
}

ContextIndex ContextIndex::from_json(const nlohmann::json& doc) {
  try {
    DistanceParams params;
    params.alpha = doc.at("alpha").get<double>();
    params.allow_out_of_band = doc.value("allow_out_of_band", false);
    ContextIndex index(params);
    const std::size_t capacity = doc.at("node_capacity").get<std::size_t>();
    if (capacity == 0) throw ParseError("index snapshot has no root");
    index.nodes_.resize(capacity);
    index.alive_.assign(capacity, false);
    for (std::size_t i = 0; i < capacity; ++i) index.nodes_[i].id = NodeId{static_cast<std::uint32_t>(i)};

    struct Link {
      std::uint32_t id;
      std::uint32_t parent;
      std::uint32_t slot;
    };
    std::vector<Link> links;
    for (const auto& j : doc.at("nodes")) {
      const auto id = j.at("id").get<std::uint32_t>();
      if (id >= capacity) throw ParseError("node id out of range in index snapshot");
      IndexNode& n = index.nodes_[id];
      n.context.clear();
      for (const auto& d : j.at("context")) n.context.push_back(DocId{d.get<std::uint64_t>()});
      n.seq_len = j.at("seq_len").get<TokenCount>();
      n.multi_turn = j.at("multi_turn").get<bool>();
      n.is_virtual = j.at("virtual").get<bool>();
      n.last_access = j.at("last_access").get<std::uint64_t>();
      n.children.assign(j.value("child_slots", std::size_t{0}), kNoNode);
      index.alive_[id] = true;
      if (j.at("parent").is_null()) {
        if (id != raw(kRootNode)) throw ParseError("only the root may lack a parent");
        n.parent = kNoNode;
      } else {
        links.push_back({id, j.at("parent").get<std::uint32_t>(), j.at("slot").get<std::uint32_t>()});
      }
    }
    if (!index.alive_[0]) throw ParseError("index snapshot has no root");
    for (const Link& l : links) {
      if (l.parent >= capacity || !index.alive_[l.parent]) {
        throw ParseError("node " + std::to_string(l.id) + " references a missing parent");
      }
      IndexNode& parent = index.nodes_[l.parent];
      if (parent.children.size() <= l.slot) parent.children.resize(l.slot + 1, kNoNode);
      if (parent.children[l.slot] != kNoNode) throw ParseError("two nodes share a child slot");
      parent.children[l.slot] = NodeId{l.id};
      index.nodes_[l.id].parent = NodeId{l.parent};
    }
    index.reassign_paths(kRootNode, SearchPath{});
    if (index.live_nodes().size() != index.live_node_count()) {
      throw ParseError("index snapshot contains unreachable nodes");
    }
    for (const auto& l : doc.at("build_leaves")) {
      index.build_leaves_.push_back(l.is_null() ? kNoNode : NodeId{l.get<std::uint32_t>()});
    }
    index.clock_ = doc.at("clock").get<std::uint64_t>();
    index.structure_version_ = doc.at("structure_version").get<std::uint64_t>();
    for (std::size_t i = 0; i < capacity; ++i) {
      if (index.alive_[i] && index.nodes_[i].seq_len > 0) {
        index.heap_.push({index.nodes_[i].last_access, static_cast<std::uint32_t>(i)});
      }
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed index snapshot: ") + e.what());
  }
}

}  // namespace ctxreuse
