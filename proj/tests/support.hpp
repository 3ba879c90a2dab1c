#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "ctxreuse/cache_sim.hpp"
#include "ctxreuse/context_index.hpp"
#include "ctxreuse/types.hpp"

namespace testing {

using namespace ctxreuse;

inline std::vector<DocId> ids(std::initializer_list<std::uint64_t> xs) {
  std::vector<DocId> out;
  for (auto x : xs) out.push_back(DocId{x});
  return out;
}

inline std::vector<std::uint64_t> raws(std::span<const DocId> docs) {
  std::vector<std::uint64_t> out;
  for (DocId d : docs) out.push_back(raw(d));
  return out;
}

inline Context ctx(std::initializer_list<std::uint64_t> xs, TokenCount per_doc = 1) {
  return make_context(ids(xs), per_doc);
}

inline SearchPath path(std::initializer_list<std::uint32_t> xs) { return SearchPath{std::vector<std::uint32_t>(xs)}; }

// The three initialization contexts of the worked example.
inline std::vector<Context> example_contexts(TokenCount per_doc = 1) {
  return {ctx({2, 1, 3}, per_doc), ctx({2, 6, 1}, per_doc), ctx({4, 1, 0}, per_doc)};
}

// Distance straight from the definition, with quadratic lookups.
inline double naive_distance(const std::vector<DocId>& a, const std::vector<DocId>& b, double alpha) {
  std::size_t shared = 0;
  double shift = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (a[i] == b[j]) {
        ++shared;
        shift += std::abs(static_cast<double>(i) - static_cast<double>(j));
      }
    }
  }
  if (shared == 0) return 1.0;
  const double longer = static_cast<double>(std::max(a.size(), b.size()));
  return 1.0 - static_cast<double>(shared) / longer + alpha * shift / static_cast<double>(shared);
}

// Random context of `k` distinct docs drawn from [0, universe).
inline std::vector<DocId> random_docs(std::mt19937_64& rng, std::size_t universe, std::size_t k) {
  std::vector<std::uint64_t> pool(universe);
  for (std::size_t i = 0; i < universe; ++i) pool[i] = i;
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<DocId> out;
  for (std::size_t i = 0; i < std::min(k, universe); ++i) out.push_back(DocId{pool[i]});
  return out;
}

// Prefix cache model kept as a flat map from resident key sequences to
// their metadata. Every request prefix is a map key, so there is no trie
// to share bugs with the simulator.
class ReferenceCache {
 public:
  explicit ReferenceCache(TokenCount capacity) : capacity_(capacity) {}

  struct Result {
    TokenCount hit = 0;
    TokenCount total = 0;
    TokenCount evicted = 0;
  };

  Result prefill(const std::vector<std::uint64_t>& keys, const std::vector<TokenCount>& tokens) {
    Result r;
    for (TokenCount t : tokens) r.total += t;
    if (r.total > capacity_) throw std::runtime_error("over capacity");
    const std::uint64_t now = ++clock_;
    std::set<std::vector<std::uint64_t>> pinned;
    std::vector<std::uint64_t> prefix;
    std::size_t i = 0;
    for (; i < keys.size(); ++i) {
      prefix.push_back(keys[i]);
      auto it = resident_.find(prefix);
      if (it == resident_.end()) {
        prefix.pop_back();
        break;
      }
      it->second.last = now;
      pinned.insert(prefix);
      r.hit += tokens[i];
    }
    for (; i < keys.size(); ++i) {
      while (used_ + tokens[i] > capacity_) r.evicted += evict(pinned);
      prefix.push_back(keys[i]);
      resident_[prefix] = Meta{now, ++created_, tokens[i]};
      used_ += tokens[i];
      pinned.insert(prefix);
    }
    return r;
  }

  TokenCount used() const { return used_; }

 private:
  struct Meta {
    std::uint64_t last;
    std::uint64_t created;
    TokenCount tokens;
  };

  bool is_leaf(const std::vector<std::uint64_t>& p) const {
    for (const auto& [q, m] : resident_) {
      if (q.size() == p.size() + 1 && std::equal(p.begin(), p.end(), q.begin())) return false;
    }
    return true;
  }

  TokenCount evict(const std::set<std::vector<std::uint64_t>>& pinned) {
    const std::vector<std::uint64_t>* victim = nullptr;
    const Meta* best = nullptr;
    for (const auto& [p, m] : resident_) {
      if (pinned.count(p) || !is_leaf(p)) continue;
      if (!best || std::pair(m.last, m.created) < std::pair(best->last, best->created)) {
        victim = &p;
        best = &m;
      }
    }
    if (!victim) throw std::runtime_error("nothing evictable");
    const TokenCount freed = best->tokens;
    used_ -= freed;
    resident_.erase(*victim);
    return freed;
  }

  TokenCount capacity_;
  TokenCount used_ = 0;
  std::uint64_t clock_ = 0;
  std::uint64_t created_ = 0;
  std::map<std::vector<std::uint64_t>, Meta> resident_;
};

// Structural checks every index must satisfy: children extend their
// parent's context, stored paths resolve, no live node has negative length.
inline void check_prefix_integrity(const ContextIndex& index) {
  for (NodeId id : index.live_nodes()) {
    const IndexNode& n = index.node(id);
    if (n.seq_len < 0) throw std::runtime_error("negative seq_len");
    if (&index.traverse(n.path) != &n) throw std::runtime_error("stored path does not resolve to node");
    if (!(index.path_of(id) == n.path)) throw std::runtime_error("path_of disagrees with stored path");
    for (NodeId c : n.children) {
      if (c == kNoNode) continue;
      const IndexNode& child = index.node(c);
      if (child.parent != id) throw std::runtime_error("child parent link broken");
      if (child.context.size() < n.context.size() ||
          !std::equal(n.context.begin(), n.context.end(), child.context.begin())) {
        throw std::runtime_error("child context does not extend parent");
      }
    }
    if (!n.is_virtual && id != kRootNode) {
      std::set<DocId> uniq(n.context.begin(), n.context.end());
      if (uniq.size() != n.context.size()) throw std::runtime_error("leaf context has duplicates");
    }
  }
}

}  // namespace testing
