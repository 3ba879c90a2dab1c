#pragma once

// Randomized property suites. Each returns the number of violating cases
// and keeps the first failure message for diagnostics. Unit tests run them
// at small sizes; the acceptance binary runs them at full size.

#include <algorithm>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "ctxreuse/cache_sim.hpp"
#include "ctxreuse/context_index.hpp"
#include "ctxreuse/dedup.hpp"
#include "ctxreuse/distance.hpp"
#include "ctxreuse/error.hpp"
#include "ctxreuse/ordering.hpp"
#include "ctxreuse/scheduler.hpp"
#include "support.hpp"

namespace testing {

struct PropResult {
  std::size_t cases = 0;
  std::size_t violations = 0;
  std::string first_failure;

  void fail(std::size_t c, const std::string& why) {
    if (violations++ == 0) first_failure = "case " + std::to_string(c) + ": " + why;
  }
  bool operator==(int zero) const { return violations == static_cast<std::size_t>(zero); }
};

inline std::ostream& operator<<(std::ostream& os, const PropResult& r) {
  return os << r.violations << "/" << r.cases << " violations" << (r.first_failure.empty() ? "" : " (")
            << r.first_failure << (r.first_failure.empty() ? "" : ")");
}

inline std::vector<Context> random_contexts(std::mt19937_64& rng, std::size_t n, std::size_t universe,
                                            std::size_t max_k) {
  std::vector<Context> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(make_context(random_docs(rng, universe, 1 + rng() % max_k), 1 + rng() % 4));
  }
  return out;
}

inline PropResult prop_distance(std::size_t cases, std::uint64_t seed) {
  PropResult r;
  r.cases = cases;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const auto a = random_docs(rng, 40, 1 + rng() % 20);
    const auto b = random_docs(rng, 40, 1 + rng() % 20);
    const double alpha = 0.001 + 0.009 * std::uniform_real_distribution<double>()(rng);
    const DistanceParams p{alpha};
    const double ab = context_distance(a, b, p);
    const double ba = context_distance(b, a, p);
    const double oracle = naive_distance(a, b, alpha);
    const std::size_t longest = std::max(a.size(), b.size());
    // Mean shift is below the longer length, so alpha * shift is bounded too.
    const double upper = 1.0 + alpha * static_cast<double>(longest);
    if (ab != ba) r.fail(c, "asymmetric");
    if (context_distance(a, a, p) != 0.0) r.fail(c, "identity");
    if (ab < 0.0 || ab > upper) r.fail(c, "out of bounds");
    if (std::abs(ab - oracle) > 1e-12) r.fail(c, "disagrees with naive oracle");
    std::set<DocId> sa(a.begin(), a.end());
    const bool disjoint = std::none_of(b.begin(), b.end(), [&](DocId d) { return sa.count(d); });
    if (disjoint && ab != 1.0) r.fail(c, "disjoint pair not exactly 1");
  }
  return r;
}

inline PropResult prop_ordering(std::size_t cases, std::uint64_t seed) {
  PropResult r;
  r.cases = cases;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t universe = 6 + rng() % 20;
    ContextIndex index = ContextIndex::build(random_contexts(rng, 1 + rng() % 6, universe, 6));
    const auto batch = random_contexts(rng, 1 + rng() % 6, universe, 6);
    const auto out = order_batch(index, batch);
    if (out.size() != batch.size()) {
      r.fail(c, "size mismatch");
      continue;
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& in = batch[i].docs;
      const auto& docs = out[i].docs;
      std::vector<DocId> x = in;
      std::vector<DocId> y = docs;
      std::sort(x.begin(), x.end());
      std::sort(y.begin(), y.end());
      if (x != y) {
        r.fail(c, "not a permutation");
        continue;
      }
      const std::size_t m = out[i].matched_prefix_len;
      std::vector<DocId> rest;
      const std::set<DocId> prefix(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(m));
      for (DocId d : in) {
        if (!prefix.count(d)) rest.push_back(d);
      }
      if (!std::equal(rest.begin(), rest.end(), docs.begin() + static_cast<std::ptrdiff_t>(m), docs.end())) {
        r.fail(c, "unmatched docs lost retrieval order");
      }
      if (m == 0 && docs != in) r.fail(c, "unmatched context was reordered");
      if (!(index.path_of(out[i].node) == out[i].path)) r.fail(c, "stale path after batch");
      if (index.node(out[i].node).context != docs) r.fail(c, "registered leaf differs from output");
    }
    try {
      check_prefix_integrity(index);
    } catch (const std::exception& e) {
      r.fail(c, e.what());
    }
  }
  return r;
}

inline PropResult prop_scheduler(std::size_t cases, std::uint64_t seed) {
  PropResult r;
  r.cases = cases;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    std::vector<SearchPath> paths(rng() % 12);
    for (auto& p : paths) {
      const std::size_t len = rng() % 4;
      for (std::size_t i = 0; i < len; ++i) p.steps.push_back(static_cast<std::uint32_t>(rng() % 3));
    }
    const Schedule s = schedule_paths(paths);
    std::vector<std::size_t> sorted = s.order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> expect(paths.size());
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = i;
    if (sorted != expect) {
      r.fail(c, "not a permutation");
      continue;
    }
    // Each first step appears in one contiguous run; within a run deeper
    // paths come first and equal depths keep input order.
    std::set<std::uint32_t> closed;
    for (std::size_t i = 0; i < s.order.size(); ++i) {
      const SearchPath& p = paths[s.order[i]];
      if (p.empty()) continue;
      const std::uint32_t g = p.steps.front();
      const bool continues = i > 0 && !paths[s.order[i - 1]].empty() && paths[s.order[i - 1]].steps.front() == g;
      if (!continues) {
        if (closed.count(g)) r.fail(c, "group split");
        closed.insert(g);
      } else {
        const SearchPath& prev = paths[s.order[i - 1]];
        if (prev.size() < p.size()) r.fail(c, "shallower path ran first");
        if (prev.size() == p.size() && s.order[i - 1] > s.order[i]) r.fail(c, "unstable within group");
      }
    }
  }
  return r;
}

inline PropResult prop_dedup(std::size_t cases, std::uint64_t seed) {
  PropResult r;
  r.cases = cases;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    ContextIndex index = ContextIndex::build(random_contexts(rng, 1 + rng() % 4, 30, 6));
    const std::size_t universe = 10 + rng() % 30;
    Context first = make_context(random_docs(rng, universe, 1 + rng() % 8), 2, "s");
    const OrderedContext oc = order_context(index, first);
    first.docs = oc.docs;
    SessionState state = start_session(first, oc.path, oc.node);
    activate_multi_turn(state, index);
    std::set<DocId> prefilled(first.docs.begin(), first.docs.end());
    TokenCount tokens = first.total_tokens();
    const std::size_t turns = 1 + rng() % 5;
    for (std::uint32_t t = 1; t <= turns; ++t) {
      const Context next = make_context(random_docs(rng, universe, 1 + rng() % 8), 2, "s", t);
      const DedupResult d = dedup_turn(state, index, next);
      try {
        d.request.check_conservation();
      } catch (const std::exception& e) {
        r.fail(c, e.what());
      }
      for (DocId doc : d.request.ordered_docs) {
        if (prefilled.count(doc)) r.fail(c, "document prefilled twice");
      }
      for (const DedupRef& ref : d.request.dedup_refs) {
        if (!prefilled.count(ref.doc)) r.fail(c, "reference to a document never prefilled");
        if (state.seen_docs.at(ref.doc) != ref.turn) r.fail(c, "reference names the wrong turn");
      }
      std::vector<DocId> kept;
      for (DocId doc : next.docs) {
        if (!prefilled.count(doc)) kept.push_back(doc);
      }
      if (kept != d.request.ordered_docs) r.fail(c, "novel documents lost retrieval order");
      for (DocId doc : d.request.ordered_docs) {
        prefilled.insert(doc);
        tokens += next.tokens_of(doc);
      }
      state = d.state;
      if (state.turn != t + 1) r.fail(c, "turn counter");
      if (state.cumulative_tokens != tokens) r.fail(c, "cumulative tokens");
    }
  }
  return r;
}

inline PropResult prop_cache(std::size_t cases, std::uint64_t seed) {
  PropResult r;
  r.cases = cases;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const TokenCount capacity = 8 + static_cast<TokenCount>(rng() % 40);
    PrefixCacheSim sim(CacheConfig{capacity});
    ReferenceCache ref(capacity);
    const std::size_t requests = 1 + rng() % 12;
    for (std::size_t q = 0; q < requests; ++q) {
      std::vector<DocId> docs = random_docs(rng, 8, 1 + rng() % 6);
      std::vector<TokenCount> tokens;
      std::vector<std::uint64_t> keys;
      TokenCount total = 0;
      for (DocId d : docs) {
        // Per-doc sizes are a fixed function of the id so shared prefixes agree.
        tokens.push_back(1 + static_cast<TokenCount>(raw(d) % 3));
        keys.push_back(raw(d));
        total += tokens.back();
      }
      if (total > capacity) {
        bool threw = false;
        try {
          sim.prefill(docs, tokens);
        } catch (const OverCapacityError&) {
          threw = true;
        }
        if (!threw) r.fail(c, "oversized request accepted");
        continue;
      }
      const PrefillReport got = sim.prefill(docs, tokens);
      const auto want = ref.prefill(keys, tokens);
      if (got.hit_tokens + got.miss_tokens != got.total_tokens) r.fail(c, "hit + miss != total");
      if (got.total_tokens != total) r.fail(c, "total mismatch");
      if (sim.resident_tokens() > capacity) r.fail(c, "budget exceeded");
      if (got.hit_tokens != want.hit) r.fail(c, "hit tokens differ from reference");
      if (got.evicted_tokens != want.evicted) r.fail(c, "evicted tokens differ from reference");
      if (sim.resident_tokens() != ref.used()) r.fail(c, "resident tokens differ from reference");
    }
  }
  return r;
}

inline PropResult prop_index_events(std::size_t cases, std::uint64_t seed) {
  PropResult r;
  r.cases = cases;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t universe = 6 + rng() % 20;
    ContextIndex index = ContextIndex::build(random_contexts(rng, 1 + rng() % 10, universe, 6));
    TokenCount expected = 0;
    const std::size_t steps = 5 + rng() % 30;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto live = index.live_nodes();
      const NodeId pick = live[rng() % live.size()];
      const SearchPath p = index.path_of(pick);
      switch (rng() % 4) {
        case 0: {
          const TokenCount n = 1 + static_cast<TokenCount>(rng() % 6);
          index.apply(AppendedEvent{p, n});
          expected += n;
          break;
        }
        case 1:
          index.apply(AccessedEvent{p});
          break;
        case 2: {
          const TokenCount n = static_cast<TokenCount>(rng() % 8);
          index.apply(EvictedEvent{n});
          expected -= std::min(n, expected);
          break;
        }
        default:
          index.add(make_context(random_docs(rng, universe, 1 + rng() % 6)));
          break;
      }
      if (index.total_seq_len() != expected) {
        r.fail(c, "token conservation");
        break;
      }
      try {
        check_prefix_integrity(index);
      } catch (const std::exception& e) {
        r.fail(c, e.what());
        break;
      }
    }
  }
  return r;
}

// Replays a descent and compares every choice against all siblings.
inline PropResult prop_search_local_optimality(std::size_t cases, std::uint64_t seed) {
  PropResult r;
  r.cases = cases;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t universe = 6 + rng() % 20;
    const std::size_t leaves = 2 + rng() % 40;
    ContextIndex index = ContextIndex::build(random_contexts(rng, leaves, universe, 7));
    const std::size_t extra = rng() % std::min<std::size_t>(24, 64 - leaves);
    for (std::size_t i = 0; i < extra; ++i) index.add(make_context(random_docs(rng, universe, 1 + rng() % 7)));
    const Context q = make_context(random_docs(rng, universe, 1 + rng() % 7));
    const PositionedDocs pq(q.docs);
    const double alpha = index.params().alpha;
    const SearchResult res = index.search(q);

    const IndexNode* cur = &index.root();
    for (std::size_t depth = 0;; ++depth) {
      struct Score {
        std::size_t prefix;
        double dist;
        std::uint32_t slot;
      };
      std::vector<Score> scores;
      for (std::uint32_t slot = 0; slot < cur->children.size(); ++slot) {
        if (cur->children[slot] == kNoNode) continue;
        const IndexNode& ch = index.node(cur->children[slot]);
        const std::size_t p = shared_prefix_length(ch.context, pq);
        if (p <= cur->context.size()) continue;
        scores.push_back({p, naive_distance(ch.context, q.docs, alpha), slot});
      }
      if (depth == res.path.size()) {
        // Stopped here: either nothing extends the prefix or this is a
        // partially matched node the parent picked.
        if (depth > 0 && cur->id == res.node && (!cur->is_virtual || res.shared_prefix.size() < cur->context.size())) {
          break;
        }
        if (!scores.empty()) r.fail(c, "stopped although a child extends the shared prefix");
        break;
      }
      if (scores.empty()) {
        r.fail(c, "descended with no extending child");
        break;
      }
      const Score best = *std::min_element(scores.begin(), scores.end(), [](const Score& a, const Score& b) {
        if (a.prefix != b.prefix) return a.prefix > b.prefix;
        if (std::abs(a.dist - b.dist) > 1e-12) return a.dist < b.dist;
        return a.slot < b.slot;
      });
      const std::uint32_t chosen = res.path.steps[depth];
      if (chosen != best.slot) {
        std::ostringstream os;
        os << "chose slot " << chosen << " over better sibling " << best.slot << " at depth " << depth;
        r.fail(c, os.str());
        break;
      }
      cur = &index.node(cur->children[chosen]);
    }
    if (&index.traverse(res.path) != &index.node(res.node)) r.fail(c, "result path does not lead to node");
  }
  return r;
}

}  // namespace testing
