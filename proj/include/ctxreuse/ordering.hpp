#pragma once

#include <map>
#include <span>
#include <vector>

#include "ctxreuse/context_index.hpp"
#include "ctxreuse/types.hpp"

namespace ctxreuse {

// A retrieved context rewritten to lead with the prefix it shares with the
// index, followed by the remaining documents in retrieval order.
struct OrderedContext {
  std::vector<DocId> docs;
  std::size_t matched_prefix_len = 0;
  SearchPath path;
  NodeId node = kNoNode;  // the leaf registered for this context
  std::map<DocId, std::size_t> original_rank;
};

// Searches the index, emits the prefix-first order and registers it.
// Contexts with no overlap keep their order and start a new root branch.
OrderedContext order_context(ContextIndex& index, const Context& ctx);

// Sequential order_context; later items see earlier insertions. Returned
// paths are valid against the index after the whole batch.
std::vector<OrderedContext> order_batch(ContextIndex& index, std::span<const Context> batch);

// Ordered views of the contexts an index was built from: each leaf already
// stores its prefix-first order, inherited from its parent.
std::vector<OrderedContext> ordered_from_build(const ContextIndex& index,
                                               std::span<const Context> built_from);

}  // namespace ctxreuse
