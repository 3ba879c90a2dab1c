#include "ctxreuse/ordering.hpp"

#include "ctxreuse/error.hpp"

namespace ctxreuse {
namespace {

std::map<DocId, std::size_t> ranks_of(const Context& ctx) {
  std::map<DocId, std::size_t> ranks;
  for (std::size_t i = 0; i < ctx.docs.size(); ++i) ranks.emplace(ctx.docs[i], i);
  return ranks;
}

}  // namespace

OrderedContext order_context(ContextIndex& index, const Context& ctx) {
  const SearchResult match = index.search(ctx);
  OrderedContext out;
  out.path = index.insert(ctx, match);
  const IndexNode& leaf = index.traverse(out.path);
  out.docs = leaf.context;
  out.node = leaf.id;
  out.matched_prefix_len = match.shared_prefix.size();
  out.original_rank = ranks_of(ctx);
  return out;
}

std::vector<OrderedContext> order_batch(ContextIndex& index, std::span<const Context> batch) {
  if (batch.empty()) throw PreconditionError("order_batch requires a non-empty batch");
  std::vector<OrderedContext> out;
  out.reserve(batch.size());
  for (const Context& ctx : batch) out.push_back(order_context(index, ctx));
  // A later split may have pushed an earlier leaf one level down.
  for (OrderedContext& oc : out) oc.path = index.path_of(oc.node);
  return out;
}

std::vector<OrderedContext> ordered_from_build(const ContextIndex& index,
                                               std::span<const Context> built_from) {
  const auto& leaves = index.build_leaves();
  if (leaves.size() != built_from.size()) {
    throw PreconditionError("contexts do not match the index's build input");
  }
  std::vector<OrderedContext> out;
  out.reserve(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const IndexNode& leaf = index.node(leaves[i]);
    OrderedContext oc;
    oc.docs = leaf.context;
    oc.matched_prefix_len = index.node(leaf.parent).context.size();
    oc.path = leaf.path;
    oc.node = leaf.id;
    oc.original_rank = ranks_of(built_from[i]);
    out.push_back(std::move(oc));
  }
  return out;
}

}  // namespace ctxreuse
