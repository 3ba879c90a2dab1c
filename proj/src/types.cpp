#include "ctxreuse/types.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "ctxreuse/error.hpp"

namespace ctxreuse {

void Context::validate() const {
  std::unordered_set<DocId> seen;
  seen.reserve(docs.size());
  for (DocId doc : docs) {
    if (!seen.insert(doc).second) {
      throw PreconditionError("context has duplicate doc " + std::to_string(raw(doc)));
    }
    auto it = token_counts.find(doc);
    if (it == token_counts.end()) {
      throw PreconditionError("context is missing a token count for doc " +
                              std::to_string(raw(doc)));
    }
    if (it->second <= 0) {
      throw PreconditionError("doc " + std::to_string(raw(doc)) +
                              " has a non-positive token count");
    }
  }
}

TokenCount Context::tokens_of(DocId doc) const {
  auto it = token_counts.find(doc);
  if (it == token_counts.end()) {
    throw PreconditionError("no token count for doc " + std::to_string(raw(doc)));
  }
  return it->second;
}

TokenCount Context::total_tokens() const {
  TokenCount total = 0;
  for (DocId doc : docs) total += tokens_of(doc);
  return total;
}

Context make_context(std::vector<DocId> docs, TokenCount tokens_per_doc,
                     std::string session_id, std::uint32_t turn) {
  Context ctx;
  for (DocId doc : docs) ctx.token_counts[doc] = tokens_per_doc;
  ctx.docs = std::move(docs);
  ctx.session_id = std::move(session_id);
  ctx.turn = turn;
  return ctx;
}

std::string to_string(const SearchPath& path) {
  std::string out = "[";
  for (std::size_t i = 0; i < path.steps.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(path.steps[i]);
  }
  out += "]";
  return out;
}

std::size_t IndexNode::live_children() const {
  return static_cast<std::size_t>(
      std::count_if(children.begin(), children.end(),
                    [](NodeId c) { return c != kNoNode; }));
}

void RewrittenRequest::check_conservation() const {
  std::vector<DocId> rewritten = ordered_docs;
  for (const DedupRef& ref : dedup_refs) rewritten.push_back(ref.doc);
  std::vector<DocId> expected = original.docs;
  std::sort(rewritten.begin(), rewritten.end());
  std::sort(expected.begin(), expected.end());
  if (rewritten != expected) {
    throw ValidationError("rewritten request does not conserve the retrieved documents");
  }
  std::vector<DocId> ordered = ordered_docs;
  std::sort(ordered.begin(), ordered.end());
  if (std::adjacent_find(ordered.begin(), ordered.end()) != ordered.end()) {
    throw ValidationError("rewritten request repeats a document");
  }
}

}  // namespace ctxreuse
