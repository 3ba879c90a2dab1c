#include "ctxreuse/hints.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_set>

#include "ctxreuse/error.hpp"

namespace ctxreuse {

std::string default_label(DocId doc) { return "[Doc_" + std::to_string(raw(doc)) + "]"; }

Labeler default_labeler() { return [](DocId doc) { return default_label(doc); }; }

std::string render_order_hint(std::span<const DocId> original_order, const Labeler& labeler) {
  if (original_order.empty()) throw PreconditionError("order hint needs at least one document");
  std::unordered_set<DocId> seen;
  std::string out = "Please read the context in the following priority order: ";
  for (std::size_t i = 0; i < original_order.size(); ++i) {
    if (!seen.insert(original_order[i]).second) {
      throw PreconditionError("order hint lists a document twice");
    }
    if (i > 0) out += " > ";
    out += labeler(original_order[i]);
  }
  out += " and answer the question.";
  return out;
}

std::string render_location_hint(DocId doc, const Labeler& labeler) {
  return "Please refer to " + labeler(doc) + " in the previous conversation";
}

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kSystemPrompt: return "system_prompt";
    case SegmentKind::kHistoryTurn: return "history_turn";
    case SegmentKind::kDocRef: return "doc_ref";
    case SegmentKind::kOrderHint: return "order_hint";
    case SegmentKind::kLocationHint: return "location_hint";
    case SegmentKind::kQuestion: return "question";
  }
  return "unknown";
}

std::string PromptLayout::to_text(const std::function<std::string(DocId)>& doc_text) const {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i > 0) out += "\n\n";
    const Segment& s = segments[i];
    if (s.kind == SegmentKind::kDocRef && doc_text) {
      out += doc_text(*s.doc);
    } else {
      out += s.text;
    }
  }
  return out;
}

nlohmann::json PromptLayout::to_json() const {
  nlohmann::json segs = nlohmann::json::array();
  for (const Segment& s : segments) {
    nlohmann::json j = {{"kind", std::string(ctxreuse::to_string(s.kind))}, {"text", s.text}};
    if (s.doc) j["doc"] = raw(*s.doc);
    if (s.kind == SegmentKind::kHistoryTurn) j["turn"] = s.turn;
    segs.push_back(std::move(j));
  }
  return {{"segments", std::move(segs)}};
}

std::optional<std::vector<DocId>> reordered_priority(const RewrittenRequest& req) {
  std::set<DocId> prefilled(req.ordered_docs.begin(), req.ordered_docs.end());
  std::vector<DocId> retrieval;
  for (DocId d : req.original.docs) {
    if (prefilled.count(d)) retrieval.push_back(d);
  }
  if (retrieval == req.ordered_docs || retrieval.empty()) return std::nullopt;
  return retrieval;
}

void attach_hints(RewrittenRequest& req, const AssembleOptions& options) {
  req.order_hint.reset();
  if (options.order_hints) {
    if (auto priority = reordered_priority(req)) {
      req.order_hint = render_order_hint(*priority, options.labeler);
    }
  }
  req.location_hints.clear();
  for (const DedupRef& ref : req.dedup_refs) {
    req.location_hints.push_back(render_location_hint(ref.doc, options.labeler));
  }
}

PromptLayout assemble(const RewrittenRequest& req, const std::string& question,
                      std::span<const HistoryTurn> history, const AssembleOptions& options) {
  PromptLayout layout;
  if (!options.system_prompt.empty()) {
    layout.segments.push_back({SegmentKind::kSystemPrompt, options.system_prompt, std::nullopt, 0});
  }
  for (const HistoryTurn& h : history) {
    layout.segments.push_back({SegmentKind::kHistoryTurn, h.text, std::nullopt, h.turn});
  }

  auto doc_ref = [&](DocId d) {
    return Segment{SegmentKind::kDocRef, options.labeler(d), d, 0};
  };
  if (req.dedup_refs.empty()) {
    for (DocId d : req.ordered_docs) layout.segments.push_back(doc_ref(d));
  } else {
    // Walk the retrieval order: removed docs become location hints in place,
    // the remaining slots take the prefilled docs in prompt order.
    std::unordered_set<DocId> removed;
    for (const DedupRef& ref : req.dedup_refs) removed.insert(ref.doc);
    std::size_t next = 0;
    for (DocId d : req.original.docs) {
      if (removed.count(d)) {
        layout.segments.push_back({SegmentKind::kLocationHint,
                                   render_location_hint(d, options.labeler), d, 0});
      } else if (next < req.ordered_docs.size()) {
        layout.segments.push_back(doc_ref(req.ordered_docs[next++]));
      }
    }
    while (next < req.ordered_docs.size()) layout.segments.push_back(doc_ref(req.ordered_docs[next++]));
  }

  if (options.order_hints) {
    if (auto priority = reordered_priority(req)) {
      layout.segments.push_back(
          {SegmentKind::kOrderHint, render_order_hint(*priority, options.labeler), std::nullopt, 0});
    }
  }
  if (!question.empty()) layout.segments.push_back({SegmentKind::kQuestion, question, std::nullopt, 0});
  return layout;
}

std::size_t whitespace_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

}  // namespace ctxreuse
