#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxreuse/types.hpp"

namespace ctxreuse {

// Maps a document to its display label inside prompts and hints.
using Labeler = std::function<std::string(DocId)>;

// "[Doc_<id>]"
std::string default_label(DocId doc);
Labeler default_labeler();

// "Please read the context in the following priority order: A > B > C and
// answer the question." Throws PreconditionError on an empty or repeating
// order.
std::string render_order_hint(std::span<const DocId> original_order,
                              const Labeler& labeler = default_labeler());

// "Please refer to A in the previous conversation"
std::string render_location_hint(DocId doc, const Labeler& labeler = default_labeler());

enum class SegmentKind { kSystemPrompt, kHistoryTurn, kDocRef, kOrderHint, kLocationHint, kQuestion };

std::string_view to_string(SegmentKind kind);

struct Segment {
  SegmentKind kind = SegmentKind::kQuestion;
  std::string text;
  std::optional<DocId> doc;  // kDocRef, kLocationHint
  std::uint32_t turn = 0;    // kHistoryTurn

  bool operator==(const Segment&) const = default;
};

struct PromptLayout {
  std::vector<Segment> segments;

  // Segments joined by a blank line. DocRef segments render through
  // `doc_text` when given, else as their label.
  std::string to_text(const std::function<std::string(DocId)>& doc_text = {}) const;
  nlohmann::json to_json() const;
};

struct HistoryTurn {
  std::uint32_t turn = 0;
  std::string text;
};

struct AssembleOptions {
  std::string system_prompt;
  bool order_hints = true;
  Labeler labeler = default_labeler();
};

// Retrieval order of the docs that are prefilled this turn, when it differs
// from the prompt order; nullopt if the request was not reordered.
std::optional<std::vector<DocId>> reordered_priority(const RewrittenRequest& req);

// Fills req.order_hint and req.location_hints.
void attach_hints(RewrittenRequest& req, const AssembleOptions& options);

// [system] [history...] [docs / location hints] [order hint] [question].
// Empty system prompt and question are omitted.
// Location hints take the retrieval positions of the docs they replace.
PromptLayout assemble(const RewrittenRequest& req, const std::string& question,
                      std::span<const HistoryTurn> history, const AssembleOptions& options = {});

std::size_t whitespace_token_count(std::string_view text);

}  // namespace ctxreuse
