#include "ctxreuse/distance.hpp"

#include <algorithm>
#include <string>

#include "ctxreuse/error.hpp"

namespace ctxreuse {

void DistanceParams::validate() const {
  if (!(alpha >= 0.0)) {
    throw PreconditionError("alpha must be non-negative");
  }
  if (!allow_out_of_band && (alpha < kMinAlpha || alpha > kMaxAlpha)) {
    throw PreconditionError("alpha " + std::to_string(alpha) +
                            " is outside [0.001, 0.01]; set allow_out_of_band to override");
  }
}

PositionedDocs::PositionedDocs(std::span<const DocId> docs) {
  entries_.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) entries_.push_back({docs[i], i});
  std::sort(entries_.begin(), entries_.end(),
            [](const Entry& x, const Entry& y) { return x.doc < y.doc; });
}

bool PositionedDocs::contains(DocId doc) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), doc,
                             [](const Entry& e, DocId d) { return e.doc < d; });
  return it != entries_.end() && it->doc == doc;
}

Overlap overlap(const PositionedDocs& a, const PositionedDocs& b) {
  Overlap out;
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
      ++out.shared;
      out.displacement += ea[i].pos > eb[j].pos ? ea[i].pos - eb[j].pos : eb[j].pos - ea[i].pos;
      ++i;
      ++j;
    }
  }
  return out;
}

Overlap overlap(std::span<const DocId> a, const PositionedDocs& b) {
  Overlap out;
  const auto& eb = b.entries();
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto it = std::lower_bound(eb.begin(), eb.end(), a[i],
                               [](const PositionedDocs::Entry& e, DocId d) { return e.doc < d; });
    if (it == eb.end() || it->doc != a[i]) continue;
    ++out.shared;
    out.displacement += i > it->pos ? i - it->pos : it->pos - i;
  }
  return out;
}

double distance_from_overlap(const Overlap& o, std::size_t len_a, std::size_t len_b,
                             double alpha) {
  if (o.shared == 0) return 1.0;
  const double longest = static_cast<double>(std::max(len_a, len_b));
  const double shared = static_cast<double>(o.shared);
  return 1.0 - shared / longest + alpha * static_cast<double>(o.displacement) / shared;
}

double context_distance(std::span<const DocId> a, std::span<const DocId> b,
                        const DistanceParams& params) {
  if (a.empty() || b.empty()) {
    throw PreconditionError("context_distance requires non-empty contexts");
  }
  const PositionedDocs pa(a);
  const PositionedDocs pb(b);
  return distance_from_overlap(overlap(pa, pb), a.size(), b.size(), params.alpha);
}

double context_distance(const Context& a, const Context& b, const DistanceParams& params) {
  return context_distance(std::span<const DocId>(a.docs), std::span<const DocId>(b.docs),
                          params);
}

DistanceMatrix pairwise_distances(std::span<const Context> contexts,
                                  const DistanceParams& params) {
  if (contexts.size() < 2) {
    throw PreconditionError("pairwise_distances requires at least two contexts");
  }
  const std::size_t n = contexts.size();
  std::vector<PositionedDocs> positioned;
  positioned.reserve(n);
  for (const Context& ctx : contexts) {
    if (ctx.docs.empty()) {
      throw PreconditionError("pairwise_distances requires non-empty contexts");
    }
    positioned.emplace_back(ctx.docs);
  }
  DistanceMatrix m{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = distance_from_overlap(overlap(positioned[i], positioned[j]),
                                             contexts[i].docs.size(),
                                             contexts[j].docs.size(), params.alpha);
      m.values[i * n + j] = d;
      m.values[j * n + i] = d;
    }
  }
  return m;
}

}  // namespace ctxreuse
