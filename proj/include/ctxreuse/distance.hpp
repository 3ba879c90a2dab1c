#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxreuse/types.hpp"

namespace ctxreuse {

struct DistanceParams {
  // Weight of the positional displacement term. The supported band keeps
  // overlap count dominant; values outside it need `allow_out_of_band`.
  double alpha = 0.005;
  bool allow_out_of_band = false;

  static constexpr double kMinAlpha = 0.001;
  static constexpr double kMaxAlpha = 0.01;

  void validate() const;
};

// Distance between two retrieval orders: one minus the overlap fraction
// (relative to the longer list), plus alpha times the mean absolute
// position shift of the shared documents. Positions are 0-based. Disjoint
// lists are exactly 1.
double context_distance(std::span<const DocId> a, std::span<const DocId> b,
                        const DistanceParams& params = {});

double context_distance(const Context& a, const Context& b,
                        const DistanceParams& params = {});

// Row-major symmetric n x n matrix.
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

DistanceMatrix pairwise_distances(std::span<const Context> contexts,
                                  const DistanceParams& params = {});

// Sorted (doc, position) pairs of a document list; lets repeated distance
// evaluations against the same list run as a linear merge.
class PositionedDocs {
 public:
  PositionedDocs() = default;
  explicit PositionedDocs(std::span<const DocId> docs);

  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(DocId doc) const;

  struct Entry {
    DocId doc;
    std::size_t pos;
  };
  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
};

struct Overlap {
  std::size_t shared = 0;
  std::size_t displacement = 0;  // sum of |pos_a - pos_b| over shared docs
};

Overlap overlap(const PositionedDocs& a, const PositionedDocs& b);

// Same as above without materializing a PositionedDocs for `a`.
Overlap overlap(std::span<const DocId> a, const PositionedDocs& b);

double distance_from_overlap(const Overlap& o, std::size_t len_a, std::size_t len_b,
                             double alpha);

}  // namespace ctxreuse
