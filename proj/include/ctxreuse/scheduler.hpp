#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxreuse/ordering.hpp"

namespace ctxreuse {

struct Schedule {
  std::vector<std::size_t> order;                // permutation of batch indices
  std::vector<std::vector<std::size_t>> groups;  // in emission order
};

// Groups requests by the first step of their search path so requests that
// share a cache region run back to back. Within a group, longer paths
// (deeper matches) run first; ties keep input order. Groups are emitted in
// order of first appearance. Requests with an empty path are singletons.
Schedule schedule(std::span<const OrderedContext> batch);

Schedule schedule_paths(std::span<const SearchPath> paths);

}  // namespace ctxreuse
