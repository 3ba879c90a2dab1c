#include "ctxreuse/scheduler.hpp"

#include <algorithm>
#include <unordered_map>

namespace ctxreuse {

Schedule schedule_paths(std::span<const SearchPath> paths) {
  Schedule out;
  std::unordered_map<std::uint32_t, std::size_t> group_of_root;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (paths[i].empty()) {
      out.groups.push_back({i});
      continue;
    }
    auto [it, fresh] = group_of_root.try_emplace(paths[i].steps.front(), out.groups.size());
    if (fresh) out.groups.emplace_back();
    out.groups[it->second].push_back(i);
  }
  for (auto& group : out.groups) {
    std::stable_sort(group.begin(), group.end(), [&](std::size_t a, std::size_t b) {
      return paths[a].size() > paths[b].size();
    });
    out.order.insert(out.order.end(), group.begin(), group.end());
  }
  return out;
}

Schedule schedule(std::span<const OrderedContext> batch) {
  std::vector<SearchPath> paths;
  paths.reserve(batch.size());
  for (const OrderedContext& oc : batch) paths.push_back(oc.path);
  return schedule_paths(paths);
}

}  // namespace ctxreuse
