#include <doctest.h>

#include "ctxreuse/context_index.hpp"
#include "ctxreuse/error.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace ctxreuse;
using testing::ctx;
using testing::ids;
using testing::path;

namespace {

std::vector<std::uint64_t> context_at(const ContextIndex& index, const SearchPath& p) {
  return testing::raws(index.traverse(p).context);
}

}  // namespace

TEST_CASE("worked example tree") {
  const auto cs = testing::example_contexts();
  const ContextIndex index = ContextIndex::build(cs);

  REQUIRE(index.root().live_children() == 1);
  const IndexNode& top = index.traverse(path({0}));
  CHECK(top.is_virtual);
  CHECK(testing::raws(top.context) == std::vector<std::uint64_t>{1});
  REQUIRE(top.children.size() == 2);

  const IndexNode& pair = index.traverse(path({0, 0}));
  CHECK(pair.is_virtual);
  CHECK(testing::raws(pair.context) == std::vector<std::uint64_t>{1, 2});

  CHECK(context_at(index, path({0, 0, 0})) == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(context_at(index, path({0, 0, 1})) == std::vector<std::uint64_t>{1, 2, 6});
  CHECK(context_at(index, path({0, 1})) == std::vector<std::uint64_t>{1, 4, 0});
  CHECK_FALSE(index.traverse(path({0, 1})).is_virtual);

  CHECK(index.path_of(index.build_leaves()[0]) == path({0, 0, 0}));
  CHECK(index.path_of(index.build_leaves()[1]) == path({0, 0, 1}));
  CHECK(index.path_of(index.build_leaves()[2]) == path({0, 1}));
  CHECK(index.leaf_count() == 3);
  CHECK(index.height() == 3);
  testing::check_prefix_integrity(index);
}

TEST_CASE("search and insert on the worked example") {
  ContextIndex index = ContextIndex::build(testing::example_contexts());
  const SearchResult r = index.search(ctx({2, 1, 4}));
  CHECK(r.path == path({0, 0}));
  CHECK(testing::raws(r.shared_prefix) == std::vector<std::uint64_t>{1, 2});
  CHECK(r.node == index.traverse(path({0, 0})).id);

  const SearchPath leaf = index.insert(ctx({2, 1, 4}), r);
  CHECK(leaf == path({0, 0, 2}));
  CHECK(context_at(index, leaf) == std::vector<std::uint64_t>{1, 2, 4});
  testing::check_prefix_integrity(index);
}

TEST_CASE("stale search results are rejected") {
  ContextIndex index = ContextIndex::build(testing::example_contexts());
  const SearchResult r = index.search(ctx({2, 1, 4}));
  index.add(ctx({5, 7, 8}));
  CHECK_THROWS_AS(index.insert(ctx({2, 1, 4}), r), InvalidPathError);
}

TEST_CASE("insert splits a partially matched leaf") {
  ContextIndex index = ContextIndex::build(testing::example_contexts());
  const NodeId c3 = index.build_leaves()[2];
  const SearchResult r = index.search(ctx({4, 7, 1}));
  CHECK(r.node == c3);
  CHECK(testing::raws(r.shared_prefix) == std::vector<std::uint64_t>{1, 4});

  const SearchPath leaf = index.insert(ctx({4, 7, 1}), r);
  CHECK(leaf == path({0, 1, 1}));
  CHECK(context_at(index, path({0, 1})) == std::vector<std::uint64_t>{1, 4});
  CHECK(index.traverse(path({0, 1})).is_virtual);
  CHECK(index.path_of(c3) == path({0, 1, 0}));
  CHECK(context_at(index, leaf) == std::vector<std::uint64_t>{1, 4, 7});
  testing::check_prefix_integrity(index);
}

TEST_CASE("disjoint contexts become separate root branches") {
  ContextIndex index = ContextIndex::build(std::vector<Context>{ctx({1, 2}), ctx({3, 4}), ctx({2, 5})});
  CHECK(index.root().live_children() == 2);
  const SearchPath p = index.add(ctx({8, 9}));
  CHECK(p == path({2}));
  CHECK(context_at(index, p) == std::vector<std::uint64_t>{8, 9});
}

TEST_CASE("single context build") {
  const ContextIndex index = ContextIndex::build(std::vector<Context>{ctx({3, 1})});
  CHECK(context_at(index, path({0})) == std::vector<std::uint64_t>{3, 1});
  CHECK_THROWS_AS(ContextIndex::build(std::vector<Context>{}), PreconditionError);
  CHECK_THROWS_AS(ContextIndex::build(std::vector<Context>{ctx({1, 1})}), PreconditionError);
}

TEST_CASE("identical contexts share one virtual parent") {
  const ContextIndex index =
      ContextIndex::build(std::vector<Context>{ctx({1, 2}), ctx({2, 1}), ctx({1, 2})});
  testing::check_prefix_integrity(index);
  CHECK(index.leaf_count() == 3);
  CHECK(index.traverse(path({0})).is_virtual);
  CHECK(index.traverse(path({0})).live_children() == 3);
}

TEST_CASE("cache events move tokens and evict least recently used") {
  ContextIndex index = ContextIndex::build(testing::example_contexts());
  index.apply(AppendedEvent{path({0, 0, 0}), 3});
  index.apply(AppendedEvent{path({0, 0, 1}), 3});
  CHECK(index.total_seq_len() == 6);
  index.apply(AccessedEvent{path({0, 0, 0})});

  // C2 is now the least recently used.
  index.apply(EvictedEvent{3});
  CHECK(index.total_seq_len() == 3);
  CHECK_FALSE(index.alive(index.build_leaves()[1]));
  CHECK(index.path_of(index.build_leaves()[0]) == path({0, 0, 0}));
  CHECK_THROWS_AS(index.traverse(path({0, 0, 1})), InvalidPathError);

  // Pending leaves are never evicted; the partially drained node stays.
  index.apply(EvictedEvent{1});
  CHECK(index.node(index.build_leaves()[0]).seq_len == 2);
  CHECK(index.alive(index.build_leaves()[2]));

  // Draining the last node also prunes ancestors left without children...
  index.apply(EvictedEvent{100});
  CHECK(index.total_seq_len() == 0);
  CHECK_FALSE(index.alive(index.build_leaves()[0]));
  CHECK_FALSE(index.alive(index.traverse(path({0})).children[0]));
  // ...but not ones with other live descendants.
  CHECK(index.alive(index.build_leaves()[2]));
  testing::check_prefix_integrity(index);
}

TEST_CASE("events against missing paths fail") {
  ContextIndex index = ContextIndex::build(testing::example_contexts());
  CHECK_THROWS_AS(index.apply(AppendedEvent{path({7}), 1}), InvalidPathError);
  CHECK_THROWS_AS(index.apply(EvictedEvent{-1}), PreconditionError);
}

TEST_CASE("multi-turn flag") {
  ContextIndex index = ContextIndex::build(testing::example_contexts());
  index.set_multi_turn(path({0, 1}));
  CHECK(index.traverse(path({0, 1})).multi_turn);
  CHECK_THROWS_AS(index.set_multi_turn(path({3})), InvalidPathError);
}

TEST_CASE("snapshot round trip") {
  ContextIndex index = ContextIndex::build(testing::example_contexts());
  index.add(ctx({4, 7, 1}));
  index.apply(AppendedEvent{path({0, 0, 1}), 5});
  index.apply(EvictedEvent{5});
  index.set_multi_turn(path({0, 0, 0}));

  const nlohmann::json snap = index.to_json();
  ContextIndex back = ContextIndex::from_json(snap);
  CHECK(back.to_json() == snap);
  // Tombstoned slots survive, so the next insert lands where it would have.
  ContextIndex a = index;
  CHECK(a.add(ctx({2, 1, 9})) == back.add(ctx({2, 1, 9})));
  CHECK_THROWS_AS(ContextIndex::from_json(nlohmann::json::object()), ParseError);
}

TEST_CASE("prefix helpers") {
  const PositionedDocs q(ids({2, 1, 4}));
  CHECK(shared_prefix_length(ids({1, 2, 3}), q) == 2);
  CHECK(shared_prefix_length(ids({3, 1}), q) == 0);
  CHECK(testing::raws(prefix_first(ids({1, 2}), ids({2, 9, 1, 4}))) == std::vector<std::uint64_t>{1, 2, 9, 4});
}

TEST_CASE("randomized structural properties") {
  CHECK(testing::prop_index_events(300, 11) == 0);
  CHECK(testing::prop_search_local_optimality(300, 12) == 0);
}
