#include <doctest.h>

#include "ctxreuse/error.hpp"
#include "ctxreuse/types.hpp"
#include "support.hpp"

using namespace ctxreuse;
using testing::ctx;
using testing::ids;

TEST_CASE("context validation") {
  CHECK_NOTHROW(ctx({1, 2, 3}).validate());
  CHECK_NOTHROW(Context{}.validate());
  CHECK_THROWS_AS(ctx({1, 2, 1}).validate(), PreconditionError);

  Context missing = ctx({1, 2});
  missing.token_counts.erase(DocId{2});
  CHECK_THROWS_AS(missing.validate(), PreconditionError);

  Context zero = ctx({1, 2});
  zero.token_counts[DocId{1}] = 0;
  CHECK_THROWS_AS(zero.validate(), PreconditionError);
}

TEST_CASE("token accounting") {
  Context c = make_context(ids({4, 5}), 100, "s", 3);
  c.token_counts[DocId{5}] = 7;
  CHECK(c.tokens_of(DocId{4}) == 100);
  CHECK(c.total_tokens() == 107);
  CHECK(c.session_id == "s");
  CHECK(c.turn == 3);
  CHECK_THROWS_AS(c.tokens_of(DocId{9}), PreconditionError);
  CHECK(make_context(ids({1})).tokens_of(DocId{1}) == kDefaultDocTokens);
}

TEST_CASE("search paths") {
  const SearchPath p = testing::path({0, 2});
  CHECK(to_string(p) == "[0,2]");
  CHECK(to_string(SearchPath{}) == "[]");
  CHECK(p.extended(1) == testing::path({0, 2, 1}));
  CHECK(p.size() == 2);
  CHECK(testing::path({0, 1}) < testing::path({0, 2}));
  CHECK(testing::path({0}) < testing::path({0, 0}));
}

TEST_CASE("rewritten request conservation") {
  RewrittenRequest r;
  r.original = ctx({1, 5, 2});
  r.ordered_docs = ids({5});
  r.dedup_refs = {{DocId{1}, 0}, {DocId{2}, 0}};
  CHECK_NOTHROW(r.check_conservation());

  r.dedup_refs.pop_back();
  CHECK_THROWS_AS(r.check_conservation(), ValidationError);

  r.ordered_docs = ids({5, 2, 2});
  r.dedup_refs = {{DocId{1}, 0}};
  CHECK_THROWS_AS(r.check_conservation(), ValidationError);

  r.ordered_docs = ids({5, 2, 9});
  CHECK_THROWS_AS(r.check_conservation(), ValidationError);
}

TEST_CASE("error codes are stable") {
  CHECK(PreconditionError("x").code() == "precondition");
  CHECK(InvalidPathError("x").code() == "invalid_path");
  CHECK(UnknownSessionError("s1").code() == "unknown_session");
  CHECK(std::string(UnknownSessionError("s1").what()).find("s1") != std::string::npos);
  CHECK(OverCapacityError("x").code() == "over_capacity");
  CHECK(ParseError("x").code() == "parse");
  CHECK(ValidationError("x").code() == "validation");
  CHECK(IoError("x").code() == "io");
}

TEST_CASE("live children skip tombstones") {
  IndexNode n;
  n.children = {NodeId{1}, kNoNode, NodeId{3}};
  CHECK(n.live_children() == 2);
}
