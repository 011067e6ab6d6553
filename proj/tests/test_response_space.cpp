#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "darlab/response_space.hpp"

using namespace darlab;

namespace {

// Independent odometer enumeration of fixed-length sequences.
std::set<std::vector<std::int32_t>> odometer_fixed(int vocab, int len) {
  std::set<std::vector<std::int32_t>> out;
  std::vector<std::int32_t> seq(len, 0);
  while (true) {
    out.insert(seq);
    int i = len - 1;
    while (i >= 0 && ++seq[i] == vocab) {
      seq[i] = 0;
      --i;
    }
    if (i < 0) break;
  }
  return out;
}

}  // namespace

TEST_CASE("fixed-length enumeration base cases") {
  CHECK(enumerate_responses(2, 1).size() == 2);

  const ResponseSpace space = enumerate_responses(2, 2);
  REQUIRE(space.size() == 4);
  CHECK(space.response(0) == std::vector<std::int32_t>{0, 0});
  CHECK(space.response(1) == std::vector<std::int32_t>{0, 1});
  CHECK(space.response(2) == std::vector<std::int32_t>{1, 0});
  CHECK(space.response(3) == std::vector<std::int32_t>{1, 1});
}

TEST_CASE("fixed-length enumeration matches an independent oracle") {
  const ResponseSpace space = enumerate_responses(4, 3);
  const auto expected = odometer_fixed(4, 3);
  REQUIRE(space.size() == expected.size());
  CHECK(space.size() == 64);
  std::set<std::vector<std::int32_t>> got(space.responses().begin(),
                                          space.responses().end());
  CHECK(got == expected);
  CHECK(std::is_sorted(space.responses().begin(), space.responses().end()));
}

TEST_CASE("end-token enumeration covers every length once") {
  const ResponseSpace space = enumerate_responses(2, 2, SpaceMode::kEndToken);
  REQUIRE(space.size() == 6);  // 2 + 4
  CHECK(space.response(0) == std::vector<std::int32_t>{0});
  CHECK(space.response(1) == std::vector<std::int32_t>{0, 0});
  CHECK(space.response(2) == std::vector<std::int32_t>{0, 1});
  CHECK(space.response(3) == std::vector<std::int32_t>{1});
  CHECK(space.response(4) == std::vector<std::int32_t>{1, 0});
  CHECK(space.response(5) == std::vector<std::int32_t>{1, 1});

  const ResponseSpace big = enumerate_responses(3, 3, SpaceMode::kEndToken);
  CHECK(big.size() == 3 + 9 + 27);
  std::set<std::vector<std::int32_t>> unique(big.responses().begin(),
                                             big.responses().end());
  CHECK(unique.size() == big.size());
}

TEST_CASE("truncated responses are the full-length ones") {
  const ResponseSpace space = enumerate_responses(2, 2, SpaceMode::kEndToken);
  for (std::size_t y = 0; y < space.size(); ++y) {
    CHECK(space.is_truncated(y) == (space.response(y).size() == 2));
  }
  const ResponseSpace fixed = enumerate_responses(2, 2);
  for (std::size_t y = 0; y < fixed.size(); ++y) {
    CHECK_FALSE(fixed.is_truncated(y));
  }
}

TEST_CASE("enumeration cap error names the cap") {
  try {
    enumerate_responses(10, 7, SpaceMode::kFixedLength, 1000);
    FAIL("expected EnumerationError");
  } catch (const EnumerationError& e) {
    CHECK(std::string(e.what()).find("1000") != std::string::npos);
  }
  CHECK_THROWS_AS(enumerate_responses(0, 2), ParameterError);
}

TEST_CASE("descendant ranges agree with a linear scan") {
  for (SpaceMode mode : {SpaceMode::kFixedLength, SpaceMode::kEndToken}) {
    const ResponseSpace space = enumerate_responses(3, 3, mode);
    const std::vector<std::vector<std::int32_t>> prefixes = {
        {}, {0}, {1}, {2}, {0, 1}, {2, 2}, {1, 0, 2}};
    for (const auto& prefix : prefixes) {
      const auto [lo, hi] = space.descendant_range(prefix);
      for (std::size_t y = 0; y < space.size(); ++y) {
        const auto& r = space.response(y);
        const bool extends =
            r.size() >= prefix.size() &&
            std::equal(prefix.begin(), prefix.end(), r.begin());
        const bool in_range = y >= lo && y < hi;
        CHECK(extends == in_range);
      }
    }
  }
}

TEST_CASE("index_of inverts the enumeration") {
  const ResponseSpace space = enumerate_responses(3, 2, SpaceMode::kEndToken);
  for (std::size_t y = 0; y < space.size(); ++y) {
    CHECK(space.index_of(space.response(y)) == y);
  }
  const std::vector<std::int32_t> missing = {0, 0, 0};
  CHECK_THROWS_AS(space.index_of(missing), IndexError);
}

TEST_CASE("contexts enumerate prefixes up to max_len - 1") {
  const ResponseSpace space = enumerate_responses(2, 2);
  REQUIRE(space.context_count() == 3);  // {}, {0}, {1}
  CHECK(space.context(0).empty());
  CHECK(space.context_of(std::vector<std::int32_t>{1}) == 2);
  CHECK(space.tokens_per_context() == 2);
  const ResponseSpace et = enumerate_responses(2, 2, SpaceMode::kEndToken);
  CHECK(et.tokens_per_context() == 3);
  CHECK(et.end_token() == 2);
}
