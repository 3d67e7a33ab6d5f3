#include <catch2/catch_amalgamated.hpp>

#include "deter/timeutil.hpp"

using deter::format_iso8601;
using deter::parse_iso8601;

TEST_CASE("known timestamps parse to the right epoch seconds") {
  // expected values computed with an independent calendar implementation
  struct Case {
    const char* text;
    long long epoch;
  } cases[] = {
      {"1970-01-01T00:00:00Z", 0},
      {"2000-01-01T00:00:00Z", 946684800},
      {"2020-02-29T12:34:56Z", 1582979696},
      {"1999-12-31T23:59:59Z", 946684799},
      {"2024-07-04T09:30:00Z", 1720085400},
      {"1969-12-31T23:59:59Z", -1},
  };
  for (const auto& c : cases) {
    auto ts = parse_iso8601(c.text);
    REQUIRE(ts.has_value());
    CHECK(*ts == c.epoch);
  }
}

TEST_CASE("format and parse round-trip") {
  for (long long ts : {0LL, 946684800LL, 1582979696LL, 1720085400LL}) {
    auto back = parse_iso8601(format_iso8601(ts));
    REQUIRE(back.has_value());
    CHECK(*back == ts);
  }
}

TEST_CASE("malformed timestamps are rejected") {
  CHECK_FALSE(parse_iso8601("").has_value());
  CHECK_FALSE(parse_iso8601("not a date").has_value());
  CHECK_FALSE(parse_iso8601("2020-13-01T00:00:00Z").has_value());
  CHECK_FALSE(parse_iso8601("2020-02-30T00:00:00Z").has_value());
  CHECK_FALSE(parse_iso8601("2020-01-01T25:00:00Z").has_value());
  CHECK_FALSE(parse_iso8601("2020-01-01").has_value());
  CHECK_FALSE(parse_iso8601("2021-02-29T00:00:00Z").has_value());
}

TEST_CASE("leap years are handled") {
  CHECK(parse_iso8601("2020-02-29T00:00:00Z").has_value());
  CHECK(parse_iso8601("2000-02-29T00:00:00Z").has_value());
  CHECK_FALSE(parse_iso8601("1900-02-29T00:00:00Z").has_value());
}
