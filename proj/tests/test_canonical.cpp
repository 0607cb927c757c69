#include "doctest.h"

#include "json.hpp"

#include "hstc/canonical.hpp"

using hstc::canonical_json_string;
using hstc::fixture_key;
using hstc::fnv1a_hex;
using nlohmann::json;

TEST_CASE("objects serialize with sorted keys and no whitespace") {
    json value;
    value["zebra"] = 1;
    value["apple"] = json{{"y", 2}, {"x", 1}};
    value["mid"] = json::array({1, 2, 3});
    CHECK(canonical_json_string(value) == R"({"apple":{"x":1,"y":2},"mid":[1,2,3],"zebra":1})");
}

TEST_CASE("integral floats lose the decimal point") {
    CHECK(canonical_json_string(json(1.0)) == "1");
    CHECK(canonical_json_string(json(-4.0)) == "-4");
    CHECK(canonical_json_string(json(0.5)) == "0.5");
    CHECK(canonical_json_string(json(1)) == "1");
    // 2^53 is the first double whose integrality is no longer exact; it
    // keeps the float rendering.
    CHECK(canonical_json_string(json(9007199254740992.0)) != "9007199254740992");
    CHECK(canonical_json_string(json{{"a", 3.0}, {"b", 3}}) == R"({"a":3,"b":3})");
}

TEST_CASE("utf-8 passes through raw") {
    CHECK(canonical_json_string(json("聚氨酯")) == "\"聚氨酯\"");
}

TEST_CASE("fnv1a reference vectors") {
    // Published FNV-1a 64-bit digests.
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("fixture keys separate stage and input") {
    // The NUL separator keeps (stage, input) unambiguous: moving a byte
    // across the boundary changes the digest.
    CHECK(fixture_key("stage1", "ab") != fixture_key("stage1a", "b"));
    CHECK(fixture_key("s", "{}") == fixture_key("s", "{}"));
}

TEST_CASE("equivalent JSON canonicalizes to the same fixture key") {
    const json a = json::parse(R"({"b": 1.0, "a": {"y": [1, 2]}})");
    const json b = json::parse(R"({"a":{"y":[1,2]},"b":1})");
    CHECK(canonical_json_string(a) == canonical_json_string(b));
    CHECK(fixture_key("stage", canonical_json_string(a)) ==
          fixture_key("stage", canonical_json_string(b)));
}
