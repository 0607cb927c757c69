#include "doctest.h"

#include <memory>

#include "json.hpp"

#include "hstc/canonical.hpp"
#include "hstc/errors.hpp"
#include "hstc/gateway.hpp"

#include "helpers.hpp"

using namespace hstc;
using nlohmann::json;

namespace {

ChatRequest request_for(const std::string& stage, const std::string& schema,
                        const json& input) {
    ChatRequest request;
    request.stage_name = stage;
    request.system_prompt = "system";
    request.user_prompt = "user";
    request.schema_id = schema;
    request.canonical_input = canonical_json_string(input);
    return request;
}

//! Gateway around a responder lambda with the default schema registry.
Gateway callback_gateway(CallbackBackend::Responder responder, int retries = 2) {
    return Gateway(std::make_unique<CallbackBackend>(std::move(responder)),
                   default_schema_registry(), retries);
}

const char* kAttributes =
    R"({"material":"steel","form":"sheet","function":"cover","end_use":"","features":[]})";

} // namespace

TEST_CASE("attempt keys suffix repair rounds only") {
    CHECK(attempt_key("abc", 1) == "abc");
    CHECK(attempt_key("abc", 2) == "abc#retry1");
    CHECK(attempt_key("abc", 3) == "abc#retry2");
}

TEST_CASE("code fences are stripped when they wrap the record") {
    CHECK(strip_code_fence("{\"a\":1}") == "{\"a\":1}");
    CHECK(strip_code_fence("```json\n{\"a\":1}\n```") == "{\"a\":1}");
    CHECK(strip_code_fence("```\n{\"a\":1}\n```\n") == "{\"a\":1}");
    // A trailing fence with content after it is not a wrapper.
    const std::string not_wrapped = "```\n{\"a\":1}\n```\ntrailing";
    CHECK(strip_code_fence(not_wrapped).find("trailing") != std::string::npos);
}

TEST_CASE("scripted backend serves content-addressed replies") {
    const json input = {{"description", "widget"}};
    const std::string base = fixture_key("stage1_extract", canonical_json_string(input));

    ScriptedBackend strict({{base, "{\"x\":1}"}}, /*strict=*/true);
    auto req = request_for("stage1_extract", "attributes.v1", input);
    CHECK(strict.complete(req, 1).text == "{\"x\":1}");
    CHECK(strict.complete(req, 1).key == base);

    // Unknown input in strict mode: typed miss carrying the digest it wanted.
    auto other = request_for("stage1_extract", "attributes.v1", {{"description", "other"}});
    try {
        strict.complete(other, 1);
        FAIL("expected FixtureMissingError");
    } catch (const FixtureMissingError& e) {
        CHECK(e.key == fixture_key("stage1_extract", other.canonical_input));
    }
}

TEST_CASE("non-strict lookups fall back to the stage-generic key") {
    ScriptedBackend loose({{"stage:stage1_extract", "{\"generic\":true}"}}, /*strict=*/false);
    auto req = request_for("stage1_extract", "attributes.v1", {{"description", "anything"}});
    CHECK(loose.complete(req, 1).text == "{\"generic\":true}");
    // Retry rounds use the suffixed generic key, which is absent here.
    CHECK_THROWS_AS(loose.complete(req, 2), FixtureMissingError);
}

TEST_CASE("recording backend freezes replies and rejects conflicts") {
    int calls = 0;
    CallbackBackend inner([&](const ChatRequest&, int) {
        ++calls;
        return std::string("{\"n\":1}");
    });
    RecordingBackend recorder(inner);
    auto req = request_for("stage1_extract", "attributes.v1", {{"description", "w"}});
    recorder.complete(req, 1);
    recorder.complete(req, 1); // same key, same text: fine
    CHECK(recorder.recorded().size() == 1);

    CallbackBackend flaky([&](const ChatRequest&, int) {
        ++calls;
        return std::string("{\"n\":") + std::to_string(calls) + "}";
    });
    RecordingBackend flaky_recorder(flaky);
    flaky_recorder.complete(req, 1);
    CHECK_THROWS_AS(flaky_recorder.complete(req, 1), GatewayError);
}

TEST_CASE("repair loop retries with the violation appended") {
    std::vector<std::string> prompts_seen;
    Gateway gateway = callback_gateway([&](const ChatRequest& request, int attempt) {
        prompts_seen.push_back(request.user_prompt);
        if (attempt == 1) {
            return std::string("not json at all");
        }
        if (attempt == 2) {
            return std::string(R"({"keep":["9999","9999"]})"); // schema violation: dup
        }
        return std::string(R"({"keep":["3919"]})");
    });

    auto req = request_for("stage3_l1", "shortlist.v1", {{"candidates", json::array()}});
    const StructuredReply reply = gateway.complete_structured(req);
    CHECK(reply.attempts == 3);
    CHECK(reply.value["keep"][0] == "3919");
    CHECK(reply.key == attempt_key(fixture_key("stage3_l1", req.canonical_input), 3));

    REQUIRE(prompts_seen.size() == 3);
    CHECK(prompts_seen[0] == "user");
    CHECK(prompts_seen[1].find("rejected") != std::string::npos);
    CHECK(prompts_seen[2].find("rejected") != std::string::npos);
    // Each round rebuilds from the original prompt; rejections do not stack.
    CHECK(prompts_seen[2].find("user") == 0);
}

TEST_CASE("persistent violations raise a typed error with all attempts") {
    Gateway gateway = callback_gateway(
        [](const ChatRequest&, int) { return std::string("{\"keep\":[]}"); }, 1);
    auto req = request_for("stage3_l1", "shortlist.v1", json::object());
    try {
        gateway.complete_structured(req);
        FAIL("expected SchemaViolationError");
    } catch (const SchemaViolationError& e) {
        CHECK(e.stage == "stage3_l1");
        CHECK(e.raw_attempts.size() == 2); // first try + one repair
        CHECK(std::string(e.what()).find("stage3_l1") != std::string::npos);
    }
}

TEST_CASE("extra validators join the repair loop") {
    Gateway gateway = callback_gateway([](const ChatRequest&, int attempt) {
        return attempt == 1 ? std::string(R"({"keep":["8888"]})")
                            : std::string(R"({"keep":["3919"]})");
    });
    auto req = request_for("stage3_l1", "shortlist.v1", json::object());
    const auto only_3919 = [](const json& value) -> std::optional<std::string> {
        if (value["keep"][0] != "3919") {
            return "code is not among the candidates";
        }
        return std::nullopt;
    };
    const StructuredReply reply = gateway.complete_structured(req, only_3919);
    CHECK(reply.attempts == 2);
}

// ---------------------------------------------------------------------------
// Schema registry details
// ---------------------------------------------------------------------------

TEST_CASE("attributes schema pins the key set") {
    const SchemaRegistry schemas = default_schema_registry();
    CHECK(schemas.validate("attributes.v1", json::parse(kAttributes)) == std::nullopt);

    auto extra_key = json::parse(kAttributes);
    extra_key["color"] = "red";
    CHECK(schemas.validate("attributes.v1", extra_key).has_value());

    auto missing = json::parse(kAttributes);
    missing.erase("form");
    CHECK(schemas.validate("attributes.v1", missing).has_value());

    auto with_brand = json::parse(kAttributes);
    with_brand["origin_brand"] = nullptr;
    CHECK(schemas.validate("attributes.v1", with_brand) == std::nullopt);
    with_brand["origin_brand"] = 7;
    CHECK(schemas.validate("attributes.v1", with_brand).has_value());
}

TEST_CASE("l2 verdict schema enforces chosen membership") {
    const SchemaRegistry schemas = default_schema_registry();
    json verdict = {
        {"keep_final", json::array({"3919"})},
        {"demotions", json::array()},
        {"confirmation",
         {{"chosen", "3919"},
          {"pros", json::array()},
          {"cons", json::array()},
          {"gir_clauses", json::array({"GIR1"})}}},
    };
    CHECK(schemas.validate("l2_verdict.v1", verdict) == std::nullopt);
    verdict["confirmation"]["chosen"] = "3920";
    CHECK(schemas.validate("l2_verdict.v1", verdict).has_value());
}

TEST_CASE("subheading schema ties eight digits to six and to ambiguity") {
    const SchemaRegistry schemas = default_schema_registry();
    json value = {{"six_digit", "391990"},
                  {"ambiguous", false},
                  {"gir_clauses", json::array({"GIR6"})}};
    CHECK(schemas.validate("subheading.v1", value) == std::nullopt);

    value["eight_digit"] = "39199010";
    CHECK(schemas.validate("subheading.v1", value) == std::nullopt);

    value["eight_digit"] = "39209010"; // prefix mismatch
    CHECK(schemas.validate("subheading.v1", value).has_value());

    value["eight_digit"] = "39199010";
    value["ambiguous"] = true; // ambiguity forbids national resolution
    CHECK(schemas.validate("subheading.v1", value).has_value());
}

TEST_CASE("final schema checks spans against the quote") {
    const SchemaRegistry schemas = default_schema_registry();
    json decision = {{"top3", json::array({json{
                         {"code", "391990"},
                         {"confidence", 0.9},
                         {"pros", json::array()},
                         {"cons", json::array()},
                         {"gir_clauses", json::array({"GIR1"})},
                         {"citations", json::array({json{{"clause_id", "c"},
                                                         {"quoted_text", "short"},
                                                         {"span", json::array({0, 5})}}})},
                     }})}};
    CHECK(schemas.validate("final.v1", decision) == std::nullopt);
    decision["top3"][0]["citations"][0]["span"] = json::array({0, 6}); // past the end
    CHECK(schemas.validate("final.v1", decision).has_value());
    decision["top3"][0]["citations"][0]["span"] = json::array({3, 3}); // empty
    CHECK(schemas.validate("final.v1", decision).has_value());
}

TEST_CASE("scripted gateway from config needs a fixture path") {
    BackendConfig config;
    config.kind = BackendKind::Scripted;
    CHECK_THROWS_AS(Gateway::from_config(config), ConfigError);
    config.fixture_path = hstc_tests::repo_path("fixtures/golden.jsonl");
    CHECK_NOTHROW(Gateway::from_config(config));
}

TEST_CASE("http backend validates its config without touching the network") {
    BackendConfig config;
    config.kind = BackendKind::Http;
    CHECK_THROWS_AS(HttpBackend{config}, ConfigError); // no endpoint
    config.endpoint = "http://localhost:1/v1";
    CHECK_THROWS_AS(HttpBackend{config}, ConfigError); // no model
    config.model_name = "m";
    CHECK_NOTHROW(HttpBackend{config});
}
