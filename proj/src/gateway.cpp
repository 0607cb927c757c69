#include "hstc/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <utility>

#include "httplib.h"

#include "hstc/errors.hpp"

namespace hstc {

using nlohmann::json;

std::string attempt_key(const std::string& base_key, int attempt) {
    if (attempt <= 1) {
        return base_key;
    }
    return base_key + "#retry" + std::to_string(attempt - 1);
}

// ===========================================================================
// ScriptedBackend
// ===========================================================================

ScriptedBackend::ScriptedBackend(std::unordered_map<std::string, std::string> fixtures,
                                 bool strict)
    : fixtures_(std::move(fixtures)), strict_(strict) {}

ScriptedBackend ScriptedBackend::from_file(const std::string& path, bool strict) {
    std::ifstream in(path);
    if (!in) {
        throw GatewayError("cannot open fixture file: " + path);
    }
    std::unordered_map<std::string, std::string> fixtures;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw GatewayError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!record.is_object() || !record.contains("key") || !record["key"].is_string() ||
            !record.contains("response_text") || !record["response_text"].is_string()) {
            throw GatewayError(path + ":" + std::to_string(line_no) +
                               ": expected {\"key\": ..., \"response_text\": ...}");
        }
        const std::string key = record["key"].get<std::string>();
        if (!fixtures.emplace(key, record["response_text"].get<std::string>()).second) {
            throw GatewayError(path + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                               "'");
        }
    }
    return ScriptedBackend(std::move(fixtures), strict);
}

BackendReply ScriptedBackend::complete(const ChatRequest& request, int attempt) {
    const std::string digest = attempt_key(fixture_key(request.stage_name, request.canonical_input),
                                           attempt);
    auto it = fixtures_.find(digest);
    if (it != fixtures_.end()) {
        return BackendReply{it->second, digest};
    }
    if (!strict_) {
        const std::string fallback = attempt_key("stage:" + request.stage_name, attempt);
        auto fb = fixtures_.find(fallback);
        if (fb != fixtures_.end()) {
            return BackendReply{fb->second, fallback};
        }
    }
    throw FixtureMissingError(digest, "no scripted response for key '" + digest + "' (stage " +
                                          request.stage_name + ")");
}

// ===========================================================================
// HttpBackend
// ===========================================================================

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty() || config_.model_name.empty()) {
        throw ConfigError("http backend requires endpoint and model_name");
    }
    if (config_.endpoint.find("://") == std::string::npos) {
        throw ConfigError("endpoint must include a scheme: " + config_.endpoint);
    }
}

BackendReply HttpBackend::complete(const ChatRequest& request, int attempt) {
    const std::string& endpoint = config_.endpoint;
    const std::size_t scheme_pos = endpoint.find("://");
    const std::size_t path_pos = endpoint.find('/', scheme_pos + 3);
    std::string base = path_pos == std::string::npos ? endpoint : endpoint.substr(0, path_pos);
    std::string prefix = path_pos == std::string::npos ? "" : endpoint.substr(path_pos);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }

    httplib::Client client(base);
    const time_t timeout_s = config_.timeout_ms / 1000;
    const time_t timeout_us = (config_.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(timeout_s, timeout_us);
    client.set_read_timeout(timeout_s, timeout_us);
    client.set_write_timeout(timeout_s, timeout_us);

    httplib::Headers headers;
    if (!config_.auth_env_var.empty()) {
        const char* token = std::getenv(config_.auth_env_var.c_str());
        if (token != nullptr && *token != '\0') {
            headers.emplace("Authorization", std::string("Bearer ") + token);
        }
    }

    const json body = {
        {"model", config_.model_name},
        {"messages",
         json::array({json{{"role", "system"}, {"content", request.system_prompt}},
                      json{{"role", "user"}, {"content", request.user_prompt}}})},
        {"temperature", request.temperature},
    };

    auto result = client.Post(prefix + "/chat/completions", headers, body.dump(),
                              "application/json");
    if (!result) {
        throw TransportError("no response from " + endpoint + ": " +
                             httplib::to_string(result.error()));
    }
    if (result->status < 200 || result->status >= 300) {
        throw TransportError("http status " + std::to_string(result->status) + " from " +
                             endpoint);
    }
    json parsed = json::parse(result->body, nullptr, false);
    if (parsed.is_discarded()) {
        throw TransportError("completion response body is not parseable");
    }
    if (!parsed.contains("choices") || !parsed["choices"].is_array() ||
        parsed["choices"].empty()) {
        throw TransportError("completion response has no choices");
    }
    const json& first = parsed["choices"][0];
    if (!first.contains("message") || !first["message"].is_object() ||
        !first["message"].contains("content") || !first["message"]["content"].is_string()) {
        throw TransportError("completion response missing message content");
    }
    return BackendReply{
        first["message"]["content"].get<std::string>(),
        attempt_key(fixture_key(request.stage_name, request.canonical_input), attempt)};
}

// ===========================================================================
// CallbackBackend / RecordingBackend
// ===========================================================================

CallbackBackend::CallbackBackend(Responder responder) : responder_(std::move(responder)) {
    if (!responder_) {
        throw GatewayError("callback backend requires a responder");
    }
}

BackendReply CallbackBackend::complete(const ChatRequest& request, int attempt) {
    return BackendReply{
        responder_(request, attempt),
        attempt_key(fixture_key(request.stage_name, request.canonical_input), attempt)};
}

RecordingBackend::RecordingBackend(Backend& inner) : inner_(inner) {}

BackendReply RecordingBackend::complete(const ChatRequest& request, int attempt) {
    BackendReply reply = inner_.complete(request, attempt);
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, inserted] = recorded_.emplace(reply.key, reply.text);
    if (!inserted && it->second != reply.text) {
        throw GatewayError("conflicting responses recorded for key '" + reply.key + "'");
    }
    return reply;
}

std::map<std::string, std::string> RecordingBackend::recorded() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return recorded_;
}

void RecordingBackend::write_fixture_file(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw GatewayError("cannot write fixture file: " + path);
    }
    for (const auto& [key, text] : recorded()) {
        json record;
        record["key"] = key;
        record["response_text"] = text;
        out << record.dump() << '\n';
    }
}

// ===========================================================================
// Schemas
// ===========================================================================

void SchemaRegistry::add(std::string schema_id, Validator validator) {
    if (!validator) {
        throw GatewayError("schema '" + schema_id + "' has no validator");
    }
    if (!validators_.emplace(std::move(schema_id), std::move(validator)).second) {
        throw GatewayError("schema registered twice");
    }
}

bool SchemaRegistry::contains(const std::string& schema_id) const {
    return validators_.count(schema_id) != 0;
}

std::optional<std::string> SchemaRegistry::validate(const std::string& schema_id,
                                                    const json& value) const {
    auto it = validators_.find(schema_id);
    if (it == validators_.end()) {
        throw GatewayError("unregistered schema: " + schema_id);
    }
    return it->second(value);
}

namespace {

using Violation = std::optional<std::string>;

bool is_digits(const std::string& s, std::size_t len) {
    return s.size() == len && std::all_of(s.begin(), s.end(), [](unsigned char c) {
               return std::isdigit(c) != 0;
           });
}

bool key_in(const std::string& key, std::initializer_list<const char*> keys) {
    return std::any_of(keys.begin(), keys.end(),
                       [&](const char* k) { return key == k; });
}

Violation expect_object(const json& value, const std::string& where,
                        std::initializer_list<const char*> required,
                        std::initializer_list<const char*> optional = {}) {
    if (!value.is_object()) {
        return where + " must be an object";
    }
    for (const char* key : required) {
        if (!value.contains(key)) {
            return where + " is missing key '" + key + "'";
        }
    }
    for (const auto& [key, unused] : value.items()) {
        (void)unused;
        if (!key_in(key, required) && !key_in(key, optional)) {
            return "unexpected key '" + key + "' in " + where;
        }
    }
    return std::nullopt;
}

Violation expect_string(const json& value, const std::string& where, bool non_empty) {
    if (!value.is_string()) {
        return where + " must be a string";
    }
    if (non_empty && value.get_ref<const std::string&>().empty()) {
        return where + " must be non-empty";
    }
    return std::nullopt;
}

Violation expect_string_array(const json& value, const std::string& where, bool non_empty_items) {
    if (!value.is_array()) {
        return where + " must be an array";
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
        if (auto v = expect_string(value[i], where + "[" + std::to_string(i) + "]",
                                   non_empty_items)) {
            return v;
        }
    }
    return std::nullopt;
}

Violation expect_code(const json& value, const std::string& where, std::size_t len) {
    if (!value.is_string() || !is_digits(value.get<std::string>(), len)) {
        return where + " must be a " + std::to_string(len) + "-digit code";
    }
    return std::nullopt;
}

Violation validate_attributes(const json& value) {
    if (auto v = expect_object(value, "attributes",
                               {"material", "form", "function", "end_use", "features"},
                               {"origin_brand"})) {
        return v;
    }
    for (const char* key : {"material", "form", "function"}) {
        if (auto v = expect_string(value[key], key, true)) {
            return v;
        }
    }
    if (auto v = expect_string(value["end_use"], "end_use", false)) {
        return v;
    }
    if (auto v = expect_string_array(value["features"], "features", false)) {
        return v;
    }
    if (value.contains("origin_brand") && !value["origin_brand"].is_null()) {
        if (auto v = expect_string(value["origin_brand"], "origin_brand", false)) {
            return v;
        }
    }
    return std::nullopt;
}

Violation validate_shortlist(const json& value) {
    if (auto v = expect_object(value, "shortlist", {"keep"})) {
        return v;
    }
    const json& keep = value["keep"];
    if (!keep.is_array() || keep.empty()) {
        return "keep must be a non-empty array";
    }
    std::vector<std::string> seen;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (auto v = expect_code(keep[i], "keep[" + std::to_string(i) + "]", 4)) {
            return v;
        }
        const std::string code = keep[i].get<std::string>();
        if (std::find(seen.begin(), seen.end(), code) != seen.end()) {
            return "keep repeats code " + code;
        }
        seen.push_back(code);
    }
    return std::nullopt;
}

Violation validate_l2_verdict(const json& value) {
    if (auto v = expect_object(value, "verdict", {"keep_final", "demotions", "confirmation"})) {
        return v;
    }
    const json& keep = value["keep_final"];
    if (!keep.is_array() || keep.empty()) {
        return "keep_final must be a non-empty array";
    }
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (auto v = expect_code(keep[i], "keep_final[" + std::to_string(i) + "]", 4)) {
            return v;
        }
        const std::string code = keep[i].get<std::string>();
        if (std::find(kept.begin(), kept.end(), code) != kept.end()) {
            return "keep_final repeats code " + code;
        }
        kept.push_back(code);
    }
    const json& demotions = value["demotions"];
    if (!demotions.is_array()) {
        return "demotions must be an array";
    }
    for (std::size_t i = 0; i < demotions.size(); ++i) {
        const std::string where = "demotions[" + std::to_string(i) + "]";
        if (auto v = expect_object(demotions[i], where, {"code", "clause_id"})) {
            return v;
        }
        if (auto v = expect_code(demotions[i]["code"], where + ".code", 4)) {
            return v;
        }
        if (auto v = expect_string(demotions[i]["clause_id"], where + ".clause_id", true)) {
            return v;
        }
    }
    const json& confirmation = value["confirmation"];
    if (auto v = expect_object(confirmation, "confirmation",
                               {"chosen", "pros", "cons", "gir_clauses"})) {
        return v;
    }
    if (auto v = expect_code(confirmation["chosen"], "confirmation.chosen", 4)) {
        return v;
    }
    for (const char* key : {"pros", "cons"}) {
        if (auto v = expect_string_array(confirmation[key],
                                         std::string("confirmation.") + key, false)) {
            return v;
        }
    }
    if (auto v = expect_string_array(confirmation["gir_clauses"], "confirmation.gir_clauses",
                                     true)) {
        return v;
    }
    const std::string chosen = confirmation["chosen"].get<std::string>();
    if (std::find(kept.begin(), kept.end(), chosen) == kept.end()) {
        return "confirmation.chosen " + chosen + " is not in keep_final";
    }
    return std::nullopt;
}

Violation validate_subheading(const json& value) {
    if (auto v = expect_object(value, "resolution", {"six_digit", "ambiguous", "gir_clauses"},
                               {"eight_digit"})) {
        return v;
    }
    if (auto v = expect_code(value["six_digit"], "six_digit", 6)) {
        return v;
    }
    if (!value["ambiguous"].is_boolean()) {
        return "ambiguous must be a boolean";
    }
    if (auto v = expect_string_array(value["gir_clauses"], "gir_clauses", true)) {
        return v;
    }
    const bool has_eight = value.contains("eight_digit") && !value["eight_digit"].is_null();
    if (has_eight) {
        if (auto v = expect_code(value["eight_digit"], "eight_digit", 8)) {
            return v;
        }
        const std::string six = value["six_digit"].get<std::string>();
        const std::string eight = value["eight_digit"].get<std::string>();
        if (eight.compare(0, 6, six) != 0) {
            return "eight_digit " + eight + " is not a subdivision of " + six;
        }
        if (value["ambiguous"].get<bool>()) {
            return "ambiguous resolution must not carry an eight_digit code";
        }
    }
    return std::nullopt;
}

Violation validate_citation(const json& value, const std::string& where) {
    if (auto v = expect_object(value, where, {"clause_id", "quoted_text"}, {"span"})) {
        return v;
    }
    if (auto v = expect_string(value["clause_id"], where + ".clause_id", true)) {
        return v;
    }
    if (auto v = expect_string(value["quoted_text"], where + ".quoted_text", true)) {
        return v;
    }
    if (value.contains("span") && !value["span"].is_null()) {
        const json& span = value["span"];
        if (!span.is_array() || span.size() != 2 || !span[0].is_number_integer() ||
            !span[1].is_number_integer()) {
            return where + ".span must be a [start, end] pair of integers";
        }
        const auto start = span[0].get<long long>();
        const auto end = span[1].get<long long>();
        const auto length =
            static_cast<long long>(value["quoted_text"].get_ref<const std::string&>().size());
        if (start < 0 || start >= end || end > length) {
            return where + ".span is out of bounds for the quoted text";
        }
    }
    return std::nullopt;
}

Violation validate_final(const json& value) {
    if (auto v = expect_object(value, "decision", {"top3"})) {
        return v;
    }
    const json& top3 = value["top3"];
    if (!top3.is_array() || top3.empty() || top3.size() > 3) {
        return "top3 must be an array of 1 to 3 entries";
    }
    std::vector<std::string> codes;
    for (std::size_t i = 0; i < top3.size(); ++i) {
        const std::string where = "top3[" + std::to_string(i) + "]";
        if (auto v = expect_object(top3[i], where,
                                   {"code", "confidence", "pros", "cons", "gir_clauses",
                                    "citations"})) {
            return v;
        }
        const json& code = top3[i]["code"];
        if (!code.is_string() || (!is_digits(code.get<std::string>(), 6) &&
                                  !is_digits(code.get<std::string>(), 8))) {
            return where + ".code must be a six- or eight-digit code";
        }
        if (std::find(codes.begin(), codes.end(), code.get<std::string>()) != codes.end()) {
            return "top3 repeats code " + code.get<std::string>();
        }
        codes.push_back(code.get<std::string>());
        if (!top3[i]["confidence"].is_number()) {
            return where + ".confidence must be a number";
        }
        for (const char* key : {"pros", "cons"}) {
            if (auto v = expect_string_array(top3[i][key], where + "." + key, false)) {
                return v;
            }
        }
        if (auto v = expect_string_array(top3[i]["gir_clauses"], where + ".gir_clauses", true)) {
            return v;
        }
        const json& citations = top3[i]["citations"];
        if (!citations.is_array()) {
            return where + ".citations must be an array";
        }
        for (std::size_t c = 0; c < citations.size(); ++c) {
            if (auto v = validate_citation(citations[c],
                                           where + ".citations[" + std::to_string(c) + "]")) {
                return v;
            }
        }
    }
    return std::nullopt;
}

Violation validate_spans(const json& value) {
    if (auto v = expect_object(value, "spans reply", {"spans"})) {
        return v;
    }
    const json& spans = value["spans"];
    if (!spans.is_array()) {
        return "spans must be an array";
    }
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const std::string where = "spans[" + std::to_string(i) + "]";
        if (auto v = expect_object(spans[i], where, {"clause_id", "start", "end"})) {
            return v;
        }
        if (auto v = expect_string(spans[i]["clause_id"], where + ".clause_id", true)) {
            return v;
        }
        if (!spans[i]["start"].is_number_integer() || !spans[i]["end"].is_number_integer()) {
            return where + " offsets must be integers";
        }
        if (spans[i]["start"].get<long long>() < 0 ||
            spans[i]["start"].get<long long>() >= spans[i]["end"].get<long long>()) {
            return where + " offsets must satisfy 0 <= start < end";
        }
    }
    return std::nullopt;
}

} // namespace

SchemaRegistry default_schema_registry() {
    SchemaRegistry registry;
    registry.add("attributes.v1", validate_attributes);
    registry.add("shortlist.v1", validate_shortlist);
    registry.add("l2_verdict.v1", validate_l2_verdict);
    registry.add("subheading.v1", validate_subheading);
    registry.add("final.v1", validate_final);
    registry.add("spans.v1", validate_spans);
    return registry;
}

// ===========================================================================
// Gateway
// ===========================================================================

Gateway::Gateway(std::unique_ptr<Backend> backend, SchemaRegistry schemas, int max_repair_retries)
    : backend_(std::move(backend)), schemas_(std::move(schemas)),
      max_repair_retries_(max_repair_retries) {
    if (!backend_) {
        throw GatewayError("gateway requires a backend");
    }
    if (max_repair_retries_ < 0) {
        throw ConfigError("max_repair_retries must be >= 0");
    }
}

Gateway Gateway::from_config(const BackendConfig& config) {
    if (config.max_repair_retries < 0) {
        throw ConfigError("max_repair_retries must be >= 0");
    }
    std::unique_ptr<Backend> backend;
    switch (config.kind) {
    case BackendKind::Scripted:
        if (config.fixture_path.empty()) {
            throw ConfigError("scripted backend requires fixture_path");
        }
        backend = std::make_unique<ScriptedBackend>(
            ScriptedBackend::from_file(config.fixture_path, config.strict_fixtures));
        break;
    case BackendKind::Http:
        backend = std::make_unique<HttpBackend>(config);
        break;
    }
    return Gateway(std::move(backend), default_schema_registry(), config.max_repair_retries);
}

std::string strip_code_fence(const std::string& text) {
    const auto trim = [](const std::string& s) {
        const std::size_t begin = s.find_first_not_of(" \t\r\n");
        if (begin == std::string::npos) {
            return std::string();
        }
        const std::size_t end = s.find_last_not_of(" \t\r\n");
        return s.substr(begin, end - begin + 1);
    };
    std::string trimmed = trim(text);
    if (trimmed.rfind("```", 0) != 0) {
        return trimmed;
    }
    const std::size_t first_newline = trimmed.find('\n');
    if (first_newline == std::string::npos) {
        return trimmed;
    }
    std::string inner = trimmed.substr(first_newline + 1);
    const std::size_t closing = inner.rfind("```");
    if (closing != std::string::npos && trim(inner.substr(closing + 3)).empty()) {
        inner = inner.substr(0, closing);
    }
    return trim(inner);
}

StructuredReply Gateway::complete_structured(const ChatRequest& request,
                                             const ExtraValidator& extra) const {
    if (!schemas_.contains(request.schema_id)) {
        throw GatewayError("unregistered schema: " + request.schema_id);
    }
    ChatRequest attempt_request = request;
    std::vector<std::string> raw_attempts;
    const int max_attempts = 1 + max_repair_retries_;
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        const BackendReply reply = backend_->complete(attempt_request, attempt);
        raw_attempts.push_back(reply.text);

        std::optional<std::string> violation;
        json value;
        try {
            value = json::parse(strip_code_fence(reply.text));
        } catch (const json::parse_error& e) {
            violation = std::string("reply is not a structured record: ") + e.what();
        }
        if (!violation) {
            violation = schemas_.validate(request.schema_id, value);
        }
        if (!violation && extra) {
            violation = extra(value);
        }
        if (!violation) {
            return StructuredReply{std::move(value), reply.text, attempt, reply.key};
        }
        last_error = *violation;
        attempt_request.user_prompt =
            request.user_prompt + "\n\nYour previous reply was rejected: " + last_error +
            "\nReply again with a single record that satisfies the required schema exactly.";
    }
    throw SchemaViolationError(request.stage_name, std::move(raw_attempts),
                               "stage " + request.stage_name + ": reply failed validation after " +
                                   std::to_string(max_attempts) + " attempt(s): " + last_error);
}

} // namespace hstc
