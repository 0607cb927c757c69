#ifndef HSTC_GATEWAY_HPP_
#define HSTC_GATEWAY_HPP_

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "json.hpp"

#include "hstc/canonical.hpp"

namespace hstc {

// ===========================================================================
// Requests and replies
// ===========================================================================

struct ChatRequest {
    std::string stage_name;
    std::string system_prompt;
    std::string user_prompt;
    std::string schema_id;
    double temperature = 0.0;
    // Byte-canonical serialization of the stage input; the scripted backend
    // derives its lookup key from it, and the http backend records the same
    // key so traces stay comparable across backends.
    std::string canonical_input;
};

enum class BackendKind { Http, Scripted };

struct BackendConfig {
    BackendKind kind = BackendKind::Scripted;
    std::string endpoint;     // http only, e.g. "http://localhost:8000/v1"
    std::string model_name;   // http only
    std::string auth_env_var; // name of env var holding the bearer token
    int timeout_ms = 60000;
    int max_repair_retries = 2;
    std::string fixture_path; // scripted only
    bool strict_fixtures = true;
};

//! Raw text from one backend call, plus the key it was served (or recorded)
//! under.
struct BackendReply {
    std::string text;
    std::string key;
};

//! Validated structured output of one stage call.
struct StructuredReply {
    nlohmann::json value;
    std::string raw_text; // verbatim text of the accepted attempt
    int attempts = 1;
    std::string key; // backend key of the accepted attempt
};

//! Key actually used on a given attempt: the base key for attempt 1, then
//! "#retry1", "#retry2", ... suffixes so repair rounds script independently.
std::string attempt_key(const std::string& base_key, int attempt);

// ===========================================================================
// Backends
// ===========================================================================

//! A chat-completion provider. Implementations must tolerate concurrent
//! calls; `attempt` is 1-based and increments across repair rounds.
class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendReply complete(const ChatRequest& request, int attempt) = 0;
};

//! Deterministic backend replaying canned responses from an in-memory map
//! keyed by fixture_key (with attempt suffixes). With strict lookups, a
//! missing key is an error; otherwise the backend falls back to the generic
//! key "stage:<stage_name>" before giving up.
class ScriptedBackend : public Backend {
public:
    ScriptedBackend(std::unordered_map<std::string, std::string> fixtures, bool strict);
    static ScriptedBackend from_file(const std::string& path, bool strict);

    BackendReply complete(const ChatRequest& request, int attempt) override;

private:
    std::unordered_map<std::string, std::string> fixtures_;
    bool strict_;
};

//! OpenAI-compatible chat-completions client.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(BackendConfig config);
    BackendReply complete(const ChatRequest& request, int attempt) override;

private:
    BackendConfig config_;
};

//! Backend delegating to an arbitrary responder function. Used by tooling
//! that needs programmatic responses (fixture generation, fuzzing).
class CallbackBackend : public Backend {
public:
    using Responder = std::function<std::string(const ChatRequest&, int attempt)>;
    explicit CallbackBackend(Responder responder);
    BackendReply complete(const ChatRequest& request, int attempt) override;

private:
    Responder responder_;
};

//! Decorator capturing every (key, response) pair that flows through it, in
//! key order, so a live run can be frozen into a fixture file.
class RecordingBackend : public Backend {
public:
    explicit RecordingBackend(Backend& inner);
    BackendReply complete(const ChatRequest& request, int attempt) override;

    std::map<std::string, std::string> recorded() const;
    void write_fixture_file(const std::string& path) const;

private:
    Backend& inner_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> recorded_;
};

// ===========================================================================
// Schemas
// ===========================================================================

//! Registry of named output schemas. A validator returns an error message on
//! violation, nullopt on success.
class SchemaRegistry {
public:
    using Validator = std::function<std::optional<std::string>(const nlohmann::json&)>;

    void add(std::string schema_id, Validator validator);
    bool contains(const std::string& schema_id) const;
    std::optional<std::string> validate(const std::string& schema_id,
                                        const nlohmann::json& value) const;

private:
    std::map<std::string, Validator> validators_;
};

//! Registry pre-loaded with the pipeline's stage output schemas:
//! attributes.v1, shortlist.v1, l2_verdict.v1, subheading.v1, final.v1,
//! spans.v1.
SchemaRegistry default_schema_registry();

// ===========================================================================
// Gateway
// ===========================================================================

//! Per-call validation beyond the registered schema (e.g. membership of a
//! returned code in the current candidate set). Violations feed the same
//! repair loop as schema violations.
using ExtraValidator = std::function<std::optional<std::string>(const nlohmann::json&)>;

//! Facade owning a backend and a schema registry, providing the validated
//! structured-call primitive with retry-with-repair.
class Gateway {
public:
    Gateway(std::unique_ptr<Backend> backend, SchemaRegistry schemas, int max_repair_retries = 2);

    //! Builds the backend named by the config and the default schema set.
    static Gateway from_config(const BackendConfig& config);

    //! Calls the backend, parses the reply as a structured record (stripping
    //! a surrounding code fence when present), and validates it against the
    //! request's schema plus `extra`. On failure, retries with the
    //! validation error appended to the user prompt, up to
    //! max_repair_retries extra attempts; a persistent violation raises
    //! SchemaViolationError carrying every raw attempt.
    StructuredReply complete_structured(const ChatRequest& request,
                                        const ExtraValidator& extra = {}) const;

    int max_repair_retries() const { return max_repair_retries_; }
    const SchemaRegistry& schemas() const { return schemas_; }
    Backend& backend() { return *backend_; }

private:
    std::unique_ptr<Backend> backend_;
    SchemaRegistry schemas_;
    int max_repair_retries_;
};

//! Strips a Markdown code fence (``` or ```json) wrapping `text`, if any,
//! and trims surrounding whitespace. Returns the inner payload.
std::string strip_code_fence(const std::string& text);

} // namespace hstc

#endif // HSTC_GATEWAY_HPP_
