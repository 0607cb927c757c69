#ifndef HSTC_ERRORS_HPP_
#define HSTC_ERRORS_HPP_

#include <stdexcept>
#include <string>
#include <vector>

namespace hstc {

// Root of the project's exception hierarchy. Every domain failure thrown by
// the library derives from this, so callers (the CLI in particular) can
// separate domain errors from genuine bugs.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CodeError : Error {
    using Error::Error;
};

struct CorpusError : Error {
    using Error::Error;
};

struct RetrievalError : Error {
    using Error::Error;
};

struct GatewayError : Error {
    using Error::Error;
};

// HTTP-level failure: connection refused, timeout, non-2xx status.
struct TransportError : GatewayError {
    using GatewayError::GatewayError;
};

// Scripted backend had no response for the computed key.
struct FixtureMissingError : GatewayError {
    FixtureMissingError(std::string key_, const std::string& msg)
        : GatewayError(msg), key(std::move(key_)) {}
    std::string key;
};

// Reply failed schema validation on every attempt. Carries the raw text of
// each attempt so a failed run can be diagnosed from the error alone.
struct SchemaViolationError : GatewayError {
    SchemaViolationError(std::string stage_, std::vector<std::string> attempts_,
                         const std::string& msg)
        : GatewayError(msg), stage(std::move(stage_)), raw_attempts(std::move(attempts_)) {}
    std::string stage;
    std::vector<std::string> raw_attempts;
};

struct EvalError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

} // namespace hstc

#endif // HSTC_ERRORS_HPP_
