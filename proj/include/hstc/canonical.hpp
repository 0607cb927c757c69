#ifndef HSTC_CANONICAL_HPP_
#define HSTC_CANONICAL_HPP_

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"

namespace hstc {

//! Byte-canonical serialization of a JSON value.
/*!
 * Object keys sorted, no insignificant whitespace, and numbers normalized:
 * a floating value that holds an exact integer below 2^53 is rendered
 * without a decimal point, so 1 and 1.0 canonicalize identically. Fixture
 * keys digest this form, which makes them survive serializer differences.
 */
std::string canonical_json_string(const nlohmann::json& value);

//! FNV-1a 64-bit digest rendered as 16 lowercase hex characters.
std::string fnv1a_hex(std::string_view data);

//! Stable content key for a scripted-backend lookup: digest of the stage
//! name and the canonical serialization of the stage input.
std::string fixture_key(std::string_view stage_name, std::string_view canonical_input);

} // namespace hstc

#endif // HSTC_CANONICAL_HPP_
