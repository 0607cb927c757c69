#ifndef HSTC_TOKENIZE_HPP_
#define HSTC_TOKENIZE_HPP_

#include <string>
#include <string_view>
#include <vector>

namespace hstc {

//! Deterministic tokenizer shared by index build and query time.
/*!
 * ASCII alphanumeric runs are lowercased and split on everything else.
 * CJK runs (Han, kana, hangul) are emitted as overlapping character
 * bigrams; a run of a single character yields that character. All other
 * codepoints act as separators, and malformed UTF-8 bytes are skipped.
 */
std::vector<std::string> tokenize(std::string_view text);

} // namespace hstc

#endif // HSTC_TOKENIZE_HPP_
