#ifndef HSTC_HS_CODE_HPP_
#define HSTC_HS_CODE_HPP_

#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace hstc {

enum class CodeLevel { Chapter, Heading, Subheading, National };

const char* to_string(CodeLevel level);

//! A Harmonized System code: 2, 4, 6 or 8 decimal digits.
/*!
 * The digit count determines the level (2 = chapter, 4 = heading,
 * 6 = subheading, 8 = national). Stored as bare digits; the display form
 * inserts a dot after the fourth digit ("3919.90").
 */
class HsCode {
public:
    HsCode() = default;

    //! Parses a raw code, stripping dots and whitespace ("39.19" -> 3919).
    /*! Throws CodeError on non-digit residue or a digit count not in {2,4,6,8}. */
    static HsCode parse(std::string_view raw);

    //! Constructs from bare digits already known to be clean. Same checks as parse.
    static HsCode from_digits(std::string digits);

    const std::string& digits() const { return digits_; }
    CodeLevel level() const;
    std::size_t size() const { return digits_.size(); }

    //! Prefix of the given length (2, 4 or 6). Throws CodeError if the request
    //! exceeds this code's length or is not a valid truncation length.
    HsCode truncated(std::size_t digit_count) const;

    //! Chapter (first two digits) of this code.
    HsCode chapter() const { return truncated(2); }

    //! Parent code (two digits shorter); empty for chapters.
    std::optional<HsCode> parent() const;

    //! True when this code is a proper prefix-ancestor of `other`.
    bool is_ancestor_of(const HsCode& other) const;

    //! Dotted display form: "3919.90" for subheadings, "3919" for headings.
    std::string display() const;

    bool empty() const { return digits_.empty(); }

    friend bool operator==(const HsCode&, const HsCode&) = default;
    friend std::strong_ordering operator<=>(const HsCode& a, const HsCode& b) {
        return a.digits_ <=> b.digits_;
    }

private:
    explicit HsCode(std::string digits) : digits_(std::move(digits)) {}
    std::string digits_;
};

} // namespace hstc

#endif // HSTC_HS_CODE_HPP_
