#include "hstc/hs_code.hpp"

#include "hstc/errors.hpp"

#include <cctype>

namespace hstc {

const char* to_string(CodeLevel level) {
    switch (level) {
    case CodeLevel::Chapter: return "chapter";
    case CodeLevel::Heading: return "heading";
    case CodeLevel::Subheading: return "subheading";
    case CodeLevel::National: return "national";
    }
    return "?";
}

HsCode HsCode::parse(std::string_view raw) {
    if (raw.empty()) {
        throw CodeError("empty code");
    }
    std::string digits;
    digits.reserve(raw.size());
    for (char c : raw) {
        if (c == '.' || std::isspace(static_cast<unsigned char>(c))) {
            continue;
        }
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw CodeError("code '" + std::string(raw) + "' contains non-digit character '" +
                            std::string(1, c) + "'");
        }
        digits.push_back(c);
    }
    return from_digits(std::move(digits));
}

HsCode HsCode::from_digits(std::string digits) {
    const auto n = digits.size();
    if (n != 2 && n != 4 && n != 6 && n != 8) {
        throw CodeError("code '" + digits + "' has " + std::to_string(n) +
                        " digits; expected 2, 4, 6 or 8");
    }
    for (char c : digits) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw CodeError("code '" + digits + "' contains non-digit character");
        }
    }
    return HsCode(std::move(digits));
}

CodeLevel HsCode::level() const {
    switch (digits_.size()) {
    case 2: return CodeLevel::Chapter;
    case 4: return CodeLevel::Heading;
    case 6: return CodeLevel::Subheading;
    default: return CodeLevel::National;
    }
}

HsCode HsCode::truncated(std::size_t digit_count) const {
    if (digit_count != 2 && digit_count != 4 && digit_count != 6) {
        throw CodeError("truncation length must be 2, 4 or 6; got " +
                        std::to_string(digit_count));
    }
    if (digit_count > digits_.size()) {
        throw CodeError("cannot truncate code '" + digits_ + "' to " +
                        std::to_string(digit_count) + " digits");
    }
    return HsCode(digits_.substr(0, digit_count));
}

std::optional<HsCode> HsCode::parent() const {
    if (digits_.size() <= 2) {
        return std::nullopt;
    }
    return HsCode(digits_.substr(0, digits_.size() - 2));
}

bool HsCode::is_ancestor_of(const HsCode& other) const {
    return digits_.size() < other.digits_.size() &&
           other.digits_.compare(0, digits_.size(), digits_) == 0;
}

std::string HsCode::display() const {
    if (digits_.size() <= 4) {
        return digits_;
    }
    return digits_.substr(0, 4) + "." + digits_.substr(4);
}

} // namespace hstc
