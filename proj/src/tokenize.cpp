#include "hstc/tokenize.hpp"

#include <cctype>
#include <cstdint>

namespace hstc {

namespace {

bool is_cjk(char32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF)   // CJK unified ideographs
        || (cp >= 0x3400 && cp <= 0x4DBF)   // extension A
        || (cp >= 0xF900 && cp <= 0xFAFF)   // compatibility ideographs
        || (cp >= 0x20000 && cp <= 0x2FA1F) // extensions B..F
        || (cp >= 0x3040 && cp <= 0x30FF)   // hiragana, katakana
        || (cp >= 0x31F0 && cp <= 0x31FF)   // katakana phonetic extensions
        || (cp >= 0xAC00 && cp <= 0xD7AF)   // hangul syllables
        || (cp >= 0x1100 && cp <= 0x11FF);  // hangul jamo
}

// Decodes one UTF-8 codepoint starting at `i`; advances `i` past it.
// Returns 0xFFFD and advances one byte on malformed input.
char32_t next_codepoint(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = 0xFFFD;
    if (b0 < 0x80) {
        cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++i;
        return 0xFFFD;
    }
    if (i + len > s.size()) {
        ++i;
        return 0xFFFD;
    }
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) {
            ++i;
            return 0xFFFD;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    i += len;
    return cp;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

} // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string latin_run;
    std::vector<char32_t> cjk_run;

    auto flush_latin = [&] {
        if (!latin_run.empty()) {
            tokens.push_back(latin_run);
            latin_run.clear();
        }
    };
    auto flush_cjk = [&] {
        if (cjk_run.size() == 1) {
            std::string t;
            append_utf8(t, cjk_run[0]);
            tokens.push_back(std::move(t));
        } else {
            for (std::size_t k = 0; k + 1 < cjk_run.size(); ++k) {
                std::string t;
                append_utf8(t, cjk_run[k]);
                append_utf8(t, cjk_run[k + 1]);
                tokens.push_back(std::move(t));
            }
        }
        cjk_run.clear();
    };

    std::size_t i = 0;
    while (i < text.size()) {
        const char32_t cp = next_codepoint(text, i);
        if (cp < 0x80 && std::isalnum(static_cast<int>(cp))) {
            flush_cjk();
            latin_run.push_back(
                static_cast<char>(std::tolower(static_cast<int>(cp))));
        } else if (is_cjk(cp)) {
            flush_latin();
            cjk_run.push_back(cp);
        } else {
            flush_latin();
            flush_cjk();
        }
    }
    flush_latin();
    flush_cjk();
    return tokens;
}

} // namespace hstc
