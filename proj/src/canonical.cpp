#include "hstc/canonical.hpp"

#include <cmath>
#include <cstdio>

namespace hstc {

namespace {

void write_canonical(const nlohmann::json& v, std::string& out) {
    using value_t = nlohmann::json::value_t;
    switch (v.type()) {
    case value_t::object: {
        out.push_back('{');
        bool first = true;
        // nlohmann::json backs objects with std::map, so iteration is
        // already key-sorted.
        for (auto it = v.begin(); it != v.end(); ++it) {
            if (!first) out.push_back(',');
            first = false;
            out += nlohmann::json(it.key()).dump();
            out.push_back(':');
            write_canonical(it.value(), out);
        }
        out.push_back('}');
        break;
    }
    case value_t::array: {
        out.push_back('[');
        bool first = true;
        for (const auto& item : v) {
            if (!first) out.push_back(',');
            first = false;
            write_canonical(item, out);
        }
        out.push_back(']');
        break;
    }
    case value_t::number_float: {
        const double d = v.get<double>();
        if (std::isfinite(d) && d == std::floor(d) && std::fabs(d) < 9007199254740992.0) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.0f", d);
            out += buf;
        } else {
            out += v.dump();
        }
        break;
    }
    default:
        out += v.dump();
        break;
    }
}

} // namespace

std::string canonical_json_string(const nlohmann::json& value) {
    std::string out;
    write_canonical(value, out);
    return out;
}

std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string fixture_key(std::string_view stage_name, std::string_view canonical_input) {
    std::string material;
    material.reserve(stage_name.size() + 1 + canonical_input.size());
    material += stage_name;
    material.push_back('\0');
    material += canonical_input;
    return fnv1a_hex(material);
}

} // namespace hstc
