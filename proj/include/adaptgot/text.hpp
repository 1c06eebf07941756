#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace adaptgot::text {

/// Lowercase ASCII-alphanumeric tokens; every other byte is a separator.
/// Non-ASCII bytes (UTF-8 continuation etc.) are kept inside tokens.
inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c)) {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// 64-bit FNV-1a, seeded by folding `salt` into the offset basis.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t salt = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ (salt * 0x100000001b3ULL);
    for (const char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace adaptgot::text
