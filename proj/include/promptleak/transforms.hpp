#pragma once

#include <string>
#include <string_view>

namespace promptleak {

/// Shifts ASCII letters forward by `shift` (mod 26), preserving case.
inline std::string caesar_encrypt(std::string_view text, int shift) {
    const int s = ((shift % 26) + 26) % 26;
    std::string out(text);
    for (auto& c : out) {
        if (c >= 'a' && c <= 'z') c = static_cast<char>('a' + (c - 'a' + s) % 26);
        else if (c >= 'A' && c <= 'Z') c = static_cast<char>('A' + (c - 'A' + s) % 26);
    }
    return out;
}

inline std::string caesar_decrypt(std::string_view text, int shift) { return caesar_encrypt(text, -(shift % 26)); }

/// Appends `symbol` to every whitespace-delimited word; whitespace is kept as is.
inline std::string interleave_words(std::string_view text, char symbol) {
    std::string out;
    out.reserve(text.size() * 2);
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
    for (std::size_t i = 0; i < text.size(); ++i) {
        out.push_back(text[i]);
        if (!is_ws(text[i]) && (i + 1 == text.size() || is_ws(text[i + 1]))) out.push_back(symbol);
    }
    return out;
}

/// Removes every `symbol` and collapses the space runs this leaves behind.
inline std::string decode_interleaved(std::string_view text, char symbol) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        if (c == symbol) continue;
        if (c == ' ' && !out.empty() && out.back() == ' ') continue;
        out.push_back(c);
    }
    return out;
}

} // namespace promptleak
