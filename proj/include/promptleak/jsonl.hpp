#pragma once

#include "promptleak/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace promptleak::jsonl {

/// Calls `fn` on every non-blank line of a JSON Lines file.
inline void for_each(const std::string& path, const std::function<void(const nlohmann::json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open '" + path + "'");
    std::string line;
    long index = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IngestionError("'" + path + "' has a malformed line: " + e.what(), index);
        }
        fn(j);
        ++index;
    }
}

template <class T>
std::vector<T> read(const std::string& path) {
    std::vector<T> out;
    for_each(path, [&](const nlohmann::json& j) { out.push_back(j.get<T>()); });
    return out;
}

/// One compact JSON document per line; key order is nlohmann's sorted map order.
template <class Range>
void write(const std::string& path, const Range& items, bool append = false) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    for (const auto& item : items) out << nlohmann::json(item).dump() << '\n';
    if (!out) throw Error("write to '" + path + "' failed");
}

} // namespace promptleak::jsonl
