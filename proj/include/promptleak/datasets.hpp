#pragma once

#include "promptleak/error.hpp"
#include "promptleak/log.hpp"
#include "promptleak/target_service.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace promptleak {

struct Turn {
    /// Normalized to "user", "assistant" or "system" when recognized.
    std::string role;
    std::string text;
};

struct ConversationRecord {
    std::string id;
    std::vector<Turn> turns;
};

namespace detail {

inline std::string normalize_role(const std::string& from) {
    if (from == "human" || from == "user") return "user";
    if (from == "gpt" || from == "chatgpt" || from == "assistant" || from == "bard" || from == "bing") return "assistant";
    if (from == "system") return "system";
    return from;
}

inline bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

} // namespace detail

/// Reads the ShareGPT shape: [{id, conversations: [{from, value}, ...]}, ...].
inline std::vector<ConversationRecord> load_sharegpt(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError("'" + path + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_array()) throw IngestionError("'" + path + "' must hold a JSON array of conversations");

    std::vector<ConversationRecord> out;
    out.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& item = doc[i];
        const auto index = static_cast<long>(i);
        if (!item.is_object()) throw IngestionError("conversation is not an object", index);
        if (!item.contains("conversations") || !item["conversations"].is_array())
            throw IngestionError("conversation lacks a 'conversations' array", index);
        ConversationRecord rec;
        if (item.contains("id") && item["id"].is_string()) rec.id = item["id"].get<std::string>();
        else if (item.contains("id") && item["id"].is_number_integer()) rec.id = std::to_string(item["id"].get<long long>());
        else rec.id = "sharegpt-" + std::to_string(i);
        for (const auto& turn : item["conversations"]) {
            if (!turn.is_object() || !turn.contains("from") || !turn["from"].is_string() || !turn.contains("value") ||
                !turn["value"].is_string())
                throw IngestionError("turn needs string 'from' and 'value'", index);
            rec.turns.push_back({detail::normalize_role(turn["from"].get<std::string>()), turn["value"].get<std::string>()});
        }
        out.push_back(std::move(rec));
    }
    return out;
}

using TokenCounter = std::function<std::size_t(const std::string&)>;

inline std::size_t whitespace_token_count(const std::string& text) {
    std::istringstream in(text);
    std::size_t n = 0;
    for (std::string word; in >> word;) ++n;
    return n;
}

struct FilterOptions {
    std::size_t max_tokens = 400;
    TokenCounter count_tokens = whitespace_token_count;
    PromptSource source = PromptSource::sharegpt;
};

/// Keeps conversations whose first non-system turn is a non-blank user turn,
/// takes that turn as the secret, and drops secrets over `max_tokens`.
/// Duplicate ids get a "#n" suffix so emitted ids stay unique.
inline std::vector<PromptRecord> filter_prompts(const std::vector<ConversationRecord>& records,
                                                const FilterOptions& options = {}) {
    std::vector<PromptRecord> out;
    std::unordered_set<std::string> seen;
    for (const auto& rec : records) {
        const Turn* first = nullptr;
        for (const auto& t : rec.turns) {
            if (t.role == "system") continue;
            first = &t;
            break;
        }
        if (!first || first->role != "user" || detail::blank(first->text)) continue;
        if (options.count_tokens(first->text) > options.max_tokens) continue;

        std::string id = rec.id;
        for (int n = 2; seen.contains(id); ++n) id = rec.id + "#" + std::to_string(n);
        if (id != rec.id) log::warn("duplicate prompt id '" + rec.id + "' renamed to '" + id + "'");
        seen.insert(id);
        out.push_back({std::move(id), first->text, options.source, Split::test});
    }
    return out;
}

namespace detail {

/// RFC 4180 reader: quoted fields may hold commas, doubled quotes and newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, field_started = false;
    long line = 1;
    char c;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };
    while (in.get(c)) {
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started && !field.empty())
                throw IngestionError("stray quote inside unquoted CSV field on line " + std::to_string(line));
            quoted = true;
            field_started = true;
            break;
        case ',': end_field(); break;
        case '\r': break;
        case '\n':
            end_row();
            ++line;
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw IngestionError("unterminated quoted CSV field");
    if (!row.empty() || !field.empty()) end_row();
    return rows;
}

} // namespace detail

/// Reads a prompt list CSV whose header names `act` and `prompt` columns.
/// Rows with an empty prompt are skipped with a warning.
inline std::vector<PromptRecord> load_prompt_list(const std::string& path, PromptSource source = PromptSource::awesome) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open '" + path + "'");
    auto rows = detail::parse_csv(in);
    if (rows.empty()) throw IngestionError("'" + path + "' has no header row");

    auto& header = rows.front();
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    const auto act_col = std::find(header.begin(), header.end(), "act") - header.begin();
    const auto prompt_col = std::find(header.begin(), header.end(), "prompt") - header.begin();
    if (act_col == static_cast<long>(header.size()) || prompt_col == static_cast<long>(header.size()))
        throw IngestionError("'" + path + "' header must contain act and prompt columns");

    std::vector<PromptRecord> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != header.size())
            throw IngestionError("row has " + std::to_string(row.size()) + " fields, header has " +
                                     std::to_string(header.size()),
                                 static_cast<long>(r));
        const auto& text = row[static_cast<std::size_t>(prompt_col)];
        char id[32];
        std::snprintf(id, sizeof id, "awesome-%03zu", r);
        if (detail::blank(text)) {
            log::warn(std::string("skipping ") + id + " ('" + row[static_cast<std::size_t>(act_col)] + "'): empty prompt");
            continue;
        }
        out.push_back({id, text, source, Split::test});
    }
    return out;
}

struct SplitSpec {
    std::size_t n_test = 200;
    std::size_t n_dev = 200;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<PromptRecord> test;
    std::vector<PromptRecord> dev;
};

/// Seeded uniform sampling without replacement into disjoint test and dev
/// sets. Each set keeps the input order of its members.
inline SplitResult sample_split(const std::vector<PromptRecord>& prompts, const SplitSpec& spec) {
    if (spec.n_test + spec.n_dev > prompts.size())
        throw SplitError("split needs " + std::to_string(spec.n_test + spec.n_dev) + " prompts, have " +
                         std::to_string(prompts.size()));
    std::vector<std::size_t> idx(prompts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(spec.seed);
    const auto take = spec.n_test + spec.n_dev;
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng() % (idx.size() - i)]);

    auto pick = [&](std::size_t from, std::size_t to, Split split) {
        std::vector<std::size_t> chosen(idx.begin() + static_cast<long>(from), idx.begin() + static_cast<long>(to));
        std::sort(chosen.begin(), chosen.end());
        std::vector<PromptRecord> out;
        for (auto i : chosen) {
            out.push_back(prompts[i]);
            out.back().split = split;
        }
        return out;
    };
    return {pick(0, spec.n_test, Split::test), pick(spec.n_test, take, Split::dev)};
}

} // namespace promptleak
