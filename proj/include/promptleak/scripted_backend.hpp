#pragma once

#include "promptleak/digest.hpp"
#include "promptleak/error.hpp"
#include "promptleak/target_service.hpp"
#include "promptleak/transforms.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <regex>
#include <string>
#include <variant>
#include <vector>

namespace promptleak {

namespace behavior {

/// Emits the secret, optionally wrapped in scripted text.
struct LeakVerbatim {
    std::string prefix;
    std::string suffix;
};
struct LeakInterleaved {
    char symbol = '@';
};
struct LeakCaesar {
    int shift = 3;
};
struct Refuse {
    std::string text;
};
/// Drops each word of the secret with probability `rate`, seeded per secret.
struct Paraphrase {
    double rate = 0.2;
    std::uint64_t seed = 0;
};
/// Returns every message content of the input, newline-joined.
struct Echo {};

} // namespace behavior

using Behavior = std::variant<behavior::LeakVerbatim, behavior::LeakInterleaved, behavior::LeakCaesar,
                              behavior::Refuse, behavior::Paraphrase, behavior::Echo>;

inline std::string paraphrase_words(std::string_view secret, double rate, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ fnv1a64(secret));
    std::string out;
    std::size_t i = 0;
    while (i < secret.size()) {
        const auto start = secret.find_first_not_of(" \t\n\r", i);
        if (start == std::string_view::npos) break;
        auto end = secret.find_first_of(" \t\n\r", start);
        if (end == std::string_view::npos) end = secret.size();
        if (unit_interval(rng()) >= rate) {
            if (!out.empty()) out.push_back(' ');
            out.append(secret.substr(start, end - start));
        }
        i = end;
    }
    return out;
}

/// Applies a behavior to the conditioning context (the secret as the model
/// saw it). `input` is only consulted by Echo.
inline std::string perform(const Behavior& b, std::string_view secret, const AssembledInput& input) {
    return std::visit(
        [&](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, behavior::LeakVerbatim>) {
                return v.prefix + std::string(secret) + v.suffix;
            } else if constexpr (std::is_same_v<T, behavior::LeakInterleaved>) {
                return interleave_words(secret, v.symbol);
            } else if constexpr (std::is_same_v<T, behavior::LeakCaesar>) {
                return caesar_encrypt(secret, v.shift);
            } else if constexpr (std::is_same_v<T, behavior::Refuse>) {
                return v.text;
            } else if constexpr (std::is_same_v<T, behavior::Paraphrase>) {
                return paraphrase_words(secret, v.rate, v.seed);
            } else {
                std::string out;
                for (const auto& m : input.messages) {
                    if (!out.empty()) out.push_back('\n');
                    out += m.content;
                }
                return out;
            }
        },
        b);
}

inline Behavior behavior_from_json(const nlohmann::json& j) {
    const auto kind = j.at("behavior").get<std::string>();
    if (kind == "leak_verbatim") return behavior::LeakVerbatim{j.value("prefix", ""), j.value("suffix", "")};
    if (kind == "leak_interleaved") {
        const auto symbol = j.value("symbol", std::string("@"));
        if (symbol.size() != 1) throw ConfigError("leak_interleaved symbol must be one character");
        return behavior::LeakInterleaved{symbol[0]};
    }
    if (kind == "leak_caesar") return behavior::LeakCaesar{j.value("shift", 3)};
    if (kind == "refuse") return behavior::Refuse{j.at("text").get<std::string>()};
    if (kind == "paraphrase") {
        const double rate = j.value("rate", 0.2);
        if (rate < 0.0 || rate > 1.0) throw ConfigError("paraphrase rate must lie in [0, 1]");
        return behavior::Paraphrase{rate, j.value<std::uint64_t>("seed", 0)};
    }
    if (kind == "echo") return behavior::Echo{};
    throw ConfigError("unknown behavior '" + kind + "'");
}

/// Maps query patterns to behaviors. Rules are tried in order; a pattern must
/// match starting at the first character of the query (use `[\s\S]*` to float).
/// Queries matching no rule get `unmatched`.
struct ScriptedBehavior {
    struct Rule {
        std::string pattern;
        std::regex regex;
        Behavior behavior;
    };

    std::string name;
    std::string separator = "\n";
    std::vector<Rule> rules;
    Behavior unmatched = behavior::Refuse{"I'm sorry, but I can't help with that."};

    void add_rule(std::string pattern, Behavior b) {
        try {
            std::regex re(pattern, std::regex::ECMAScript);
            rules.push_back({std::move(pattern), std::move(re), std::move(b)});
        } catch (const std::regex_error& e) {
            throw ConfigError("invalid rule pattern '" + pattern + "': " + e.what());
        }
    }

    /// The rule governing `query`, or nullptr.
    const Rule* match(std::string_view query) const {
        for (const auto& rule : rules) {
            if (std::regex_search(query.begin(), query.end(), rule.regex, std::regex_constants::match_continuous))
                return &rule;
        }
        return nullptr;
    }

    static ScriptedBehavior from_json(const nlohmann::json& j) {
        try {
            ScriptedBehavior script;
            script.name = j.value("name", "");
            script.separator = j.value("separator", std::string("\n"));
            if (script.separator.empty()) throw ConfigError("separator must be non-empty");
            for (const auto& r : j.at("rules")) script.add_rule(r.at("pattern").get<std::string>(), behavior_from_json(r));
            if (j.contains("unmatched")) script.unmatched = behavior_from_json(j.at("unmatched"));
            return script;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("malformed script: ") + e.what());
        }
    }

    static ScriptedBehavior load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open script file '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("script file '" + path + "' is not valid JSON: " + e.what());
        }
        return from_json(j);
    }
};

/// Deterministic stand-in for an LLM.
///
/// With a system message, the system content is the secret and the last user
/// turn is the query. Without one, the last user turn is `secret + separator +
/// query`: the split is placed at the first separator whose remainder is
/// matched by some rule. Multi-line secrets whose later lines open like an
/// attack query are therefore mis-split; fixtures avoid them.
class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(ScriptedBehavior script) : script_(std::move(script)) {}

    Generation generate(const AssembledInput& input, const GenerationParams&) const override {
        std::string secret;
        const ScriptedBehavior::Rule* rule = nullptr;

        const ChatMessage* last_user = nullptr;
        for (const auto& m : input.messages) {
            if (m.role == "system") {
                if (!secret.empty()) secret.push_back('\n');
                secret += m.content;
            } else if (m.role == "user") {
                last_user = &m;
            }
        }
        const bool has_system = std::any_of(input.messages.begin(), input.messages.end(),
                                            [](const ChatMessage& m) { return m.role == "system"; });
        if (last_user) {
            const std::string_view text = last_user->content;
            if (has_system) {
                rule = script_.match(text);
            } else {
                const auto& sep = script_.separator;
                for (auto pos = text.find(sep); pos != std::string_view::npos; pos = text.find(sep, pos + 1)) {
                    const auto rest = text.substr(pos + sep.size());
                    if (const auto* r = script_.match(rest)) {
                        secret = std::string(text.substr(0, pos));
                        rule = r;
                        break;
                    }
                }
            }
        }

        Generation out;
        out.text = perform(rule ? rule->behavior : script_.unmatched, secret, input);
        out.metadata["backend"] = name();
        out.metadata["rule"] = rule ? rule->pattern : std::string("<unmatched>");
        return out;
    }

    std::string name() const override { return "scripted:" + script_.name; }

    const ScriptedBehavior& script() const noexcept { return script_; }

private:
    ScriptedBehavior script_;
};

} // namespace promptleak
