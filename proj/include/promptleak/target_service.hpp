#pragma once

#include "promptleak/error.hpp"
#include "promptleak/log.hpp"
#include "promptleak/text_metrics.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace promptleak {

enum class PromptSource { sharegpt, awesome, custom };
enum class Split { dev, test };

NLOHMANN_JSON_SERIALIZE_ENUM(PromptSource, {{PromptSource::sharegpt, "sharegpt"},
                                            {PromptSource::awesome, "awesome"},
                                            {PromptSource::custom, "custom"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Split, {{Split::dev, "dev"}, {Split::test, "test"}})

/// A secret prompt and where it came from.
struct PromptRecord {
    std::string id;
    std::string text;
    PromptSource source = PromptSource::custom;
    Split split = Split::test;

    friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

inline void to_json(nlohmann::json& j, const PromptRecord& r) {
    j = nlohmann::json{{"id", r.id}, {"text", r.text}, {"source", r.source}, {"split", r.split}};
}

inline void from_json(const nlohmann::json& j, PromptRecord& r) {
    j.at("id").get_to(r.id);
    j.at("text").get_to(r.text);
    r.source = j.value("source", PromptSource::custom);
    r.split = j.value("split", Split::test);
}

enum class ServiceMode { system_message, concatenation };

NLOHMANN_JSON_SERIALIZE_ENUM(ServiceMode, {{ServiceMode::system_message, "system_message"},
                                           {ServiceMode::concatenation, "concatenation"}})

struct DefenseConfig {
    bool enabled = false;
    int n = 5;
    std::string blocked_response;
};

struct GenerationParams {
    double temperature = 0.0;
    int max_tokens = 512;
};

struct ChatMessage {
    std::string role;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

inline void to_json(nlohmann::json& j, const ChatMessage& m) { j = {{"role", m.role}, {"content", m.content}}; }
inline void from_json(const nlohmann::json& j, ChatMessage& m) {
    j.at("role").get_to(m.role);
    j.at("content").get_to(m.content);
}

/// The request a backend sees: exactly what would go on the wire.
struct AssembledInput {
    std::vector<ChatMessage> messages;
};

struct Generation {
    std::string text;
    std::map<std::string, std::string> metadata;
};

/// An LLM, real or simulated.
class Backend {
public:
    virtual ~Backend() = default;
    virtual Generation generate(const AssembledInput& input, const GenerationParams& params) const = 0;
    virtual std::string name() const = 0;
};

struct QueryResponse {
    std::string text;
    bool blocked = false;
    std::map<std::string, std::string> backend_metadata;
};

/// Anything that answers attack queries: f_p in the threat model.
class QueryService {
public:
    virtual ~QueryService() = default;
    virtual QueryResponse respond(std::string_view query) const = 0;
};

struct ServiceConfig {
    ServiceMode mode = ServiceMode::system_message;
    /// Placed between prompt and query in concatenation mode.
    std::string separator = "\n";
    std::shared_ptr<const Backend> backend;
    std::optional<DefenseConfig> defense;
    GenerationParams generation;
    /// Tokenizer settings used by the n-gram defense.
    MetricConfig metric;
};

inline AssembledInput assemble_input(ServiceMode mode, std::string_view separator, std::string_view secret,
                                     std::string_view query) {
    AssembledInput input;
    if (mode == ServiceMode::system_message) {
        input.messages.push_back({"system", std::string(secret)});
        input.messages.push_back({"user", std::string(query)});
    } else {
        std::string joined(secret);
        joined += separator;
        joined += query;
        input.messages.push_back({"user", std::move(joined)});
    }
    return input;
}

/// Output filter: blanks any generation sharing a contiguous `defense.n`-gram
/// with the secret.
inline QueryResponse apply_defense(std::string_view generation, std::string_view secret, const DefenseConfig& defense,
                                   const MetricConfig& metric = {}) {
    if (!defense.enabled) throw InvalidInput("apply_defense called with a disabled defense");
    if (defense.n < 1) throw InvalidInput("defense n must be >= 1");
    QueryResponse out;
    if (ngram_overlap(generation, secret, defense.n, metric)) {
        out.text = defense.blocked_response;
        out.blocked = true;
    } else {
        out.text = std::string(generation);
    }
    return out;
}

/// A secret prompt served through a backend, optionally behind the n-gram
/// defense. Immutable after construction.
class TargetService final : public QueryService {
public:
    TargetService(PromptRecord prompt, ServiceConfig config) : prompt_(std::move(prompt)), config_(std::move(config)) {
        if (!config_.backend) throw ConfigError("service has no backend");
        if (prompt_.text.empty()) throw InvalidInput("prompt '" + prompt_.id + "' has empty text");
        if (config_.defense && config_.defense->enabled) {
            if (config_.defense->n < 1) throw ConfigError("defense n must be >= 1");
            if (tokenize(prompt_.text, config_.metric).tokens.size() < static_cast<std::size_t>(config_.defense->n))
                log::warn("prompt '" + prompt_.id + "' is shorter than " + std::to_string(config_.defense->n) +
                          " tokens; the n-gram defense cannot protect it");
        }
    }

    QueryResponse respond(std::string_view query) const override {
        if (query.empty()) throw InvalidInput("query is empty");
        const auto input = assemble_input(config_.mode, config_.separator, prompt_.text, query);
        auto generation = config_.backend->generate(input, config_.generation);

        QueryResponse response;
        if (config_.defense && config_.defense->enabled) {
            response = apply_defense(generation.text, prompt_.text, *config_.defense, config_.metric);
        } else {
            response.text = std::move(generation.text);
        }
        response.backend_metadata = std::move(generation.metadata);
        return response;
    }

    const PromptRecord& prompt() const noexcept { return prompt_; }
    const ServiceConfig& config() const noexcept { return config_; }

private:
    PromptRecord prompt_;
    ServiceConfig config_;
};

} // namespace promptleak
