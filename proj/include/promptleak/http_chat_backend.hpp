#pragma once

#include "promptleak/error.hpp"
#include "promptleak/target_service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace promptleak {

/// Spaces request starts so that at most `requests_per_minute` begin in any
/// minute. Shared by every thread using the same backend.
class RateLimiter {
public:
    explicit RateLimiter(int requests_per_minute) {
        if (requests_per_minute > 0)
            interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::minutes(1)) /
                        requests_per_minute;
    }

    void acquire() {
        if (interval_.count() == 0) return;
        std::chrono::steady_clock::time_point slot;
        {
            std::lock_guard lock(mutex_);
            const auto now = std::chrono::steady_clock::now();
            slot = std::max(now, next_);
            next_ = slot + interval_;
        }
        std::this_thread::sleep_until(slot);
    }

private:
    std::mutex mutex_;
    std::chrono::steady_clock::duration interval_{0};
    std::chrono::steady_clock::time_point next_{};
};

/// Counting gate bounding in-flight requests.
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(int limit) : available_(std::max(1, limit)) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }
    void release() {
        {
            std::lock_guard lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

    class Lease {
    public:
        explicit Lease(ConcurrencyGate& gate) : gate_(gate) { gate_.acquire(); }
        ~Lease() { gate_.release(); }
        Lease(const Lease&) = delete;
        Lease& operator=(const Lease&) = delete;

    private:
        ConcurrencyGate& gate_;
    };

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int available_;
};

struct HttpEndpoint {
    /// scheme://host[:port], e.g. "https://api.openai.com" or "http://127.0.0.1:8080".
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string model;
    /// Name of the environment variable holding the bearer token; empty or unset
    /// means no Authorization header.
    std::string api_key_env = "OPENAI_API_KEY";
    std::chrono::milliseconds timeout{60'000};
    int max_retries = 4;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::milliseconds max_backoff{8'000};
    int requests_per_minute = 0;
    int max_concurrent = 4;
};

inline nlohmann::json chat_request_body(const std::string& model, const AssembledInput& input,
                                        const GenerationParams& params) {
    return {{"model", model},
            {"messages", input.messages},
            {"temperature", params.temperature},
            {"max_tokens", params.max_tokens}};
}

/// Pulls choices[0].message.content out of a chat-completions response body.
inline std::string parse_chat_response(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        throw ProtocolError("response has no choices");
    const auto& choice = j["choices"][0];
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object())
        throw ProtocolError("first choice has no message");
    const auto& message = choice["message"];
    if (!message.contains("content") || !message["content"].is_string())
        throw ProtocolError("message has no string content");
    return message["content"].get<std::string>();
}

/// Chat-completions client. Non-2xx answers and transport failures are
/// retried with capped exponential backoff; once the budget is spent a
/// retryable ServiceError surfaces.
class HttpChatBackend final : public Backend {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit HttpChatBackend(HttpEndpoint endpoint, Sleeper sleeper = {})
        : endpoint_(std::move(endpoint)),
          sleeper_(sleeper ? std::move(sleeper) : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
          limiter_(std::make_shared<RateLimiter>(endpoint_.requests_per_minute)),
          gate_(std::make_shared<ConcurrencyGate>(endpoint_.max_concurrent)) {
        if (endpoint_.base_url.empty()) throw ConfigError("http backend needs a base URL");
        if (endpoint_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    }

    Generation generate(const AssembledInput& input, const GenerationParams& params) const override {
        const auto body = chat_request_body(endpoint_.model, input, params).dump();
        httplib::Headers headers;
        if (!endpoint_.api_key_env.empty()) {
            if (const char* key = std::getenv(endpoint_.api_key_env.c_str()); key && *key)
                headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        std::string last_failure;
        int last_status = 0;
        for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
            if (attempt > 0) sleeper_(backoff(attempt));
            limiter_->acquire();
            ConcurrencyGate::Lease lease(*gate_);

            httplib::Client client(endpoint_.base_url);
            const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint_.timeout);
            const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint_.timeout - secs);
            client.set_connection_timeout(secs.count(), usecs.count());
            client.set_read_timeout(secs.count(), usecs.count());
            client.set_write_timeout(secs.count(), usecs.count());

            auto res = client.Post(endpoint_.path, headers, body, "application/json");
            if (!res) {
                last_status = 0;
                last_failure = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 200 && res->status < 300) {
                Generation out;
                out.text = parse_chat_response(res->body);
                out.metadata["backend"] = name();
                out.metadata["attempts"] = std::to_string(attempt + 1);
                return out;
            }
            last_status = res->status;
            last_failure = "HTTP " + std::to_string(res->status);
        }
        throw ServiceError("chat backend gave up after " + std::to_string(endpoint_.max_retries + 1) +
                               " attempts: " + last_failure,
                           /*retryable=*/true, last_status);
    }

    std::string name() const override { return "http:" + endpoint_.model; }

    std::chrono::milliseconds backoff(int attempt) const {
        auto delay = endpoint_.initial_backoff;
        for (int i = 1; i < attempt && delay < endpoint_.max_backoff; ++i) delay *= 2;
        return std::min(delay, endpoint_.max_backoff);
    }

    const HttpEndpoint& endpoint() const noexcept { return endpoint_; }

private:
    HttpEndpoint endpoint_;
    Sleeper sleeper_;
    std::shared_ptr<RateLimiter> limiter_;
    std::shared_ptr<ConcurrencyGate> gate_;
};

} // namespace promptleak
