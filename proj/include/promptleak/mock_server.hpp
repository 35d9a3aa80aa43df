#pragma once

#include "promptleak/error.hpp"
#include "promptleak/target_service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <thread>

namespace promptleak {

/// Serves any Backend over the chat-completions wire format. Handlers keep no
/// per-request state, so concurrent clients never observe each other.
class MockChatServer {
public:
    explicit MockChatServer(std::shared_ptr<const Backend> backend) : backend_(std::move(backend)) {
        if (!backend_) throw ConfigError("mock server needs a backend");
        auto handler = [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); };
        server_.Post("/v1/chat/completions", handler);
        server_.Post("/chat/completions", handler);
        server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });
    }

    ~MockChatServer() { stop(); }

    MockChatServer(const MockChatServer&) = delete;
    MockChatServer& operator=(const MockChatServer&) = delete;

    /// Binds `host:port`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host = "127.0.0.1", int port = 0) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound <= 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
        port_ = bound;
        return bound;
    }

    /// Serves on the calling thread until stop().
    void serve() { server_.listen_after_bind(); }

    void start_background() {
        thread_ = std::thread([this] { serve(); });
        server_.wait_until_ready();
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }

private:
    static void fail(httplib::Response& res, int status, const std::string& message) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", {{"message", message}, {"type", "invalid_request_error"}}}}.dump(),
                        "application/json");
    }

    void handle(const httplib::Request& req, httplib::Response& res) const {
        AssembledInput input;
        GenerationParams params;
        std::string model;
        try {
            const auto j = nlohmann::json::parse(req.body);
            if (!j.is_object() || !j.contains("messages") || !j["messages"].is_array())
                return fail(res, 400, "request needs a messages array");
            for (const auto& m : j["messages"]) {
                if (!m.is_object() || !m.contains("role") || !m["role"].is_string() || !m.contains("content") ||
                    !m["content"].is_string())
                    return fail(res, 400, "every message needs string role and content");
                input.messages.push_back(m.get<ChatMessage>());
            }
            model = j.value("model", "");
            params.temperature = j.value("temperature", 0.0);
            params.max_tokens = j.value("max_tokens", 512);
        } catch (const nlohmann::json::exception& e) {
            return fail(res, 400, std::string("malformed request: ") + e.what());
        }

        std::string text;
        try {
            text = backend_->generate(input, params).text;
        } catch (const std::exception& e) {
            return fail(res, 500, e.what());
        }
        const nlohmann::json body = {
            {"id", "chatcmpl-mock"},
            {"object", "chat.completion"},
            {"model", model},
            {"choices",
             {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}}},
        };
        res.set_content(body.dump(), "application/json");
    }

    std::shared_ptr<const Backend> backend_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

} // namespace promptleak
