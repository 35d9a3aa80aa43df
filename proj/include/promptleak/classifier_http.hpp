#pragma once

#include "promptleak/error.hpp"
#include "promptleak/verifier.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <vector>

namespace promptleak {

/// Client for the scoring protocol:
///   POST /score        {candidate, context:[...]}          -> {probability}
///   POST /score_batch  {requests:[{candidate, context}...]} -> {probabilities:[...]}
/// Any transport or protocol failure becomes a VerificationError.
class HttpClassifier final : public Classifier {
public:
    explicit HttpClassifier(std::string base_url, std::chrono::milliseconds timeout = std::chrono::seconds(120))
        : base_url_(std::move(base_url)), timeout_(timeout) {
        if (base_url_.empty()) throw ConfigError("classifier endpoint URL is empty");
    }

    double score(const std::string& candidate, const std::vector<std::string>& context) const override {
        const auto j = post("/score", {{"candidate", candidate}, {"context", context}});
        if (!j.contains("probability") || !j["probability"].is_number())
            throw VerificationError("/score response lacks a numeric probability");
        return j["probability"].get<double>();
    }

    std::vector<double> score_batch(const std::vector<ClassifierRequest>& requests) const override {
        nlohmann::json body = {{"requests", nlohmann::json::array()}};
        for (const auto& r : requests) body["requests"].push_back({{"candidate", r.candidate}, {"context", r.context}});
        const auto j = post("/score_batch", body);
        if (!j.contains("probabilities") || !j["probabilities"].is_array())
            throw VerificationError("/score_batch response lacks a probabilities array");
        std::vector<double> out;
        for (const auto& p : j["probabilities"]) {
            if (!p.is_number()) throw VerificationError("/score_batch returned a non-numeric probability");
            out.push_back(p.get<double>());
        }
        return out;
    }

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
        httplib::Client client(base_url_);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
        client.set_connection_timeout(secs.count());
        client.set_read_timeout(secs.count());
        auto res = client.Post(path, body.dump(), "application/json");
        if (!res) throw VerificationError("classifier endpoint unreachable: " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw VerificationError("classifier endpoint answered HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw VerificationError(std::string("classifier response is not JSON: ") + e.what());
        }
    }

    std::string base_url_;
    std::chrono::milliseconds timeout_;
};

/// Serves a Classifier over the scoring protocol. Malformed requests get 400.
class ClassifierServer {
public:
    explicit ClassifierServer(std::shared_ptr<const Classifier> classifier) : classifier_(std::move(classifier)) {
        server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
            handle(req, res, false);
        });
        server_.Post("/score_batch", [this](const httplib::Request& req, httplib::Response& res) {
            handle(req, res, true);
        });
    }
    ~ClassifierServer() { stop(); }

    ClassifierServer(const ClassifierServer&) = delete;
    ClassifierServer& operator=(const ClassifierServer&) = delete;

    int start_background(const std::string& host = "127.0.0.1") {
        port_ = server_.bind_to_any_port(host);
        if (port_ <= 0) throw ConfigError("cannot bind classifier server");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }

private:
    static bool parse_request(const nlohmann::json& j, ClassifierRequest& out) {
        if (!j.is_object() || !j.contains("candidate") || !j["candidate"].is_string() || !j.contains("context") ||
            !j["context"].is_array())
            return false;
        out.candidate = j["candidate"].get<std::string>();
        for (const auto& c : j["context"]) {
            if (!c.is_string()) return false;
            out.context.push_back(c.get<std::string>());
        }
        return true;
    }

    void handle(const httplib::Request& req, httplib::Response& res, bool batch) const {
        auto bad = [&](const std::string& why) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", why}}.dump(), "application/json");
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            return bad("body is not JSON");
        }
        if (!batch) {
            ClassifierRequest r;
            if (!parse_request(j, r)) return bad("expected {candidate: string, context: [string]}");
            res.set_content(nlohmann::json{{"probability", classifier_->score(r.candidate, r.context)}}.dump(),
                            "application/json");
            return;
        }
        if (!j.is_object() || !j.contains("requests") || !j["requests"].is_array())
            return bad("expected {requests: [...]}");
        std::vector<ClassifierRequest> requests;
        for (const auto& item : j["requests"]) {
            ClassifierRequest r;
            if (!parse_request(item, r)) return bad("expected {candidate: string, context: [string]} per request");
            requests.push_back(std::move(r));
        }
        res.set_content(nlohmann::json{{"probabilities", classifier_->score_batch(requests)}}.dump(),
                        "application/json");
    }

    std::shared_ptr<const Classifier> classifier_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

} // namespace promptleak
