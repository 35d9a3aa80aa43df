#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace promptleak::log {

using Sink = std::function<void(std::string_view level, std::string_view message)>;

namespace detail {

struct State {
    std::mutex mutex;
    Sink sink = [](std::string_view level, std::string_view message) {
        std::cerr << "[promptleak] " << level << ": " << message << '\n';
    };
};

inline State& state() {
    static State s;
    return s;
}

} // namespace detail

/// Replaces the process-wide sink; returns the previous one so tests can restore it.
inline Sink set_sink(Sink sink) {
    auto& s = detail::state();
    std::lock_guard lock(s.mutex);
    return std::exchange(s.sink, std::move(sink));
}

inline void warn(std::string_view message) {
    auto& s = detail::state();
    std::lock_guard lock(s.mutex);
    if (s.sink) s.sink("warning", message);
}

inline void info(std::string_view message) {
    auto& s = detail::state();
    std::lock_guard lock(s.mutex);
    if (s.sink) s.sink("info", message);
}

/// Captures warnings for the lifetime of the object.
class ScopedCapture {
public:
    ScopedCapture() {
        previous_ = set_sink([this](std::string_view level, std::string_view message) {
            if (level == "warning") warnings_.emplace_back(message);
        });
    }
    ~ScopedCapture() { set_sink(std::move(previous_)); }

    ScopedCapture(const ScopedCapture&) = delete;
    ScopedCapture& operator=(const ScopedCapture&) = delete;

    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    Sink previous_;
    std::vector<std::string> warnings_;
};

} // namespace promptleak::log
