#pragma once

#include <stdexcept>
#include <string>

namespace promptleak {

/// Base of every error raised by the harness.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Transport-level failure talking to a generation backend. `retryable()` is
/// true for failures a caller may retry later (timeouts, 429, 5xx).
class ServiceError : public Error {
public:
    ServiceError(const std::string& what, bool retryable, int status = 0)
        : Error(what), retryable_(retryable), status_(status) {}

    bool retryable() const noexcept { return retryable_; }
    int status() const noexcept { return status_; }

private:
    bool retryable_;
    int status_;
};

/// The peer answered, but the payload does not follow the wire contract.
class ProtocolError : public Error {
public:
    using Error::Error;
};

class IngestionError : public Error {
public:
    IngestionError(const std::string& what, long record_index = -1)
        : Error(record_index >= 0 ? what + " (record " + std::to_string(record_index) + ")" : what),
          record_index_(record_index) {}

    long record_index() const noexcept { return record_index_; }

private:
    long record_index_;
};

class SplitError : public Error {
public:
    using Error::Error;
};

class VerificationError : public Error {
public:
    using Error::Error;
};

class ReportError : public Error {
public:
    using Error::Error;
};

} // namespace promptleak
