#pragma once

#include <stdexcept>
#include <string>

namespace groundkit {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(std::string const & what) : std::runtime_error(what) {}
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
public:
    explicit ConfigError(std::string const & what) : Error(what) {}
};

/// A bounding box with zero extent where a positive extent is required.
class DegenerateBoxError : public Error {
public:
    explicit DegenerateBoxError(std::string const & what) : Error(what) {}
};

/// Raised when a bbox cannot fit inside the requested crop size, so the
/// resampling pass must be skipped for that sample.
class BypassResampling : public Error {
public:
    explicit BypassResampling(std::string const & what) : Error(what) {}
};

/// Malformed or unloadable input data (datasets, images, fixtures).
class DataError : public Error {
public:
    explicit DataError(std::string const & what) : Error(what) {}
};

/// HTTP/transport failure talking to a model server. Carries enough metadata
/// for callers to log and for the retry loop to decide what to do.
class TransportError : public Error {
public:
    TransportError(std::string const & what, int status, bool retryable, int attempts)
        : Error(what), status_code(status), retryable(retryable), attempts(attempts) {}

    int status_code;   // 0 when no HTTP status was received
    bool retryable;
    int attempts;      // requests actually sent before giving up
};

/// End-to-end pipeline failure (e.g. no tile produced a usable candidate).
class PipelineError : public Error {
public:
    explicit PipelineError(std::string const & what) : Error(what) {}
};

} // namespace groundkit
