#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedpoison {

/// Precondition violated by the caller (bad dimensions, empty batch, k > K, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite ones are required.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Local training diverged or an agent failed to produce an update.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed binary or text input. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Experiment configuration that fails schema validation.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure; the message names the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fedpoison
