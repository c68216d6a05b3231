#pragma once

#include <stdexcept>
#include <string>

namespace poisonlab {

// Maps to exit code 2 in the CLI: bad arguments, violated preconditions.
struct RejectedInputError : std::invalid_argument {
    explicit RejectedInputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed file contents (wrong magic, truncated payload, bad CSV row).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values encountered in activations, losses or gradients.
struct NumericOverflowError : std::runtime_error {
    explicit NumericOverflowError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage failed; carries the stage name for reporting.
struct StageError : std::runtime_error {
    std::string stage;
    StageError(std::string stage_name, const std::string& msg)
        : std::runtime_error("stage '" + stage_name + "' failed: " + msg), stage(std::move(stage_name)) {}
};

}  // namespace poisonlab
