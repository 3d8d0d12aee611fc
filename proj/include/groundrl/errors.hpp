#pragma once

#include <stdexcept>
#include <string>

namespace groundrl {

// Every library error carries a short machine-parsable category, printed by
// the CLI as "<category>: <message>".
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error("usage_error", what) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error("dimension_error", what) {}
};

struct DataScarcityError : Error {
    explicit DataScarcityError(const std::string& what) : Error("data_scarcity_error", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io_error", what) {}
};

struct MissingArtifactError : Error {
    explicit MissingArtifactError(const std::string& what) : Error("missing_artifact", what) {}
};

}  // namespace groundrl
