#pragma once

#include <stdexcept>
#include <string>

namespace longctx {

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

struct RolloutFailed : std::runtime_error {
    RolloutFailed(const std::string& msg, int chunk) : std::runtime_error(msg), chunk_index(chunk) {}
    int chunk_index = -1;
};

}  // namespace longctx
