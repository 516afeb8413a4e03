#pragma once

#include <stdexcept>
#include <string>

namespace mlcil {

// Raised for malformed or missing files, dimension mismatches between data
// artifacts, and invalid protocol parameters. Maps to CLI exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a verification step (gradient check, invariant assertion)
// fails. Maps to CLI exit code 3.
struct CheckError : std::runtime_error {
    explicit CheckError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_data(bool cond, const std::string& msg) {
    if (!cond) throw DataError(msg);
}

}  // namespace mlcil
