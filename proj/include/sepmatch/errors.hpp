#pragma once

#include <stdexcept>
#include <string>

namespace sepmatch {

// Error taxonomy mirrors the CLI exit-code contract:
//   InputError -> 2, ConvergenceError -> 3, IdentificationError -> 4.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConvergenceError : std::runtime_error {
    explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IdentificationError : std::runtime_error {
    explicit IdentificationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A matching cell required to be strictly positive was zero; message names the cell.
struct ZeroCellError : InputError {
    explicit ZeroCellError(const std::string& msg) : InputError(msg) {}
};

}  // namespace sepmatch
