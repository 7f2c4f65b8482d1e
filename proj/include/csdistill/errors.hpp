#pragma once

#include <stdexcept>
#include <string>

namespace csd {

// Base error for contract violations anywhere in the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Config parsing/validation failure; the message names the offending key path.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace csd
