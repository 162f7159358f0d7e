#pragma once

#include <stdexcept>
#include <string>

namespace stalt {

// All domain failures surface as stalt::Error; the message is the contract
// that tests and the CLI match against.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stalt
