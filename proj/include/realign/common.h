#pragma once

#include <stdexcept>
#include <string>

namespace realign {

// Raised for contract violations on inputs (bad parameters, malformed files,
// empty collections where a value is required).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace realign
