#pragma once

#include <stdexcept>
#include <string>

namespace dro {

// Project-wide error type. Data/usage errors carry a human-readable message
// that names the offending input (index, file:line, task id).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

}  // namespace dro
