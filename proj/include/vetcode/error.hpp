#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vetcode {

enum class ErrorKind {
  invalid_argument,
  parse,
  duplicate,
  not_found,
  cycle,
  shape,
  config,
  conflict,
  validation,
  unavailable,
  io,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so the CLI and the
// HTTP layer can map it to an exit status / response code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace vetcode
