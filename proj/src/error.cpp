#include "vetcode/error.hpp"

namespace vetcode {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::parse: return "parse";
    case ErrorKind::duplicate: return "duplicate";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::cycle: return "cycle";
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::validation: return "validation";
    case ErrorKind::unavailable: return "unavailable";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace vetcode
