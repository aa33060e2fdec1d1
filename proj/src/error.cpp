#include "fuserank/error.hpp"

namespace fuserank {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::geometry: return "geometry-error";
    case ErrorKind::format: return "format-error";
    case ErrorKind::graph: return "graph-error";
    case ErrorKind::numeric: return "numeric-error";
    case ErrorKind::staleness: return "staleness-error";
    case ErrorKind::config: return "config-error";
    case ErrorKind::io: return "io-error";
  }
  return "error";
}

}  // namespace fuserank
