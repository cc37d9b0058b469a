#include "msn/error.hpp"

namespace msn {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::non_finite: return "non_finite";
    case Errc::missing_file: return "missing_file";
    case Errc::malformed_header: return "malformed_header";
    case Errc::unsupported_encoding: return "unsupported_encoding";
    case Errc::io: return "io";
    case Errc::config: return "config";
    case Errc::data: return "data";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::runtime: return "runtime";
  }
  return "unknown";
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::config:
    case Errc::invalid_argument:
      return 2;
    case Errc::missing_file:
    case Errc::malformed_header:
    case Errc::unsupported_encoding:
    case Errc::io:
    case Errc::data:
    case Errc::version_mismatch:
      return 3;
    default:
      return 4;
  }
}

}  // namespace msn
