#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace msn {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  non_finite,
  missing_file,
  malformed_header,
  unsupported_encoding,
  io,
  config,
  data,
  version_mismatch,
  runtime,
};

std::string_view errc_name(Errc code);

/// Exit category the CLI reports for an error code: 2 config, 3 data, 4 runtime.
int exit_code_for(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace msn
