#pragma once

#include <stdexcept>
#include <string>

namespace strata {

// Broad failure classes. The CLI maps them onto its exit codes.
enum class ErrorKind {
  invalid_argument,
  config,        // malformed config / trace / template input
  io,            // unreadable or unwritable file
  format,        // unparseable binary or CSV
  environment,   // missing privilege or kernel interface
  probe,         // backend failure while sampling
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace strata
