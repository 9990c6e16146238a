#pragma once

#include <stdexcept>
#include <string>

namespace msds {

// Categories map one-to-one onto CLI exit codes (1, 2, 3).
enum class ErrorKind {
  validation = 1,
  pipeline = 2,
  degenerate = 3,
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

}  // namespace msds
