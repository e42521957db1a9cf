#pragma once

#include <stdexcept>
#include <string>

namespace xbarsim {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, shapes or configuration. Maps to CLI exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Numerical or runtime failure (singular circuit, divergence, I/O). Exit code 2.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

}  // namespace detail
}  // namespace xbarsim
