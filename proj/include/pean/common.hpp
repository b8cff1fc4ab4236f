#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pean {

// All recoverable failures throw Error; the CLI maps categories to exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { Shape, Config, Io, Prerequisite, Numeric };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

[[noreturn]] inline void fail_shape(const std::string& msg) { throw Error(Error::Kind::Shape, msg); }
[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(Error::Kind::Config, msg); }
[[noreturn]] inline void fail_io(const std::string& msg) { throw Error(Error::Kind::Io, msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw Error(Error::Kind::Numeric, msg); }

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail_shape(msg);
}

template <class T>
bool is_finite(T v) {
  return std::isfinite(static_cast<double>(v));
}

}  // namespace pean
