#pragma once

#include <stdexcept>
#include <string>

namespace ekgnet {

enum class Errc {
  invalid_argument = 1,
  io = 2,
  parse = 3,
  format = 4,
  state = 5,
  failure = 6,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace ekgnet
