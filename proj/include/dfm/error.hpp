#pragma once

#include <stdexcept>
#include <string>

namespace dfm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a state space is too large for dense enumeration.
class NotEnumerableError : public Error {
 public:
  using Error::Error;
};

// A step kernel produced a negative staying probability in strict mode.
class StrictModeError : public Error {
 public:
  StrictModeError(const std::string& what, int position)
      : Error(what), position_(position) {}
  int position() const { return position_; }

 private:
  int position_;
};

}  // namespace dfm
