#pragma once

#include <stdexcept>
#include <string>

namespace tomofocus {

// Every failure raised by the library derives from Error. The CLI maps the
// concrete type to a process exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class DegenerateError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace exit_codes {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int io = 3;
inline constexpr int divergence = 4;
inline constexpr int precondition = 5;
inline constexpr int internal = 10;
}  // namespace exit_codes

inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return exit_codes::config;
  if (dynamic_cast<const IoError*>(&e)) return exit_codes::io;
  if (dynamic_cast<const DivergenceError*>(&e)) return exit_codes::divergence;
  if (dynamic_cast<const Error*>(&e)) return exit_codes::precondition;
  return exit_codes::internal;
}

}  // namespace tomofocus
