#pragma once

#include <stdexcept>
#include <string>

namespace dirl {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are not conformable.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of range or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A feature row with (near) zero norm reached l2 normalization.
class DegenerateFeatureError : public Error {
 public:
  using Error::Error;
};

/// A class has fewer examples than a selection requires.
class ShortageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A forward operation saw a NaN or infinite input.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace dirl
