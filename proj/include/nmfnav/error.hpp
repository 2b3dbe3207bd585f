#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nmfnav {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached a place that requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the gradient tape (double backward, non-scalar loss, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Structured failure while decoding a NAVW or NAVD container.
class FormatError : public Error {
 public:
  enum class Kind { bad_magic, version_mismatch, truncated_container, truncated_record, unknown_tag, invalid_field };

  FormatError(Kind kind, std::string what, std::size_t record_index = npos)
      : Error(std::move(what)), kind_(kind), record_index_(record_index) {}

  Kind kind() const noexcept { return kind_; }
  /// Index of the offending record, or npos for header-level failures.
  std::size_t record_index() const noexcept { return record_index_; }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  Kind kind_;
  std::size_t record_index_;
};

inline const char* to_string(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::bad_magic: return "bad magic";
    case FormatError::Kind::version_mismatch: return "version mismatch";
    case FormatError::Kind::truncated_container: return "truncated container";
    case FormatError::Kind::truncated_record: return "truncated record";
    case FormatError::Kind::unknown_tag: return "unknown tag";
    case FormatError::Kind::invalid_field: return "invalid field";
  }
  return "unknown";
}

}  // namespace nmfnav
