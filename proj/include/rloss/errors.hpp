#pragma once

#include <stdexcept>
#include <string>

namespace rloss {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  enum class Kind { unsupported_magic, malformed_header, unsupported_maxval, truncated_payload };

  ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class InvalidLabelError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SimplexError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

/// Labeled pixels of a proposal disagree with the scribbles.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public Error {
 public:
  TrainingDivergence(int iteration, const std::string& what) : Error(what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

}  // namespace rloss
