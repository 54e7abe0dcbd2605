#pragma once

#include <stdexcept>
#include <string>

namespace dtrval {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad parameters or an impossible combination of options.
class InvalidConfiguration : public Error {
 public:
  using Error::Error;
};

// Input values that violate a precondition (all-zero weights, non-binary A, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Matrix / vector dimensions that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed data files; messages carry the offending row.
class DataError : public Error {
 public:
  using Error::Error;
};

// Two estimates that cannot be combined because they were not computed on
// the same observations / folds.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace dtrval
