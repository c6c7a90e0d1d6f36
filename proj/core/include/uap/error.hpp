#pragma once

#include <stdexcept>
#include <string>

namespace uap {

/// Bad shapes, out-of-range parameters, malformed inputs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition on the data (not the argument types) was violated,
/// e.g. asking for the nearest boundary of a misclassified point.
class PreconditionViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The encoder produced an all-zero vector before normalization.
class DegenerateEncoding : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File content does not match its recorded hash, or cannot be parsed.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Files are intact but violate a dataset invariant.
class CorruptDataset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uap
