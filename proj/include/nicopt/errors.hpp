#pragma once

#include <stdexcept>
#include <string>

namespace nicopt {

/// Invalid argument to a library call (dimension mismatch, i == j, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input text (LOLIB, JSON instance files).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A solution violates a problem constraint (e.g. unbalanced bipartition).
class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Instance too large for an exhaustive method.
class SizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during model evaluation or training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, truncated or mismatched checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse, such as requesting gradients without a retained forward pass.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Missing or inconsistent experiment data (best-known values, manifests).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside a formula's domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace nicopt
