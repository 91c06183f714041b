#pragma once

#include <stdexcept>
#include <string>

namespace shapesos {

// Base class of every error raised by the library. Each subclass maps onto a
// distinct failure mode that callers (and the CLI exit codes) distinguish.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad dimensions, invalid boxes, unparsable files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Requested multiplier degree cannot balance the target polynomial.
class DegreeMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A conic solve ended without an optimal (or near-optimal) point.
class SolverFailed : public Error {
 public:
  using Error::Error;
};

class SolveNotOptimal : public SolverFailed {
 public:
  using SolverFailed::SolverFailed;
};

class MissingCertificate : public Error {
 public:
  using Error::Error;
};

// CLSE prediction requested at a point outside the convex hull of the
// training features.
class OutsideHull : public Error {
 public:
  using Error::Error;
};

class NonConvergence : public Error {
 public:
  using Error::Error;
};

}  // namespace shapesos
