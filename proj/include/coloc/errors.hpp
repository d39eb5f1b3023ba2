#pragma once

#include <stdexcept>
#include <string>

namespace coloc {

// Base class for all library errors. ConfigError maps to CLI usage
// failures (exit 1); everything else is a runtime/data failure (exit 2).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape or rank mismatch; message names the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Value outside an operation's domain (log of non-positive input,
// empty caption mask, ...).
struct DomainError : Error {
  using Error::Error;
};

// Out-of-range index (token slice, caption id, ...).
struct IndexError : Error {
  using Error::Error;
};

// Invalid configuration detected at setup time.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or truncated file (checkpoint, corpus).
struct FormatError : Error {
  using Error::Error;
};

// Invalid data fed to an otherwise well-configured operation
// (unknown vocabulary id, overlapping spans, undersized corpus, ...).
struct DataError : Error {
  using Error::Error;
};

}  // namespace coloc
