#pragma once

#include <stdexcept>
#include <string>

namespace geoproto {

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/operand dimensions do not satisfy an operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

/// An operation was asked to reduce over a region with no active pixels.
struct EmptyRegionError : Error {
  using Error::Error;
};

/// A caller violated a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

/// An object was used in a state that forbids the requested operation.
struct StateError : Error {
  using Error::Error;
};

/// Invalid or inconsistent configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// A serialized artifact (checkpoint, image) could not be decoded.
struct FormatError : Error {
  using Error::Error;
};

/// Synthetic data generation exhausted its retry budget.
struct GenerationError : Error {
  using Error::Error;
};

/// The support set of an episode yields no usable prototypes.
struct DegenerateSupportError : Error {
  using Error::Error;
};

/// A distance transform was requested on a mask with no background pixels.
struct NoBackgroundError : Error {
  using Error::Error;
};

}  // namespace geoproto
