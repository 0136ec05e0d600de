#pragma once

#include <stdexcept>
#include <string>

namespace spsmvg {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by bad user input (files, manifests, configuration). The CLI maps these to exit 1.
class ValidationError : public Error {
public:
  using Error::Error;
};

class DimensionError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class IngestionError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ManifestError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class CheckpointError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class EvaluationError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

// A view whose cosine similarity is undefined (zero norm).
class DegenerateViewError : public Error {
public:
  using Error::Error;
};

class DivergenceError : public Error {
public:
  using Error::Error;
};

class GradientCheckError : public Error {
public:
  using Error::Error;
};

} // namespace spsmvg
