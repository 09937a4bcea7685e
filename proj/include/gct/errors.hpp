#pragma once

#include <stdexcept>
#include <string>

namespace gct {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the operation's domain (negative probability, bad row sum).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A softmax row has no unmasked entry.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

class OptimizerError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or incompatible option combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An argument names something of the wrong kind (e.g. a non-diagnosis row).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition (non-stochastic adjacency, P/M mismatch).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A task cannot run on the given data (e.g. no ground-truth structure).
class TaskError : public Error {
 public:
  using Error::Error;
};

class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Ranking metric is undefined because only one class is present.
class MetricUndefinedError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace gct
