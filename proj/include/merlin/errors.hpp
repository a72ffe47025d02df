#pragma once

#include <stdexcept>
#include <string>

namespace merlin {

// Error taxonomy mapped to CLI exit codes:
//   ConfigError -> 2 (usage / unknown names), DataError + ContractError -> 3,
//   NumericalError + EstimatorFault -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unknown profile tags, estimator names, feature-group names, bad flag values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or version-mismatched files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Violated API precondition (packet outside step window, empty dataset, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-PSD covariance, non-finite loss, KL divergence blow-up.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// An estimator callback returned a non-finite value mid-episode.
class EstimatorFault : public Error {
 public:
  using Error::Error;
};

}  // namespace merlin
