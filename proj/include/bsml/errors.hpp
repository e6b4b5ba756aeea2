#pragma once

#include <stdexcept>
#include <string>

namespace bsml {

// Shape or length disagreement between parameters, inputs, labels or vectors.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// AUC requested for a label set that lacks one of the two classes.
class DegenerateAucError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Episode sampling could not find enough eligible, stratifiable samples.
class PoolExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or structurally impossible request.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unparseable file (run log, dataset, checkpoint, result table).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bsml
