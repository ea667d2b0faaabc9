#pragma once

#include <stdexcept>
#include <string>

namespace gemlab {

/// Malformed data: non-finite logits, out-of-range token ids, bad vectors.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// A hyperparameter outside its admissible range (beta, gamma, lr, ...).
class InvalidParameter : public std::invalid_argument {
public:
    explicit InvalidParameter(const std::string& what) : std::invalid_argument(what) {}
};

/// A precondition of a mathematical result does not hold.
class PreconditionError : public std::domain_error {
public:
    explicit PreconditionError(const std::string& what) : std::domain_error(what) {}
};

/// Experiment configuration could not be parsed or validated.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gemlab
