#pragma once

#include <stdexcept>
#include <string>

namespace riskgrad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model (MDP, feature map, policy) violates one of its structural invariants.
class InvalidModel : public Error {
public:
    using Error::Error;
};

/// The target state was not reached within the horizon bound.
class HorizonExceeded : public Error {
public:
    using Error::Error;
};

/// An operation that needs a discount strictly below one was given gamma = 1.
class InvalidDiscount : public Error {
public:
    using Error::Error;
};

/// Exhaustive enumeration would exceed its leaf budget.
class BudgetExceeded : public Error {
public:
    using Error::Error;
};

class EmptyBatch : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// A probability level (alpha, beta) outside of its admissible open interval.
class RangeError : public Error {
public:
    using Error::Error;
};

/// An augmented transition was requested from the target state.
class TerminalStep : public Error {
public:
    using Error::Error;
};

/// An end-of-episode update was requested before the target state was reached.
class NotTerminal : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    using Error::Error;
};

/// Experiment or environment configuration is invalid.
class ConfigInvalid : public Error {
public:
    using Error::Error;
};

}  // namespace riskgrad
