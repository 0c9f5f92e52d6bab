#pragma once

#include <stdexcept>

namespace dualclvsa {

// Operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (unsorted input, non-scalar loss, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Inconsistent or invalid configuration values.
class ConfigurationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Not enough usable data to build a dataset.
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (bad prices, span mismatch, parse errors).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A metric whose formula is undefined for the given series (e.g. zero variance).
class UndefinedMetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dualclvsa
