#pragma once

#include <stdexcept>
#include <string>

namespace mdm {

// Dimension or layout disagreement between operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Value outside an operation's mathematical domain (log of a non-positive entry, empty reduction).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Caller broke a documented precondition.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct EstimationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimizerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mdm
