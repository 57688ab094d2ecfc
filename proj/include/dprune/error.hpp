#pragma once

#include <stdexcept>
#include <string>

namespace dprune {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/layout mismatch; message names the offending dimension.
struct DimensionError : Error {
    using Error::Error;
};

// Violated operation precondition (bad argument ranges, ordering, ...).
struct PreconditionError : Error {
    using Error::Error;
};

// Non-finite value reached a place that must stay finite.
struct NumericError : Error {
    using Error::Error;
};

// Scorer or metric asked to run on a task it is not defined for.
struct UnsupportedTaskError : Error {
    using Error::Error;
};

// Metric undefined on the given inputs (e.g. single-class ROC-AUC).
struct UndefinedMetricError : Error {
    using Error::Error;
};

// File parsing failure; message carries row/column context.
struct ParseError : Error {
    using Error::Error;
};

// Filesystem failure; message carries the path.
struct IoError : Error {
    using Error::Error;
};

}  // namespace dprune
