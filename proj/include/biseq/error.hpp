#pragma once

#include <stdexcept>
#include <string>

namespace biseq {

// Error taxonomy shared by the whole library. The CLI maps NumericError to
// exit code 2 and every other Error to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between tensors or model parts.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid model or run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Bad user-supplied data (records, labels, ids).
struct InputError : Error {
    using Error::Error;
};

// NaN or Inf encountered during computation.
struct NumericError : Error {
    using Error::Error;
};

// An API called in a way its contract forbids.
struct UsageError : Error {
    using Error::Error;
};

// A file whose contents could not be parsed; messages carry line numbers.
struct ParseError : Error {
    using Error::Error;
};

// A file parsed but violates structural expectations (e.g. ragged rows).
struct FormatError : Error {
    using Error::Error;
};

// A metric that is not defined for the given inputs (e.g. AP with no
// positive items).
struct UndefinedMetricError : Error {
    using Error::Error;
};

// Cooperative interrupt: raised after completed work has been flushed when a
// cancellation was requested (e.g. Ctrl-C in the CLI).
struct CancelledError : Error {
    using Error::Error;
};

} // namespace biseq
