#pragma once

#include <stdexcept>
#include <string>

namespace mvnrsfm {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Data/format problems: malformed manifests, shape mismatches, bad paths.
/// CLI maps these to exit code 3.
struct DataError : Error {
    using Error::Error;
};

/// Numerical problems: degenerate inputs, divergence, invalid values.
/// CLI maps these to exit code 4.
struct NumericError : Error {
    using Error::Error;
};

struct InvalidInputError : NumericError {
    using NumericError::NumericError;
};

/// Input is too degenerate for the requested operation to have a unique
/// answer (rank-deficient shapes, coincident points, reflection ambiguity,
/// points at infinity).
struct DegenerateInputError : NumericError {
    using NumericError::NumericError;
};

struct InsufficientViewsError : NumericError {
    using NumericError::NumericError;
};

struct NumericalFailureError : NumericError {
    using NumericError::NumericError;
};

/// Dimension mismatch between operands.
struct ShapeError : DataError {
    using DataError::DataError;
};

struct FormatError : DataError {
    using DataError::DataError;
};

struct UnsupportedVersionError : FormatError {
    using FormatError::FormatError;
};

struct ConfigMismatchError : DataError {
    using DataError::DataError;
};

}  // namespace mvnrsfm
