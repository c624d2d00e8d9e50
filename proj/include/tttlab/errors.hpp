#pragma once

#include <stdexcept>
#include <string>

namespace tttlab {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller supplied arguments that violate a documented precondition.
class UsageError : public Error {
public:
    using Error::Error;
};

// Tensor shapes that do not fit the requested primitive.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Malformed or inconsistent data: files, schemas, splits, labels.
class DataError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced by arithmetic, or an optimisation that diverged.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace tttlab
