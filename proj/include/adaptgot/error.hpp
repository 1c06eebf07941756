#pragma once

#include <stdexcept>
#include <string>

namespace adaptgot {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-contract input (bad records, bad config, bad shapes).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN/Inf.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace adaptgot
