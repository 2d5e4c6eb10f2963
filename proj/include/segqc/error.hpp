#pragma once

#include <stdexcept>
#include <string>

namespace segqc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a domain invariant (geometry, registry, design matrix, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened, read, written, or renamed.
class IoError : public Error {
public:
    using Error::Error;
};

/// A file was read but its content is malformed (bad NIfTI header, bad CSV cell, bad JSON).
class FormatError : public IoError {
public:
    using IoError::IoError;
};

} // namespace segqc
