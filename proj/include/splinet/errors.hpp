#pragma once

#include <stdexcept>
#include <string>

namespace splinet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible extents between operands or layers.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid layer, loss or training configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

// A trace that was not produced by the layer it is paired with.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

// Malformed files: IDX headers, model JSON, schema violations.
class FormatError : public Error {
public:
    using Error::Error;
};

// File shorter than its header promises.
class LengthError : public FormatError {
public:
    using FormatError::FormatError;
};

class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace splinet
