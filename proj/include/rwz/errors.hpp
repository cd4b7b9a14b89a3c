#pragma once

#include <stdexcept>
#include <string>

namespace rwz {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or structural inputs that do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced or consumed somewhere it must not be.
class NumericError : public Error {
public:
    using Error::Error;
};

/// An operation invoked in the wrong lifecycle state.
class StateError : public Error {
public:
    using Error::Error;
};

/// A caller-supplied parameter is out of its documented range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Problems with input data files or their contents.
class DataError : public Error {
public:
    using Error::Error;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A requested time or index lies outside the data that is available.
class OutOfRangeError : public Error {
public:
    using Error::Error;
};

}  // namespace rwz
