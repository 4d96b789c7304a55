#pragma once

#include <stdexcept>
#include <string>

namespace codesign {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ChannelMismatch : public Error {
public:
    using Error::Error;
};

class UnmappedLayer : public Error {
public:
    using Error::Error;
};

class InvalidGrowth : public Error {
public:
    using Error::Error;
};

class Infeasible : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class PoolExhausted : public Error {
public:
    using Error::Error;
};

class EmptyInput : public Error {
public:
    using Error::Error;
};

/// Raised while decoding a JSON document; carries the JSON pointer of the
/// offending value.
class SchemaError : public Error {
public:
    SchemaError(std::string pointer, const std::string& message)
        : Error(pointer.empty() ? message : pointer + ": " + message),
          pointer_(std::move(pointer)) {}

    const std::string& pointer() const noexcept { return pointer_; }

private:
    std::string pointer_;
};

} // namespace codesign
