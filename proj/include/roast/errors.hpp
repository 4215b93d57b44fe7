#pragma once

#include <stdexcept>
#include <string>

namespace roast {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation does not hold.
struct PreconditionError : Error {
    using Error::Error;
};

/// Malformed input file or record.
struct ParseError : Error {
    using Error::Error;
};

struct SchemaError : Error {
    using Error::Error;
};

struct DimensionError : Error {
    using Error::Error;
};

/// Design matrix does not have full column rank.
struct RankError : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

/// A pipeline stage needs an artifact that an upstream stage has not produced.
struct MissingArtifactError : Error {
    using Error::Error;
};

}  // namespace roast
