#pragma once

#include <stdexcept>
#include <string>

namespace noprop {

// Base class for everything this library throws.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    using Error::Error;
};
struct UnsupportedOp : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct NameError : Error {
    using Error::Error;
};
struct RangeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct IOError : Error {
    using Error::Error;
};
struct VersionError : Error {
    using Error::Error;
};
struct StateError : Error {
    using Error::Error;
};
// NaN/Inf escaping a public operation.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace noprop
