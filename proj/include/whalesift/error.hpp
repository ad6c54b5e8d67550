#pragma once

#include <stdexcept>
#include <string>

namespace whalesift {

/// Base for every domain failure the toolkit reports. The CLI maps these to
/// exit status 1; anything else escaping a subcommand is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace whalesift
