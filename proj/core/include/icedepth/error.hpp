#pragma once

#include <stdexcept>
#include <string>

namespace icedepth {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file or text.
class ParseError : public Error {
public:
    using Error::Error;
};

// A precondition or a type invariant does not hold.
class InvalidInput : public Error {
public:
    using Error::Error;
};

// An iterative or discretised computation failed to deliver its contract.
class NumericalError : public Error {
public:
    using Error::Error;
};

// A method cannot be applied to the given geometry or data (e.g. a blocked ray family).
class NotApplicable : public Error {
public:
    using Error::Error;
};

}  // namespace icedepth
