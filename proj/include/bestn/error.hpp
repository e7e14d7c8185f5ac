#pragma once

#include <stdexcept>
#include <string>

namespace bestn {

// Base for every error raised by the library. The CLI maps UsageError to
// exit status 2 and everything else to 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed file contents: bad magic, truncated blob, offset outside a blob.
class FormatError : public Error {
public:
    using Error::Error;
};

// A data-model invariant does not hold (label domain, sorted log-probs, ...).
class InvariantError : public Error {
public:
    using Error::Error;
};

// Bad arguments or configuration supplied by the caller.
class UsageError : public Error {
public:
    using Error::Error;
};

// The computation itself cannot proceed (single-class labels, NaN loss, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

}  // namespace bestn
