#pragma once

#include <stdexcept>
#include <string>

namespace facor {

// Error taxonomy shared by every module. The CLI maps any of these to a
// nonzero exit with the message as diagnostic.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or option mismatches detected before any math runs.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite values, zero norms, diverging losses.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad records, missing scores, corrupt payloads.
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed files; messages carry the offending line number.
class ParseError : public Error {
public:
    using Error::Error;
};

// Requested id absent from a manifest or table.
class LookupError : public Error {
public:
    using Error::Error;
};

// Violated preconditions of a sampling or evaluation protocol.
class ProtocolError : public Error {
public:
    using Error::Error;
};

}  // namespace facor
