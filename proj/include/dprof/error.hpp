#pragma once

#include <stdexcept>
#include <string>

namespace dprof {

// Malformed input text (JSON, TSV, dates).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Well-formed input that violates a documented contract.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Corrupt, truncated or version-mismatched model/artifact files.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure (non-finite values, degenerate statistics).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dprof
