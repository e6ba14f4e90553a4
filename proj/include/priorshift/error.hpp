#pragma once

#include <stdexcept>
#include <string>

namespace priorshift {

//! Input violates a documented precondition or invariant.
class ValidationError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

//! Malformed input file.
class ParseError : public ValidationError
{
public:
  using ValidationError::ValidationError;
};

//! A solver could not produce a usable result (singular system, no
//! finite objective, ...).
class NumericalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

} // namespace priorshift
