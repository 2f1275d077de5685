#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mets {

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (CSV rows, schema, request payloads).
class ValidationError : public Error
{
public:
    using Error::Error;
};

// Parameters outside the support of a distribution or operation.
class InvalidArgument : public Error
{
public:
    using Error::Error;
};

class NumericalError : public Error
{
public:
    using Error::Error;
};

// Raised when a chain hits a non-SPD precision or a non-finite log joint.
class SamplerError : public NumericalError
{
public:
    SamplerError(const std::string& what, std::size_t chain, std::size_t sweep)
        : NumericalError(what + " (chain " + std::to_string(chain) + ", sweep "
                         + std::to_string(sweep) + ")"),
          chain_(chain),
          sweep_(sweep)
    {
    }

    std::size_t chain() const noexcept { return chain_; }
    std::size_t sweep() const noexcept { return sweep_; }

private:
    std::size_t chain_;
    std::size_t sweep_;
};

}  // namespace mets
