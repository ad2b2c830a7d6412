#pragma once

#include <stdexcept>
#include <string>

namespace gpreach {

/// Base class of everything this library throws on purpose.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error
{
public:
  using Error::Error;
};

/// Cholesky failed even after jitter escalation.
class FactorizationError : public Error
{
public:
  using Error::Error;
};

/// Non-finite propagation, overflow, or a solver that stopped making progress.
class NumericalError : public Error
{
public:
  using Error::Error;
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

class InfeasibleError : public Error
{
public:
  using Error::Error;
};

/// The active sample set ran empty (the probability-delta failure event).
class CertificateViolated : public Error
{
public:
  using Error::Error;
};

inline void require_dim(long got, long want, const char * what)
{
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) + ", got "
                         + std::to_string(got));
  }
}

}  // namespace gpreach
