#pragma once

#include <stdexcept>
#include <string>

namespace svdkf {

// Base of every error the library throws. Filter runs and the optimizer catch
// this type to tag a run as failed without aborting a Monte Carlo sweep.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class RankDeficient : public Error {
 public:
  using Error::Error;
};

class DegenerateSingularValues : public Error {
 public:
  using Error::Error;
};

class NotSymmetric : public Error {
 public:
  using Error::Error;
};

class NotPSD : public Error {
 public:
  using Error::Error;
};

class NotPD : public Error {
 public:
  using Error::Error;
};

class SingularInnovationCovariance : public Error {
 public:
  using Error::Error;
};

class ZeroSingularValue : public Error {
 public:
  using Error::Error;
};

class NonFiniteState : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace svdkf
