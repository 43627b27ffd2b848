#pragma once

#include <stdexcept>
#include <string>

namespace cxr {

// Base of every error thrown by the library. Subclasses map one-to-one onto
// the failure classes callers are expected to distinguish.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public Error {
public:
  using Error::Error;
};

class ManifestError : public Error {
public:
  using Error::Error;
};

class InsufficientSamplesError : public Error {
public:
  using Error::Error;
};

class StratificationError : public Error {
public:
  using Error::Error;
};

class SplitError : public Error {
public:
  using Error::Error;
};

class ConfigurationError : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class DegenerateDataError : public Error {
public:
  using Error::Error;
};

class RankError : public Error {
public:
  using Error::Error;
};

class SingularityError : public Error {
public:
  using Error::Error;
};

class EmptyNullSpaceError : public Error {
public:
  using Error::Error;
};

class InsufficientFoldsError : public Error {
public:
  using Error::Error;
};

class PairingError : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

} // namespace cxr
