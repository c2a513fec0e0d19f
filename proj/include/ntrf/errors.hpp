#pragma once

#include <stdexcept>
#include <string>

namespace ntrf {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public Error { using Error::Error; };
class EncodeError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace ntrf
