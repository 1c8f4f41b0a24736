#pragma once

#include <stdexcept>
#include <string>

namespace grela {

// Every error carries a short, stable class tag so the CLI can print a
// machine-parseable line ("error: <class>: <message>").
class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& message)
      : std::runtime_error(message), error_class_(std::move(error_class)) {}

  const std::string& error_class() const noexcept { return error_class_; }

 private:
  std::string error_class_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class BoundsError : public Error {
 public:
  explicit BoundsError(const std::string& m) : Error("bounds", m) {}
};

class ResourceError : public Error {
 public:
  explicit ResourceError(const std::string& m) : Error("resource", m) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

class DataError : public Error {
 public:
  DataError(std::string cls, const std::string& m) : Error(std::move(cls), m) {}
};

}  // namespace grela
