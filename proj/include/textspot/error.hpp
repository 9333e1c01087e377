#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace textspot {

// Base for every error raised by the library. The message is prefixed with
// the module that raised it so CLI output stays attributable.
class Error : public std::runtime_error {
 public:
  Error(const std::string& module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(module) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

class InvalidGeometry : public Error {
 public:
  explicit InvalidGeometry(const std::string& what) : Error("core", what) {}
};

class InvalidSymbol : public Error {
 public:
  explicit InvalidSymbol(const std::string& what) : Error("core", what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error("ingest", what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error("ingest", what) {}
};

class ShapeError : public Error {
 public:
  ShapeError(const std::string& module, const std::string& what) : Error(module, what) {}
};

class NumericError : public Error {
 public:
  NumericError(const std::string& module, const std::string& what) : Error(module, what) {}
};

class GraphTooSmall : public Error {
 public:
  explicit GraphTooSmall(const std::string& what) : Error("graph", what) {}
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& module, const std::string& what) : Error(module, what) {}
};

class IoError : public Error {
 public:
  IoError(const std::string& module, const std::string& what) : Error(module, what) {}
};

}  // namespace textspot
