#pragma once

#include <stdexcept>
#include <string>

namespace gnnrag {

/// Base class for every error raised by the library. The category maps onto
/// CLI exit codes (config 2, data 3, external service 4).
class Error : public std::runtime_error {
 public:
  enum class Category { Config, Data, Service };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::Config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Category::Data, what) {}
};

/// Malformed input line; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

class InvalidSeedError : public DataError {
 public:
  using DataError::DataError;
};

/// Numerical blow-up during training.
class DivergenceError : public DataError {
 public:
  using DataError::DataError;
};

class ServiceError : public Error {
 public:
  explicit ServiceError(const std::string& what) : Error(Category::Service, what) {}
};

inline int exit_code(const Error& e) {
  switch (e.category()) {
    case Error::Category::Config:
      return 2;
    case Error::Category::Data:
      return 3;
    case Error::Category::Service:
      return 4;
  }
  return 1;
}

}  // namespace gnnrag
