#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lidattack {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MalformedFileError : public Error {
 public:
  using Error::Error;
};

class MalformedRecordError : public MalformedFileError {
 public:
  MalformedRecordError(const std::string& what, std::size_t record)
      : MalformedFileError(what), record_(record) {}
  std::size_t record() const noexcept { return record_; }

 private:
  std::size_t record_;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

// The offending payload is kept so callers can log exactly what the peer sent.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string raw = {})
      : Error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class BudgetExhaustedError : public Error {
 public:
  using Error::Error;
};

}  // namespace lidattack
