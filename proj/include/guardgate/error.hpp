#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gg {

// Base for every error raised by the library. Callers that only care about
// "something went wrong in guardgate" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised by the verdict decoders. offset is the byte position in the input
// where parsing gave up.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, std::string reason)
      : Error("parse error at byte " + std::to_string(offset) + ": " + reason),
        offset_(offset),
        reason_(std::move(reason)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::size_t offset_;
  std::string reason_;
};

class OutOfMemory : public Error {
 public:
  using Error::Error;
};

class UnknownProfile : public Error {
 public:
  using Error::Error;
};

class QueueFull : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class TerminalParseError : public Error {
 public:
  using Error::Error;
};

class MissingCell : public Error {
 public:
  using Error::Error;
};

class TooFewPoints : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateLabels : public Error {
 public:
  using Error::Error;
};

class ClientError : public Error {
 public:
  using Error::Error;
};

}  // namespace gg
