#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ragrec {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated a documented precondition (shape, zero norm, bad config).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. `line()` is 1-based; 0 when the location is unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// The remote service could not be reached after every configured attempt.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts) : Error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

// The remote service answered with a non-2xx status.
class StatusError : public Error {
 public:
  StatusError(int status, const std::string& body_excerpt)
      : Error("HTTP status " + std::to_string(status) + ": " + body_excerpt),
        status_(status),
        body_(body_excerpt) {}
  int status() const { return status_; }
  const std::string& body_excerpt() const { return body_; }

 private:
  int status_;
  std::string body_;
};

// The remote service answered 2xx but the payload is unusable (empty, unparseable).
class ContentError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage is missing its inputs or failed.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace ragrec
