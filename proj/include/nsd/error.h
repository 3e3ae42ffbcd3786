#ifndef NSD_ERROR_H_
#define NSD_ERROR_H_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nsd {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corpus parsing.
class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line, const std::string &text)
      : Error("malformed line " + std::to_string(line) + ": '" + text + "'"),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IllegalTag : public Error {
 public:
  IllegalTag(std::size_t line, const std::string &tag)
      : Error("illegal tag '" + tag + "'" +
              (line > 0 ? " at line " + std::to_string(line) : std::string())),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("corpus contains no utterances") {}
};

class ReservedToken : public Error {
 public:
  ReservedToken(std::size_t line, const std::string &token)
      : Error("reserved token '" + token + "' at line " + std::to_string(line)) {}
};

// Benchmark construction.
class DegenerateSchema : public Error {
 public:
  DegenerateSchema() : Error("slot schema has no slot types") {}
};

class AllTrainRemoved : public Error {
 public:
  AllTrainRemoved() : Error("strategy removed every training utterance") {}
};

// Features.
class FormatError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  AlignmentError(std::size_t utterance, const std::string &what)
      : Error("alignment error at utterance " + std::to_string(utterance) +
              ": " + what),
        utterance_(utterance) {}
  std::size_t utterance() const { return utterance_; }

 private:
  std::size_t utterance_;
};

class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

// Tagger.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

// Detection.
class MissingMarginals : public Error {
 public:
  using Error::Error;
};

class SingularCovariance : public Error {
 public:
  SingularCovariance()
      : Error("covariance is not positive definite; increase regularization") {}
};

class EmptyClass : public Error {
 public:
  explicit EmptyClass(const std::string &label)
      : Error("class '" + label + "' has no supporting tokens") {}
};

class NoNovelInVal : public Error {
 public:
  NoNovelInVal()
      : Error("validation split needs both NS and non-NS tokens to calibrate; "
              "supply a threshold explicitly") {}
};

// Metrics.
class LengthMismatch : public Error {
 public:
  using Error::Error;
};

// Experiments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class AllSeedsFailed : public Error {
 public:
  AllSeedsFailed() : Error("every seed of the configuration point failed") {}
};

}  // namespace nsd

#endif  // NSD_ERROR_H_
