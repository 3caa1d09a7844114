#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace richrep {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix or vector dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument outside its documented domain (temperature <= 0, alpha > 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed data: out-of-range labels, non-finite features, missing splits.
class DataError : public Error {
 public:
  using Error::Error;
};

// Quantity undefined at the given point, e.g. the cosine of a zero vector.
class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class EpisodeError : public Error {
 public:
  EpisodeError(const std::string& what, std::uint64_t seed)
      : Error(what + " (seed " + std::to_string(seed) + ")"), seed_(seed) {}
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

}  // namespace richrep
