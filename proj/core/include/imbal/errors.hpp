#pragma once

#include <stdexcept>
#include <string>

namespace imbal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A battery action would push the state of charge outside its limits.
class FeasibilityError : public Error {
 public:
  enum class Bound { soc_min, soc_max, power };

  FeasibilityError(Bound bound, const std::string& what) : Error(what), bound_(bound) {}
  Bound bound() const noexcept { return bound_; }

 private:
  Bound bound_;
};

/// Activation requested beyond the depth of a merit-order ladder.
class LadderExhaustedError : public Error {
 public:
  LadderExhaustedError(double deepest_price, const std::string& what)
      : Error(what), deepest_price_(deepest_price) {}
  double deepest_price() const noexcept { return deepest_price_; }

 private:
  double deepest_price_;
};

/// Malformed input file. `row` is the 1-based data row (0 when not row-specific).
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what) : Error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition of a numerical routine (e.g. nonconvex QP data).
class ContractError : public Error {
 public:
  using Error::Error;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace imbal
