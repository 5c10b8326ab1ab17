#pragma once

#include <stdexcept>
#include <string>

namespace mixsig {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};
struct NotSymmetric : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct ConvergenceFailure : Error {
  using Error::Error;
};
struct NonFiniteStatistic : Error {
  using Error::Error;
};
struct NonFiniteElbo : Error {
  using Error::Error;
};
struct NoSuccessfulRestart : Error {
  using Error::Error;
};
struct ConstantRow : Error {
  using Error::Error;
};
struct RankDeficientWeights : Error {
  using Error::Error;
};
struct DegenerateDeflation : Error {
  using Error::Error;
};
struct SimplexViolation : Error {
  using Error::Error;
};
struct SingleClassTruth : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

struct ParseError : Error {
  ParseError(const std::string& msg, long row, long col)
      : Error(msg + " (row " + std::to_string(row) + ", column " + std::to_string(col) + ")"),
        row(row),
        col(col) {}
  long row;
  long col;
};

}  // namespace mixsig
