#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fgn {

using Scalar = double;
using Index = Eigen::Index;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Signals a non-finite loss or iterate. `round` is filled in by the
/// experiment loop when known, -1 otherwise.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what, int round = -1)
      : Error(what), round_(round) {}
  int round() const noexcept { return round_; }

 private:
  int round_;
};

}  // namespace fgn
