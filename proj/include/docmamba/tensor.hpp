#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace docmamba {

using Index = Eigen::Index;

// Sequences are stored time-major: one row per token, one column per channel.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Array2 = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// Violated precondition on shapes, ranges, or call order.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, Index step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}
  Index step() const { return step_; }

 private:
  Index step_;
};

/// Malformed external input; `path()` names the offending field.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

template <typename Scalar>
inline Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
inline Scalar softplus(Scalar x) {
  if (x > Scalar(20)) return x;
  return std::log1p(std::exp(x));
}

template <typename Scalar>
inline Scalar silu(Scalar x) {
  return x * sigmoid(x);
}

// d/dx [x * sigmoid(x)]
template <typename Scalar>
inline Scalar silu_grad(Scalar x) {
  const Scalar s = sigmoid(x);
  return s * (Scalar(1) + x * (Scalar(1) - s));
}

template <typename Derived>
Matrix<typename Derived::Scalar> reverse_rows(const Eigen::MatrixBase<Derived>& m) {
  return m.colwise().reverse();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Fills `m` with samples from N(0, stddev^2).
template <typename Derived>
void fill_normal(Eigen::DenseBase<Derived>& m, typename Derived::Scalar stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, double(stddev));
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = typename Derived::Scalar(dist(rng));
}

/// Xavier/Glorot uniform for an (out x in) weight.
template <typename Derived>
void fill_xavier(Eigen::DenseBase<Derived>& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = typename Derived::Scalar(dist(rng));
}

}  // namespace docmamba
