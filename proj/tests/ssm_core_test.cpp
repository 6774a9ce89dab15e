#include "docmamba/ssm_core.hpp"

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace docmamba {
namespace {

using testing::central_difference;
using testing::random_matrix;
using testing::random_scan_params;
using testing::rel_err;

// Second-order series of (exp(z) - 1) / a * b with z = delta * a.
double zoh_series(double delta, double a, double b) {
  const double z = delta * a;
  return b * delta * (1.0 + z / 2.0 + z * z / 6.0);
}

TEST(ZohDiscretize, ZeroStepHoldsNothing) {
  const auto d = zoh_discretize(0.0, -1.0, 7.0);
  EXPECT_EQ(d.a_bar, 1.0);
  EXPECT_EQ(d.b_bar, 0.0);
}

TEST(ZohDiscretize, ClosedFormAtLn2) {
  const auto d = zoh_discretize(std::log(2.0), -1.0, 1.0);
  EXPECT_NEAR(d.a_bar, 0.5, 1e-15);
  EXPECT_NEAR(d.b_bar, 0.5, 1e-15);
}

TEST(ZohDiscretize, NearZeroAMatchesSeries) {
  const auto d = zoh_discretize(0.01, -1e-12, 3.0);
  const double series = zoh_series(0.01, -1e-12, 3.0);
  EXPECT_LT(std::abs(d.b_bar - series) / std::abs(series), 1e-6);
  EXPECT_NEAR(d.b_bar, 0.03, 1e-12);
}

TEST(ZohDiscretize, ContinuousAcrossLimitBranch) {
  for (double mag = 1e-12; mag <= 1e-6 * 1.0001; mag *= 1.5) {
    for (double sign : {-1.0, 1.0}) {
      const double delta = 0.05;
      const double a = sign * mag / delta;
      const double b = 1.7;
      const auto d = zoh_discretize(delta, a, b);
      const double series = zoh_series(delta, a, b);
      EXPECT_LT(std::abs(d.b_bar - series) / std::abs(series), 1e-6) << "|delta a| = " << mag;
    }
  }
}

TEST(ZohDiscretize, RejectsNonFinite) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(zoh_discretize(nan, -1.0, 1.0), std::domain_error);
  EXPECT_THROW(zoh_discretize(0.1, -inf, 1.0), std::domain_error);
  EXPECT_THROW(zoh_discretize(0.1, -1.0, nan), std::domain_error);
}

// d_inner = n_state = 1, A = -1, delta = ln 2, B = C = 1.
ScanParams<double> hand_params() {
  ScanParams<double> p = ScanParams<double>::zeros({1, 1, 1});
  p.a_log(0, 0) = 0.0;
  p.b_proj(0, 0) = 1.0;
  p.c_proj(0, 0) = 1.0;
  p.dt_bias(0) = 0.0;  // softplus(0) = ln 2
  return p;
}

TEST(SelectiveScanNaive, HandRecurrence) {
  Matrix<double> x(2, 1);
  x << 1, 1;
  const Matrix<double> y = selective_scan_naive(x, hand_params());
  EXPECT_NEAR(y(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(y(1, 0), 0.75, 1e-15);
  const Matrix<double> y_opt = selective_scan(x, hand_params());
  EXPECT_NEAR(y_opt(1, 0), 0.75, 1e-15);
}

TEST(SelectiveScanNaive, SingleStepIsZeroStatePlusInput) {
  Rng rng(5);
  const SsmDims dims = SsmDims::for_width(3, 4);
  ScanParams<double> p = random_scan_params<double>(dims, rng);
  p.d_skip.setZero();
  const Matrix<double> x = random_matrix<double>(1, 3, rng);
  const Matrix<double> y = selective_scan_naive(x, p);

  const auto proj = project_scan_inputs(x, p);
  for (Index c = 0; c < 3; ++c) {
    double expected = 0.0;
    for (Index n = 0; n < 4; ++n) {
      const auto d = zoh_discretize(proj.delta(0, c), -std::exp(p.a_log(c, n)), proj.b(0, n));
      expected += proj.c(0, n) * d.b_bar * x(0, c);
    }
    EXPECT_NEAR(y(0, c), expected, 1e-14);
  }
}

TEST(SelectiveScanNaive, ZeroInputGivesZeroOutput) {
  Rng rng(1);
  const SsmDims dims = SsmDims::for_width(5, 3);
  const ScanParams<double> p = random_scan_params<double>(dims, rng);
  const Matrix<double> x = Matrix<double>::Zero(9, 5);
  EXPECT_TRUE(selective_scan_naive(x, p).isZero(0.0));
  EXPECT_TRUE(selective_scan(x, p).isZero(0.0));
}

TEST(SelectiveScan, MatchesNaiveSinglePrecision) {
  Rng rng(42);
  const SsmDims dims = SsmDims::for_width(8, 16);
  const ScanParams<float> p = random_scan_params<float>(dims, rng);
  const Matrix<float> x = random_matrix<float>(256, 8, rng);
  const float err = (selective_scan(x, p) - selective_scan_naive(x, p)).cwiseAbs().maxCoeff();
  EXPECT_LT(err, 1e-5f);
}

TEST(SelectiveScan, MatchesNaiveDoublePrecision) {
  Rng rng(42);
  const SsmDims dims = SsmDims::for_width(8, 16);
  const ScanParams<double> p = random_scan_params<double>(dims, rng);
  const Matrix<double> x = random_matrix<double>(256, 8, rng);
  EXPECT_LT((selective_scan(x, p) - selective_scan_naive(x, p)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SelectiveScan, LengthOneAgreesToRounding) {
  Rng rng(3);
  const SsmDims dims = SsmDims::for_width(6, 5);
  const ScanParams<double> p = random_scan_params<double>(dims, rng);
  const Matrix<double> x = random_matrix<double>(1, 6, rng);
  const Matrix<double> a = selective_scan(x, p), b = selective_scan_naive(x, p);
  for (Index c = 0; c < 6; ++c)
    EXPECT_LE(std::abs(a(0, c) - b(0, c)), 8 * std::numeric_limits<double>::epsilon() *
                                               std::max(1.0, std::abs(b(0, c))));
}

TEST(SelectiveScan, OverflowNamesFirstBadStep) {
  const ScanParams<double> p = hand_params();
  Matrix<double> x = Matrix<double>::Ones(6, 1);
  x(3, 0) = 1e200;  // b_bar * x = O(1e400)
  try {
    selective_scan_naive(x, p);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 3);
  }
  try {
    selective_scan(x, p);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 3);
  }
}

TEST(SelectiveScan, RejectsShapeMismatch) {
  const ScanParams<double> p = ScanParams<double>::zeros(SsmDims::for_width(4, 2));
  EXPECT_THROW(selective_scan(Matrix<double>(Matrix<double>::Zero(3, 5)), p), ContractError);
  EXPECT_THROW(selective_scan(Matrix<double>(0, 4), p), ContractError);
}

TEST(ScanState, StreamingMatchesBatchScan) {
  Rng rng(9);
  const SsmDims dims = SsmDims::for_width(4, 6);
  const ScanParams<double> p = random_scan_params<double>(dims, rng);
  const Matrix<double> x = random_matrix<double>(50, 4, rng);
  const Matrix<double> y = selective_scan(x, p);
  ScanState<double> state(p);
  for (Index t = 0; t < x.rows(); ++t) {
    const Vector<double> yt = state.step(x.row(t).transpose());
    EXPECT_LT((yt.transpose() - y.row(t)).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(state.state().rows(), 4);
  EXPECT_EQ(state.state().cols(), 6);
}

TEST(ScanState, DecayKeepsStateBounded) {
  Rng rng(21);
  const Index d = 4, n = 8;
  ScanParams<double> p = ScanParams<double>::init({d, n, 1}, rng);
  p.dt_down.setZero();
  p.dt_up.setZero();
  // delta per channel spread over [1e-3, 0.1]
  const double deltas[] = {1e-3, 1e-2, 5e-2, 0.1};
  for (Index c = 0; c < d; ++c) p.dt_bias(c) = deltas[c] + std::log(-std::expm1(-deltas[c]));
  p.b_proj = random_matrix<double>(n, d, rng);

  ScanState<double> state(p);
  const Matrix<double> x = random_matrix<double>(4000, d, rng);
  const Array2<double> a = p.a();
  double max_input = 0.0, max_decay = 0.0;
  for (Index t = 0; t < x.rows(); ++t) {
    const Vector<double> xt = x.row(t).transpose();
    const Vector<double> b = p.b_proj * xt;
    for (Index c = 0; c < d; ++c)
      for (Index s = 0; s < n; ++s) {
        const auto disc = zoh_discretize(deltas[c], a(c, s), b(s));
        max_input = std::max(max_input, std::abs(disc.b_bar * xt(c)));
        max_decay = std::max(max_decay, disc.a_bar);
      }
    state.step(xt);
    ASSERT_LE(state.state().abs().maxCoeff(), max_input / (1.0 - max_decay) + 1e-12);
  }
}

TEST(SelectiveScanBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(2);
  const SsmDims dims = SsmDims::for_width(3, 2);
  const ScanParams<double> p = random_scan_params<double>(dims, rng);
  const Matrix<double> x = random_matrix<double>(7, 3, rng);
  auto g = selective_scan_backward(x, p, Matrix<double>(Matrix<double>::Zero(7, 3)));
  EXPECT_TRUE(g.dx.isZero(0.0));
  Inventory<double> inv;
  g.dparams.append_to(inv, "");
  for (const auto& t : inv) EXPECT_TRUE(t.map().isZero(0.0)) << t.name;
}

TEST(SelectiveScanBackward, ScalarCaseMatchesSymbolicDerivative) {
  ScanParams<double> p = ScanParams<double>::zeros({1, 1, 1});
  const double A = -1.3, b = 0.7, c = -0.4, D = 0.25, u = 0.9, v = -0.6, beta = 0.2;
  p.a_log(0, 0) = std::log(-A);
  p.b_proj(0, 0) = b;
  p.c_proj(0, 0) = c;
  p.d_skip(0) = D;
  p.dt_down(0, 0) = u;
  p.dt_up(0, 0) = v;
  p.dt_bias(0) = beta;
  const double xv = 0.8;
  Matrix<double> x(1, 1);
  x << xv;

  const double r = u * v * xv + beta;
  const double delta = std::log1p(std::exp(r));
  const double sig = 1.0 / (1.0 + std::exp(-r));
  const double gain = std::expm1(delta * A) / A;
  const double dgain = std::exp(delta * A);
  // y = c b x^3 gain(delta(x)) + D x
  const double symbolic = 3 * c * b * xv * xv * gain + c * b * xv * xv * xv * dgain * sig * u * v + D;

  const auto g = selective_scan_backward(x, p, Matrix<double>(Matrix<double>::Ones(1, 1)));
  EXPECT_NEAR(g.dx(0, 0), symbolic, 1e-13);
}

TEST(SelectiveScanBackward, MatchesCentralDifferences) {
  Rng rng(7);
  const SsmDims dims{4, 4, 2};
  ScanParams<double> p = random_scan_params<double>(dims, rng);
  Matrix<double> x = random_matrix<double>(16, 4, rng);
  const Matrix<double> dy = random_matrix<double>(16, 4, rng);

  auto loss = [&] { return (selective_scan(x, p).array() * dy.array()).sum(); };
  auto g = selective_scan_backward(x, p, dy);

  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i)
    worst = std::max(worst, rel_err(g.dx.data()[i], central_difference(x.data() + i, 1e-5, loss)));
  Inventory<double> values, grads;
  p.append_to(values, "");
  g.dparams.append_to(grads, "");
  for (std::size_t k = 0; k < values.size(); ++k)
    for (Index i = 0; i < values[k].size(); ++i) {
      const double e =
          rel_err(grads[k].data[i], central_difference(values[k].data + i, 1e-5, loss));
      EXPECT_LT(e, 1e-4) << values[k].name << "[" << i << "]";
      worst = std::max(worst, e);
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(SelectiveScanBackward, LongSequenceCrossesCheckpointChunks) {
  Rng rng(17);
  const SsmDims dims{3, 2, 1};
  ScanParams<double> p = random_scan_params<double>(dims, rng);
  Matrix<double> x = random_matrix<double>(150, 3, rng);
  const Matrix<double> dy = random_matrix<double>(150, 3, rng);
  auto loss = [&] { return (selective_scan(x, p).array() * dy.array()).sum(); };
  auto g = selective_scan_backward(x, p, dy);
  for (Index i : {0, 63, 64, 65, 127, 128, 149})
    for (Index c = 0; c < 3; ++c)
      EXPECT_LT(rel_err(g.dx(i, c), central_difference(&x(i, c), 1e-5, loss)), 1e-4);
  EXPECT_LT(rel_err(g.dparams.a_log(1, 1), central_difference(&p.a_log(1, 1), 1e-5, loss)), 1e-4);
}

}  // namespace
}  // namespace docmamba
