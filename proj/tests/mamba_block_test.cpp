#include "docmamba/mamba_block.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace docmamba {
namespace {

using testing::central_difference;
using testing::random_matrix;
using testing::rel_err;

BlockDims small_dims(Index hidden = 16, NormKind norm = NormKind::rms) {
  return {hidden, 2 * hidden, 4, (2 * hidden + 15) / 16, 4, norm};
}

TEST(RmsNormalize, OnesStayOnes) {
  const Vector<double> ones = Vector<double>::Ones(8);
  EXPECT_LT((rms_normalize(ones, ones) - ones).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(RmsNormalize, ZerosStayZeros) {
  const Vector<double> zeros = Vector<double>::Zero(8);
  EXPECT_TRUE(rms_normalize(zeros, Vector<double>(Vector<double>::Ones(8))).isZero(0.0));
}

TEST(RmsNormalize, ScaleInvariant) {
  Rng rng(4);
  const Vector<double> s = random_matrix<double>(12, 1, rng, 1.0, 3.0);
  const Vector<double> w = random_matrix<double>(12, 1, rng);
  const Vector<double> s2 = 2.0 * s;
  EXPECT_LT((rms_normalize(s, w) - rms_normalize(s2, w)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(CausalConv, LastTapDeltaIsIdentity) {
  Rng rng(1);
  const Matrix<double> x = random_matrix<double>(10, 3, rng);
  Matrix<double> k = Matrix<double>::Zero(3, 4);
  k.col(3).setOnes();
  EXPECT_EQ(causal_conv(x, k), x);
}

TEST(CausalConv, FirstTapDeltaShiftsRight) {
  Rng rng(2);
  const Matrix<double> x = random_matrix<double>(6, 2, rng);
  Matrix<double> k = Matrix<double>::Zero(2, 2);
  k.col(0).setOnes();
  const Matrix<double> out = causal_conv(x, k);
  EXPECT_TRUE(out.row(0).isZero(0.0));
  EXPECT_EQ(out.bottomRows(5), x.topRows(5));
}

TEST(CausalConv, SingleTokenSeesOnlyLastTap) {
  Rng rng(3);
  const Matrix<double> x = random_matrix<double>(1, 3, rng);
  const Matrix<double> k = random_matrix<double>(3, 5, rng);
  const Matrix<double> out = causal_conv(x, k);
  for (Index c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out(0, c), k(c, 4) * x(0, c));
}

TEST(CausalConv, MatchesDirectSum) {
  Rng rng(4);
  const Matrix<double> x = random_matrix<double>(7, 2, rng);
  const Matrix<double> k = random_matrix<double>(2, 3, rng);
  const Matrix<double> out = causal_conv(x, k);
  for (Index t = 0; t < 7; ++t)
    for (Index c = 0; c < 2; ++c) {
      double acc = 0;
      for (Index j = 0; j < 3; ++j) {
        const Index s = t - 3 + 1 + j;
        if (s >= 0) acc += k(c, j) * x(s, c);
      }
      EXPECT_NEAR(out(t, c), acc, 1e-15);
    }
}

TEST(BimambaBlock, ZeroOutProjIsResidualIdentity) {
  Rng rng(5);
  BlockParams<double> p = BlockParams<double>::init(small_dims(), rng);
  p.out_proj.setZero();
  const Matrix<double> s = random_matrix<double>(11, 16, rng);
  EXPECT_EQ(bimamba_block(s, p), s);
}

TEST(BimambaBlock, LengthOneWithTiedDirectionsGivesEqualBranches) {
  Rng rng(6);
  BlockParams<double> p = BlockParams<double>::init(small_dims(), rng);
  p.scan_bwd = p.scan_fwd;
  p.conv_bwd = p.conv_fwd;
  const Matrix<double> s = random_matrix<double>(1, 16, rng);
  BlockTape<double> tape;
  bimamba_block(s, p, &tape);
  EXPECT_EQ(tape.y_f, tape.y_b);
}

BlockParams<double> swapped(const BlockParams<double>& p) {
  BlockParams<double> q = p;
  std::swap(q.scan_fwd, q.scan_bwd);
  std::swap(q.conv_fwd, q.conv_bwd);
  return q;
}

TEST(BimambaBlock, ReversalEquivariantUnderDirectionSwap) {
  Rng rng(3);
  const BlockParams<double> p = BlockParams<double>::init(small_dims(16), rng);
  const Matrix<double> s = random_matrix<double>(32, 16, rng);
  const Matrix<double> lhs = bimamba_block(Matrix<double>(reverse_rows(s)), swapped(p));
  const Matrix<double> rhs = reverse_rows(bimamba_block(s, p));
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(BimambaBlock, PreservesShapeForAnyLength) {
  Rng rng(7);
  const BlockParams<float> p = BlockParams<float>::init(small_dims(8), rng);
  for (Index len : {1, 2, 3, 17, 300}) {
    const Matrix<float> s = random_matrix<float>(len, 8, rng);
    const Matrix<float> out = bimamba_block(s, p);
    EXPECT_EQ(out.rows(), len);
    EXPECT_EQ(out.cols(), 8);
  }
}

TEST(BimambaBlock, BranchesAreCausalInOppositeDirections) {
  Rng rng(8);
  const BlockParams<double> p = BlockParams<double>::init(small_dims(), rng);
  const Matrix<double> s = random_matrix<double>(20, 16, rng);
  BlockTape<double> base, probe;
  bimamba_block(s, p, &base);
  const Index t = 9;
  Matrix<double> s2 = s;
  s2.row(t).array() += 0.5;
  bimamba_block(s2, p, &probe);
  for (Index i = 0; i < 20; ++i) {
    const double df = (probe.y_f.row(i) - base.y_f.row(i)).cwiseAbs().maxCoeff();
    const double db = (probe.y_b.row(i) - base.y_b.row(i)).cwiseAbs().maxCoeff();
    if (i < t) EXPECT_EQ(df, 0.0) << i; else EXPECT_GT(df, 0.0) << i;
    if (i > t) EXPECT_EQ(db, 0.0) << i; else EXPECT_GT(db, 0.0) << i;
  }
}

TEST(BimambaBlock, BackwardMatchesCentralDifferences) {
  for (NormKind kind : {NormKind::rms, NormKind::layer}) {
    Rng rng(11);
    BlockParams<double> p = BlockParams<double>::init(small_dims(8, kind), rng);
    if (kind == NormKind::layer) p.norm_bias = random_matrix<double>(8, 1, rng, -0.2, 0.2);
    Matrix<double> s = random_matrix<double>(9, 8, rng);
    const Matrix<double> dout = random_matrix<double>(9, 8, rng);
    auto loss = [&] { return (bimamba_block(s, p).array() * dout.array()).sum(); };

    BlockTape<double> tape;
    bimamba_block(s, p, &tape);
    BlockParams<double> grads = BlockParams<double>::zeros(p.dims());
    const Matrix<double> ds = bimamba_block_backward(tape, p, dout, grads);

    for (Index i = 0; i < s.size(); i += 3)
      EXPECT_LT(rel_err(ds.data()[i], central_difference(s.data() + i, 1e-5, loss)), 1e-4);
    Inventory<double> values, gs;
    p.append_to(values, "");
    grads.append_to(gs, "");
    ASSERT_EQ(values.size(), gs.size());
    for (std::size_t k = 0; k < values.size(); ++k)
      for (Index i = 0; i < values[k].size(); i += 5)
        EXPECT_LT(rel_err(gs[k].data[i], central_difference(values[k].data + i, 1e-5, loss)), 1e-4)
            << values[k].name << "[" << i << "]";
  }
}

TEST(ForwardStream, MatchesForwardBranchOfBlock) {
  Rng rng(12);
  BlockParams<double> p = BlockParams<double>::init(small_dims(8), rng);
  // Zeroing the backward branch leaves only the causal path in the block output.
  p.scan_bwd.b_proj.setZero();
  p.scan_bwd.d_skip.setZero();
  const Matrix<double> s = random_matrix<double>(25, 8, rng);
  const Matrix<double> full = bimamba_block(s, p);
  ForwardStream<double> stream(p);
  for (Index t = 0; t < 25; ++t) {
    const Vector<double> out = stream.step(s.row(t).transpose());
    EXPECT_LT((out.transpose() - full.row(t)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

}  // namespace
}  // namespace docmamba
