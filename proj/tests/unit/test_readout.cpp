#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "optctl/errors.hpp"
#include "optctl/readout.hpp"

using namespace optctl;

TEST(Softmax, Symmetric) {
  const Eigen::VectorXd y = softmax(Eigen::Vector2d(0, 0));
  EXPECT_DOUBLE_EQ(y(0), 0.5);
  EXPECT_DOUBLE_EQ(y(1), 0.5);
}

TEST(Softmax, LogTwo) {
  const Eigen::VectorXd y = softmax(Eigen::Vector2d(std::log(2.0), 0));
  EXPECT_NEAR(y(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y(1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const Eigen::VectorXd y = softmax(Eigen::Vector2d(1000, 0));
  EXPECT_EQ(y(0), 1.0);
  EXPECT_LT(y(1), 1e-300);
  EXPECT_TRUE(y.allFinite());
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(softmax(Eigen::Vector2d(std::numeric_limits<double>::quiet_NaN(), 0)), NumericError);
  EXPECT_THROW(softmax(Eigen::Vector2d(std::numeric_limits<double>::infinity(), 0)), NumericError);
}

TEST(Softmax, SumsToOne) {
  Eigen::VectorXd z(10);
  for (int i = 0; i < 10; ++i) z(i) = std::sin(3.0 * i) * 20.0;
  EXPECT_NEAR(softmax(z).sum(), 1.0, 1e-15);
}

TEST(CrossEntropy, Examples) {
  Eigen::MatrixXd t(1, 2), y(1, 2);
  t << 1, 0;
  y << 0.5, 0.5;
  EXPECT_NEAR(cross_entropy(t, y), std::log(2.0), 1e-15);

  Eigen::MatrixXd t2(2, 2), y2(2, 2);
  t2 << 1, 0, 0, 1;
  y2 << 0.9, 0.1, 0.8, 0.2;
  EXPECT_NEAR(cross_entropy(t2, y2), -0.5 * (std::log(0.9) + std::log(0.2)), 1e-15);
  EXPECT_NEAR(cross_entropy(t2, y2), 0.8575, 5e-4);
  EXPECT_EQ(cross_entropy(t2, t2), 0.0);
}

TEST(CrossEntropy, ClampsZeroProbability) {
  Eigen::MatrixXd t(1, 2), y(1, 2);
  t << 1, 0;
  y << 0, 1;
  EXPECT_NEAR(cross_entropy(t, y), -std::log(kLogClamp), 1e-12);
}

TEST(CrossEntropy, ShapeMismatch) {
  EXPECT_THROW(cross_entropy(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(1, 2)), ShapeError);
}

TEST(LossResidual, Examples) {
  Eigen::MatrixXd t(1, 2), y(1, 2);
  t << 1, 0;
  y << 0.5, 0.5;
  const Eigen::MatrixXd r = loss_residual(t, y);
  EXPECT_DOUBLE_EQ(r(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(r(0, 1), 0.5);
  EXPECT_TRUE(loss_residual(t, t).isZero(0.0));
  EXPECT_THROW(loss_residual(Eigen::MatrixXd::Zero(1, 3), y), ShapeError);
}

TEST(LossResidual, MatchesNumericalDerivativeOfLoss) {
  const Eigen::Vector3d z(0.4, -1.2, 2.0);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(1, 3);
  t(0, 1) = 1.0;
  const auto loss = [&](const Eigen::Vector3d& logits) {
    return cross_entropy(t, softmax(logits).transpose().eval());
  };
  const Eigen::MatrixXd residual = loss_residual(t, softmax(z).transpose().eval());
  const double h = 1e-6;
  for (int l = 0; l < 3; ++l) {
    Eigen::Vector3d up = z, down = z;
    up(l) += h;
    down(l) -= h;
    const double numeric = (loss(up) - loss(down)) / (2 * h);
    EXPECT_NEAR(numeric, residual(0, l), 1e-6 * std::max(1.0, std::abs(residual(0, l))));
  }
}

TEST(ReadoutEndState, Examples) {
  auto params = EndStateReadout<double>::zeros(2, 2);
  EXPECT_TRUE(readout_endstate(Eigen::Vector2d(3, -1), params).isZero(0.0));
  params.omega.setIdentity();
  EXPECT_EQ(readout_endstate(Eigen::Vector2d(3, -1), params), Eigen::Vector2d(3, -1));
  params.omega << 1, 2, 0, 1;
  params.bias << 1, 0;
  EXPECT_EQ(readout_endstate(Eigen::Vector2d(1, 1), params), Eigen::Vector2d(4, 1));
  EXPECT_THROW(readout_endstate(Eigen::Vector3d(1, 1, 1), params), ShapeError);
}

TEST(ReadoutTimeResolved, ZeroWeightsGiveBias) {
  auto params = TimeResolvedReadout<double>::zeros(2, 11);
  params.bias << 0.3, -0.3;
  const Eigen::MatrixXd tail = Eigen::MatrixXd::Constant(2, 11, 5.0);
  const Eigen::VectorXd z = readout_timeresolved(tail, params, 0.1);
  EXPECT_DOUBLE_EQ(z(0), 0.3);
  EXPECT_DOUBLE_EQ(z(1), -0.3);
}

TEST(ReadoutTimeResolved, ConstantIntegrand) {
  const double tau = 230.0, c = 0.02;
  auto params = TimeResolvedReadout<double>::zeros(1, 101);
  params.omega.setConstant(c);
  params.bias << 0.5;
  const Eigen::MatrixXd tail = Eigen::MatrixXd::Ones(1, 101);
  EXPECT_NEAR(readout_timeresolved(tail, params, tau / 100)(0), c * tau + 0.5, 1e-12);
}

TEST(ReadoutTimeResolved, LinearWeight) {
  auto params = TimeResolvedReadout<double>::zeros(1, 21);
  params.omega.row(0) = Eigen::RowVectorXd::LinSpaced(21, 0.0, 1.0);
  params.bias << -0.25;
  const Eigen::MatrixXd tail = Eigen::MatrixXd::Ones(2, 21);
  EXPECT_NEAR(readout_timeresolved(tail, params, 0.05)(0), 0.25, 1e-15);
}

TEST(ReadoutTimeResolved, SampleCountMismatch) {
  auto params = TimeResolvedReadout<double>::zeros(2, 11);
  EXPECT_THROW(readout_timeresolved(Eigen::MatrixXd::Ones(1, 10), params, 0.1), ShapeError);
}

TEST(Argmax, TieGoesToLowestIndex) {
  EXPECT_EQ(argmax(Eigen::Vector3d(1, 1, 1)), 0);
  EXPECT_EQ(argmax(Eigen::Vector3d(0, 2, 2)), 1);
}

TEST(LossReport, PerfectOutputs) {
  Eigen::MatrixXd logits(3, 2);
  logits << 50, 0, 0, 50, 50, 0;
  Eigen::MatrixXd targets(3, 2);
  targets << 1, 0, 0, 1, 1, 0;
  const LossReport r = make_loss_report(logits, {0, 1, 0}, targets);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_LT(r.loss, 1e-12);
  EXPECT_EQ(r.predicted, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(r.diverged, 0);
}
