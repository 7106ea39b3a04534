#include <gtest/gtest.h>

#include <cmath>

#include "optctl/errors.hpp"
#include "optctl/ode.hpp"

using namespace optctl;

namespace {

using Flow = TanhFlow<double, 2>;
using Controls = ControlSchedule<Flow>;

struct Instance {
  Controls controls;
  EndStateReadout<double> readout;
  std::vector<Flow::State> inputs;
  std::vector<Eigen::Vector2d> targets;
  TimeGrid grid;
};

Instance random_instance(std::uint64_t seed, std::int64_t steps, double dt) {
  SeededRng rng(seed);
  Instance inst{Controls(Flow::kControlDim, steps), EndStateReadout<double>::zeros(2, 2), {}, {},
                make_time_grid(0.0, dt, steps)};
  for (Eigen::Index i = 0; i < inst.controls.size(); ++i)
    inst.controls.data()[i] = rng.uniform(-1.5, 1.5);
  for (Eigen::Index i = 0; i < 4; ++i) inst.readout.omega.data()[i] = rng.normal();
  inst.readout.bias = Eigen::Vector2d(rng.normal(), rng.normal());
  for (int k = 0; k < 3; ++k) {
    inst.inputs.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1));
    inst.targets.push_back(k % 2 == 0 ? Eigen::Vector2d(1, 0) : Eigen::Vector2d(0, 1));
  }
  return inst;
}

double batch_loss(const Instance& inst, const Controls& controls) {
  const Flow flow;
  double total = 0.0;
  for (std::size_t k = 0; k < inst.inputs.size(); ++k) {
    const auto traj = forward_ode(flow, inst.inputs[k], controls, inst.grid);
    const Eigen::VectorXd y = softmax(readout_endstate(traj.end_state(), inst.readout));
    total -= inst.targets[k].dot(y.array().log().matrix());
  }
  return total / static_cast<double>(inst.inputs.size());
}

Controls adjoint_gradient(const Instance& inst, GradientMode mode) {
  const Flow flow;
  Controls grad = Controls::Zero(Flow::kControlDim, inst.controls.cols());
  const auto batch = static_cast<Eigen::Index>(inst.inputs.size());
  for (std::size_t k = 0; k < inst.inputs.size(); ++k) {
    const auto traj = forward_ode(flow, inst.inputs[k], inst.controls, inst.grid);
    const Eigen::VectorXd p_end =
        adjoint_end_condition(traj.end_state(), inst.readout, inst.targets[k], batch);
    const auto adj = backward_adjoint_ode(flow, traj, inst.controls, Flow::State(p_end), inst.grid, mode);
    accumulate_control_gradient_ode(flow, adj, traj, inst.controls, inst.grid, grad);
  }
  return grad;
}

Controls finite_difference(const Instance& inst, double h) {
  Controls grad(Flow::kControlDim, inst.controls.cols());
  Controls work = inst.controls;
  for (Eigen::Index i = 0; i < work.size(); ++i) {
    const double saved = work.data()[i];
    work.data()[i] = saved + h;
    const double up = batch_loss(inst, work);
    work.data()[i] = saved - h;
    const double down = batch_loss(inst, work);
    work.data()[i] = saved;
    grad.data()[i] = (up - down) / (2 * h);
  }
  return grad;
}

double rel_error(const Controls& a, const Controls& ref) {
  return (a - ref).cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff();
}

}  // namespace

TEST(ForwardOde, ZeroControlsKeepInput) {
  const Flow flow;
  const TimeGrid grid = make_time_grid(0.0, 0.01, 50);
  const auto traj =
      forward_ode(flow, Flow::State(0.3, -0.7), Controls::Zero(Flow::kControlDim, 50), grid);
  for (Eigen::Index i = 0; i <= 50; ++i) EXPECT_EQ(traj.at(i), Eigen::Vector2d(0.3, -0.7));
}

TEST(ForwardOde, IdentityOneStep) {
  const Flow flow;
  const auto traj = forward_ode(flow, Flow::State(10, 10), identity_tanh_controls(1),
                                make_time_grid(0.0, 0.1, 1));
  EXPECT_DOUBLE_EQ(traj.end_state()(0), 10.0 + 0.1 * std::tanh(10.0));
  EXPECT_NEAR(traj.end_state()(1), 10.1, 1e-8);
}

TEST(ForwardOde, ControlCountMustMatchGrid) {
  const Flow flow;
  EXPECT_THROW(forward_ode(flow, Flow::State::Zero(), identity_tanh_controls(3),
                           make_time_grid(0.0, 0.1, 4)),
               ShapeError);
}

TEST(AdjointEndCondition, Examples) {
  auto readout = EndStateReadout<double>::zeros(2, 2);
  readout.omega.setIdentity();
  // y = softmax(0) = (0.5, 0.5) when the end state is zero.
  const Eigen::VectorXd p =
      adjoint_end_condition(Eigen::Vector2d(0, 0), readout, Eigen::Vector2d(1, 0), 1);
  EXPECT_DOUBLE_EQ(p(0), -0.5);
  EXPECT_DOUBLE_EQ(p(1), 0.5);

  readout.omega << 1, 0, 1, 0;
  EXPECT_TRUE(end_condition_from_residual(readout, Eigen::Vector2d(-0.3, 0.3)).isZero(0.0));
}

TEST(AdjointEndCondition, PerfectPredictionGivesZero) {
  auto readout = EndStateReadout<double>::zeros(2, 2);
  readout.omega.setIdentity();
  readout.omega *= 1000.0;
  const Eigen::VectorXd p =
      adjoint_end_condition(Eigen::Vector2d(1, 0), readout, Eigen::Vector2d(1, 0), 1);
  EXPECT_LT(p.cwiseAbs().maxCoeff(), 1e-300);
}

TEST(BackwardOde, ZeroEndConditionStaysZero) {
  const Instance inst = random_instance(4, 20, 0.05);
  const Flow flow;
  const auto traj = forward_ode(flow, inst.inputs[0], inst.controls, inst.grid);
  const auto adj = backward_adjoint_ode(flow, traj, inst.controls, Flow::State::Zero(), inst.grid);
  EXPECT_TRUE(adj.costates.isZero(0.0));
}

TEST(BackwardOde, ZeroWeightKeepsCostateConstant) {
  const Flow flow;
  Controls controls = Controls::Zero(Flow::kControlDim, 10);
  controls.row(Flow::bias_index(0)).setConstant(0.4);
  const TimeGrid grid = make_time_grid(0.0, 0.1, 10);
  const auto traj = forward_ode(flow, Flow::State(0.2, 0.1), controls, grid);
  for (GradientMode mode : {GradientMode::Continuous, GradientMode::Discrete}) {
    const auto adj = backward_adjoint_ode(flow, traj, controls, Flow::State(0.7, -2.0), grid, mode);
    for (Eigen::Index i = 0; i <= 10; ++i) EXPECT_EQ(adj.costates.col(i), Eigen::Vector2d(0.7, -2.0));
  }
}

TEST(ControlGradientOde, HandEvaluatedAtZeroControls) {
  const Flow flow;
  const TimeGrid grid = make_time_grid(0.0, 0.25, 4);
  const Controls controls = Controls::Zero(Flow::kControlDim, 4);
  const auto traj = forward_ode(flow, Flow::State(1, 0), controls, grid);
  const auto adj = backward_adjoint_ode(flow, traj, controls, Flow::State(1, 0), grid);
  const Controls grad = control_gradient_ode<Flow>(flow, {adj}, {traj}, controls, grid);
  Flow::Control expected = Flow::Control::Zero();
  expected(Flow::weight_index(0, 0)) = 0.25;  // row 0 of grad_a is (1, 0), times dt
  expected(Flow::bias_index(0)) = 0.25;
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(grad.col(i), expected) << i;
}

TEST(ControlGradientOde, ZeroCostateGivesZeroGradient) {
  const Instance inst = random_instance(5, 8, 0.1);
  const Flow flow;
  const auto traj = forward_ode(flow, inst.inputs[0], inst.controls, inst.grid);
  const auto adj = backward_adjoint_ode(flow, traj, inst.controls, Flow::State::Zero(), inst.grid);
  EXPECT_TRUE(control_gradient_ode<Flow>(flow, {adj}, {traj}, inst.controls, inst.grid).isZero(0.0));
}

TEST(ControlGradientOde, DiscreteMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Instance inst = random_instance(seed, 5, 0.2);
    EXPECT_LT(rel_error(adjoint_gradient(inst, GradientMode::Discrete), finite_difference(inst, 1e-6)),
              1e-4)
        << seed;
  }
}

TEST(ControlGradientOde, DiscreteMatchesFiniteDifferencesAtSmallStep) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Instance inst = random_instance(seed, 20, 0.01);
    EXPECT_LE(rel_error(adjoint_gradient(inst, GradientMode::Discrete), finite_difference(inst, 1e-5)),
              1e-3)
        << seed;
  }
}

TEST(ControlGradientOde, ContinuousErrorShrinksWhenStepIsHalved) {
  // The refined instance repeats every control column, so both grids carry the
  // same piecewise-constant control function.
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Instance coarse = random_instance(seed, 20, 0.01);
    Instance fine = coarse;
    fine.grid = make_time_grid(0.0, 0.005, 40);
    fine.controls.resize(Flow::kControlDim, 40);
    for (Eigen::Index i = 0; i < 40; ++i) fine.controls.col(i) = coarse.controls.col(i / 2);
    const double coarse_error =
        rel_error(adjoint_gradient(coarse, GradientMode::Continuous), finite_difference(coarse, 1e-5));
    const double fine_error =
        rel_error(adjoint_gradient(fine, GradientMode::Continuous), finite_difference(fine, 1e-5));
    EXPECT_LT(fine_error, coarse_error) << seed;
    EXPECT_LT(coarse_error, 0.05) << seed;
  }
}

TEST(ControlGradientOde, SmallStepAlongNegativeGradientLowersLoss) {
  const Instance inst = random_instance(12, 20, 0.05);
  const Controls grad = adjoint_gradient(inst, GradientMode::Continuous);
  const Controls stepped = inst.controls - 1e-3 * grad / grad.norm();
  EXPECT_LT(batch_loss(inst, stepped), batch_loss(inst, inst.controls));
}
