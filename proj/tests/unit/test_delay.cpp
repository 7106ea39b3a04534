#include <gtest/gtest.h>

#include <cmath>

#include "optctl/delay.hpp"
#include "optctl/errors.hpp"

using namespace optctl;

namespace {

/// Scalar delay models used to pin down the solver contract.
template <int Controls>
struct ScalarModel {
  using Scalar = double;
  static constexpr int kStateDim = 1;
  static constexpr int kControlDim = Controls;
  using State = Eigen::Matrix<double, 1, 1>;
  using Control = Eigen::Matrix<double, Controls, 1>;
  using StateJacobian = Eigen::Matrix<double, 1, 1>;
  using ControlJacobian = Eigen::Matrix<double, 1, Controls>;
};

struct Frozen : ScalarModel<1> {
  State derivative(const State&, const State&, const Control&) const { return State::Zero(); }
  StateJacobian jacobian_state(const State&, const State&, const Control&) const { return StateJacobian::Zero(); }
  StateJacobian jacobian_delayed(const State&, const State&, const Control&) const { return StateJacobian::Zero(); }
  ControlJacobian jacobian_control(const State&, const State&, const Control&) const { return ControlJacobian::Zero(); }
};

struct Decay : ScalarModel<1> {
  State derivative(const State& r, const State&, const Control&) const { return -r; }
  StateJacobian jacobian_state(const State&, const State&, const Control&) const { return StateJacobian::Constant(-1); }
  StateJacobian jacobian_delayed(const State&, const State&, const Control&) const { return StateJacobian::Zero(); }
  ControlJacobian jacobian_control(const State&, const State&, const Control&) const { return ControlJacobian::Zero(); }
};

struct PureDelay : ScalarModel<1> {
  State derivative(const State& r, const State& r_tau, const Control&) const { return r_tau - r; }
  StateJacobian jacobian_state(const State&, const State&, const Control&) const { return StateJacobian::Constant(-1); }
  StateJacobian jacobian_delayed(const State&, const State&, const Control&) const { return StateJacobian::Constant(1); }
  ControlJacobian jacobian_control(const State&, const State&, const Control&) const { return ControlJacobian::Zero(); }
};

struct PureControl : ScalarModel<1> {
  State derivative(const State&, const State&, const Control& u) const { return u; }
  StateJacobian jacobian_state(const State&, const State&, const Control&) const { return StateJacobian::Zero(); }
  StateJacobian jacobian_delayed(const State&, const State&, const Control&) const { return StateJacobian::Zero(); }
  ControlJacobian jacobian_control(const State&, const State&, const Control&) const { return ControlJacobian::Ones(); }
};

/// dr/dt = -r + sin(u0 r(t - tau) + u1).
struct Nonlinear : ScalarModel<2> {
  State derivative(const State& r, const State& r_tau, const Control& u) const {
    return State(-r(0) + std::sin(u(0) * r_tau(0) + u(1)));
  }
  StateJacobian jacobian_state(const State&, const State&, const Control&) const { return StateJacobian::Constant(-1); }
  StateJacobian jacobian_delayed(const State&, const State& r_tau, const Control& u) const {
    return StateJacobian::Constant(u(0) * std::cos(u(0) * r_tau(0) + u(1)));
  }
  ControlJacobian jacobian_control(const State&, const State& r_tau, const Control& u) const {
    const double c = std::cos(u(0) * r_tau(0) + u(1));
    return ControlJacobian(c * r_tau(0), c);
  }
};

template <class Model>
DelayHistory<Model> constant_history(const TimeGrid& grid, double value) {
  return {StatePath<Model>::Constant(Model::kStateDim, grid.m_tau + 1, value)};
}

struct NonlinearCase {
  TimeGrid grid;
  ControlSchedule<Nonlinear> controls;
  DelayHistory<Nonlinear> history;
  TimeResolvedReadout<double> readout;
  Eigen::Vector2d target{0, 1};

  explicit NonlinearCase(std::uint64_t seed, std::int64_t m_tau = 8, bool smooth = false)
      : grid(make_delay_grid(1.0, m_tau, 3)), readout(TimeResolvedReadout<double>::zeros(2, m_tau + 1)) {
    SeededRng rng(seed);
    controls.resize(2, grid.control_steps());
    history.samples.resize(1, grid.m_tau + 1);
    if (!smooth) {
      for (Eigen::Index i = 0; i < controls.cols(); ++i) {
        controls(0, i) = rng.uniform(0.5, 2.0);
        controls(1, i) = rng.uniform(-1.0, 1.0);
      }
      for (Eigen::Index q = 0; q <= grid.m_tau; ++q) history.samples(0, q) = rng.uniform(-1, 1);
      for (Eigen::Index i = 0; i < readout.omega.size(); ++i) readout.omega.data()[i] = 2.0 * rng.normal();
    } else {
      // Smooth functions of time, sampled on whatever grid m_tau implies.
      const double p0 = rng.uniform(0, 6), p1 = rng.uniform(0, 6), p2 = rng.uniform(0, 6);
      const double w0 = rng.normal(), w1 = rng.normal();
      for (Eigen::Index i = 0; i < controls.cols(); ++i) {
        const double t = grid.time(grid.origin() + i);
        controls(0, i) = 1.2 + 0.5 * std::sin(p0 + t);
        controls(1, i) = 0.6 * std::sin(p1 + 2.0 * t);
      }
      for (Eigen::Index q = 0; q <= grid.m_tau; ++q) {
        const double s = static_cast<double>(q) / static_cast<double>(grid.m_tau);
        history.samples(0, q) = 0.8 * std::sin(p2 + 3.0 * s);
        readout.omega(0, q) = w0 * (1.0 + s);
        readout.omega(1, q) = w1 * std::cos(2.0 * s);
      }
    }
    readout.bias << rng.normal(), rng.normal();
  }

  double loss(const ControlSchedule<Nonlinear>& u) const {
    const auto traj = forward_delay(Nonlinear{}, history, u, grid);
    const Eigen::VectorXd y =
        softmax(readout_timeresolved(traj.states.rightCols(grid.m_tau + 1), readout, grid.dt));
    return -std::log(y(1));
  }

  ControlSchedule<Nonlinear> adjoint(GradientMode mode) const {
    const Nonlinear model;
    const auto traj = forward_delay(model, history, controls, grid);
    const Eigen::VectorXd y =
        softmax(readout_timeresolved(traj.states.rightCols(grid.m_tau + 1), readout, grid.dt));
    const Eigen::VectorXd residual = y - target;
    const auto adj = backward_adjoint_delay(model, traj, controls, readout, residual, grid, mode);
    return control_gradient_delay<Nonlinear>(model, {adj}, {traj}, controls, grid);
  }

  ControlSchedule<Nonlinear> finite_difference(double h) const {
    ControlSchedule<Nonlinear> grad(2, controls.cols());
    ControlSchedule<Nonlinear> work = controls;
    for (Eigen::Index i = 0; i < work.size(); ++i) {
      const double saved = work.data()[i];
      work.data()[i] = saved + h;
      const double up = loss(work);
      work.data()[i] = saved - h;
      const double down = loss(work);
      work.data()[i] = saved;
      grad.data()[i] = (up - down) / (2 * h);
    }
    return grad;
  }
};

}  // namespace

TEST(ForwardDelay, ZeroDerivativeFreezesState) {
  const TimeGrid grid = make_delay_grid(2.0, 10, 3);
  DelayHistory<Frozen> history{StatePath<Frozen>::Zero(1, 11)};
  history.samples(0, 10) = 0.42;
  const auto traj = forward_delay(Frozen{}, history, ControlSchedule<Frozen>::Zero(1, 30), grid);
  for (Eigen::Index i = 10; i <= grid.n_steps; ++i) EXPECT_EQ(traj.states(0, i), 0.42);
  EXPECT_EQ(traj.states.leftCols(11), history.samples);
}

TEST(ForwardDelay, LinearDecayIsGeometric) {
  const TimeGrid grid = make_delay_grid(1.0, 10, 2);
  const auto traj = forward_delay(Decay{}, constant_history<Decay>(grid, 1.0),
                                  ControlSchedule<Decay>::Zero(1, 20), grid);
  for (Eigen::Index i = 0; i <= 20; ++i)
    EXPECT_NEAR(traj.states(0, 10 + i), std::pow(1.0 - grid.dt, static_cast<double>(i)), 1e-15);
}

TEST(ForwardDelay, PureDelayFixedPoint) {
  const TimeGrid grid = make_delay_grid(1.0, 6, 4);
  const auto traj = forward_delay(PureDelay{}, constant_history<PureDelay>(grid, -0.8),
                                  ControlSchedule<PureDelay>::Zero(1, 24), grid);
  EXPECT_TRUE(traj.states.isApproxToConstant(-0.8, 0.0));
}

TEST(ForwardDelay, DivergenceReportsStep) {
  const TimeGrid grid = make_delay_grid(1.0, 4, 2);
  ControlSchedule<PureControl> u = ControlSchedule<PureControl>::Constant(1, 8, 1e9);
  try {
    forward_delay(PureControl{}, constant_history<PureControl>(grid, 0.0), u, grid);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 5);
  }
}

TEST(ForwardDelay, ShapeChecks) {
  const TimeGrid grid = make_delay_grid(1.0, 4, 2);
  EXPECT_THROW(forward_delay(Frozen{}, constant_history<Frozen>(grid, 0.0),
                             ControlSchedule<Frozen>::Zero(1, 7), grid),
               ShapeError);
  EXPECT_THROW(forward_delay(Frozen{}, DelayHistory<Frozen>{StatePath<Frozen>::Zero(1, 4)},
                             ControlSchedule<Frozen>::Zero(1, 8), grid),
               ShapeError);
  EXPECT_THROW(forward_delay(Frozen{}, constant_history<Frozen>(grid, 0.0),
                             ControlSchedule<Frozen>::Zero(1, 8), make_time_grid(0.0, 0.1, 8)),
               ConfigError);
}

TEST(BackwardDelay, ZeroResidualGivesZeroCostate) {
  const NonlinearCase c(3);
  const auto traj = forward_delay(Nonlinear{}, c.history, c.controls, c.grid);
  for (GradientMode mode : {GradientMode::Continuous, GradientMode::Discrete}) {
    const auto adj = backward_adjoint_delay(Nonlinear{}, traj, c.controls, c.readout,
                                            Eigen::Vector2d::Zero(), c.grid, mode);
    EXPECT_TRUE(adj.costates.isZero(0.0));
  }
}

TEST(BackwardDelay, ZeroDynamicsGiveRampFromEndCondition) {
  // With F = 0 and constant omega, p(t) is the integrated source rho w (T - t).
  const TimeGrid grid = make_delay_grid(1.0, 10, 2);
  const auto traj = forward_delay(Frozen{}, constant_history<Frozen>(grid, 1.0),
                                  ControlSchedule<Frozen>::Zero(1, 20), grid);
  auto readout = TimeResolvedReadout<double>::zeros(1, 11);
  readout.omega.setConstant(0.5);
  const Eigen::VectorXd residual = Eigen::VectorXd::Constant(1, 2.0);
  const auto adj = backward_adjoint_delay(Frozen{}, traj, ControlSchedule<Frozen>::Zero(1, 20),
                                          readout, residual, grid, GradientMode::Continuous);
  for (Eigen::Index k = grid.tail_begin(); k <= grid.n_steps; ++k)
    EXPECT_NEAR(adj.costates(0, k), 2.0 * 0.5 * (grid.t_end() - grid.time(k)), 1e-14) << k;
  for (Eigen::Index k = grid.origin(); k < grid.tail_begin(); ++k)
    EXPECT_NEAR(adj.costates(0, k), 1.0, 1e-14);
}

TEST(BackwardDelay, DiscreteMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const NonlinearCase c(seed);
    const auto fd = c.finite_difference(1e-6);
    const auto adj = c.adjoint(GradientMode::Discrete);
    EXPECT_LT((adj - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff(), 1e-7) << seed;
  }
}

TEST(BackwardDelay, ContinuousErrorShrinksWithStep) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    double previous = 0.0;
    for (std::int64_t m : {16, 32, 64}) {
      const NonlinearCase c(seed, m, true);
      const auto disc = c.adjoint(GradientMode::Discrete);
      const double error = (c.adjoint(GradientMode::Continuous) - disc).cwiseAbs().maxCoeff() /
                           disc.cwiseAbs().maxCoeff();
      if (previous > 0.0) {
        EXPECT_GE(previous / error, 1.5) << "seed " << seed << " m_tau " << m;
      }
      previous = error;
    }
  }
}

TEST(ForwardDelay, PerturbingAControlOnlyAffectsLaterStates) {
  const NonlinearCase c(4);
  const auto base = forward_delay(Nonlinear{}, c.history, c.controls, c.grid);
  const Eigen::Index step = 10;
  ControlSchedule<Nonlinear> bumped = c.controls;
  bumped(1, step) += 0.3;
  const auto moved = forward_delay(Nonlinear{}, c.history, bumped, c.grid);
  const Eigen::Index first_affected = c.grid.origin() + step + 1;
  EXPECT_EQ(moved.states.leftCols(first_affected), base.states.leftCols(first_affected));
  EXPECT_NE(moved.states(0, first_affected), base.states(0, first_affected));
}

TEST(DelayModelContract, JacobiansMatchFiniteDifferences) {
  const Nonlinear model;
  SeededRng rng(6);
  const double h = 1e-6;
  for (int i = 0; i < 50; ++i) {
    const Nonlinear::State r(rng.uniform(-2, 2)), rt(rng.uniform(-2, 2));
    const Nonlinear::Control u(rng.uniform(-2, 2), rng.uniform(-2, 2));
    const Nonlinear::State e(h);
    const double dr = (model.derivative(r + e, rt, u) - model.derivative(r - e, rt, u))(0) / (2 * h);
    const double drt = (model.derivative(r, rt + e, u) - model.derivative(r, rt - e, u))(0) / (2 * h);
    EXPECT_NEAR(model.jacobian_state(r, rt, u)(0, 0), dr, 1e-6);
    EXPECT_NEAR(model.jacobian_delayed(r, rt, u)(0, 0), drt, 1e-6 * std::max(1.0, std::abs(drt)));
    for (int k = 0; k < 2; ++k) {
      const Nonlinear::Control du = Nonlinear::Control::Unit(k) * h;
      const double fd = (model.derivative(r, rt, u + du) - model.derivative(r, rt, u - du))(0) / (2 * h);
      EXPECT_NEAR(model.jacobian_control(r, rt, u)(0, k), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(ControlGradientDelay, PureControlUnitCostate) {
  const TimeGrid grid = make_delay_grid(1.0, 4, 2);
  const auto traj = forward_delay(PureControl{}, constant_history<PureControl>(grid, 0.0),
                                  ControlSchedule<PureControl>::Zero(1, 8), grid);
  AdjointTrajectory<PureControl> adj;
  adj.costates = StatePath<PureControl>::Ones(1, grid.n_steps + 1);
  const auto grad = control_gradient_delay<PureControl>(
      PureControl{}, {adj}, {traj}, ControlSchedule<PureControl>::Zero(1, 8), grid);
  EXPECT_TRUE(grad.isApproxToConstant(grid.dt, 0.0));

  adj.costates.setZero();
  EXPECT_TRUE(control_gradient_delay<PureControl>(PureControl{}, {adj}, {traj},
                                                  ControlSchedule<PureControl>::Zero(1, 8), grid)
                  .isZero(0.0));
}

TEST(ReadoutGradientDelay, UnitStateIncludesTrapezoidWeights) {
  const TimeGrid grid = make_delay_grid(1.0, 5, 1);
  Trajectory<PureControl> traj{StatePath<PureControl>::Ones(1, grid.n_steps + 1)};
  Eigen::MatrixXd residuals(1, 2);
  residuals << 0.3, -0.3;
  const auto g = readout_gradient_delay<PureControl, double>({traj}, residuals, 1, grid);
  const Eigen::VectorXd w = trapezoid_weights<double>(6, grid.dt);
  EXPECT_TRUE(g.omega.row(0).transpose().isApprox(0.3 * w, 1e-15));
  EXPECT_TRUE(g.omega.row(1).transpose().isApprox(-0.3 * w, 1e-15));
  EXPECT_DOUBLE_EQ(g.omega(0, 0), 0.3 * grid.dt / 2);
  EXPECT_EQ(g.bias, Eigen::Vector2d(0.3, -0.3));

  const auto zero =
      readout_gradient_delay<PureControl, double>({traj}, Eigen::MatrixXd::Zero(1, 2), 1, grid);
  EXPECT_TRUE(zero.omega.isZero(0.0));
  EXPECT_TRUE(zero.bias.isZero(0.0));
}
