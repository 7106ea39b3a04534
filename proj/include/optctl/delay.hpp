#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <vector>

#include "optctl/errors.hpp"
#include "optctl/numerics.hpp"
#include "optctl/ode.hpp"
#include "optctl/readout.hpp"

namespace optctl {

/// dr/dt = F(r(t), r(t - tau), u(t)) with analytic Jacobians.
template <class M>
concept DelayModel = requires(const M& m, const typename M::State& r,
                              const typename M::State& r_tau, const typename M::Control& u) {
  typename M::Scalar;
  { M::kStateDim } -> std::convertible_to<int>;
  { M::kControlDim } -> std::convertible_to<int>;
  { m.derivative(r, r_tau, u) } -> std::convertible_to<typename M::State>;
  { m.jacobian_state(r, r_tau, u) } -> std::convertible_to<typename M::StateJacobian>;
  { m.jacobian_delayed(r, r_tau, u) } -> std::convertible_to<typename M::StateJacobian>;
  { m.jacobian_control(r, r_tau, u) } -> std::convertible_to<typename M::ControlJacobian>;
};

inline constexpr double kDefaultDivergenceBound = 1e6;

/// Initial condition on [-tau, 0]: m_tau + 1 samples.
template <class Model>
struct DelayHistory {
  StatePath<Model> samples;
};

/// Method of steps on an exact delay-aligned grid.
///
/// `out.states` covers [-tau, T] (grid.n_steps + 1 columns); the first
/// m_tau + 1 columns are the history. Step i (from t_i to t_{i+1}, i >= 0)
/// reads the state exactly m_tau samples back and control column i.
template <DelayModel Model>
void forward_delay_into(const Model& model, const DelayHistory<Model>& history,
                        const ControlSchedule<Model>& controls, const TimeGrid& grid,
                        Trajectory<Model>& out,
                        typename Model::Scalar bound = kDefaultDivergenceBound) {
  if (!grid.is_delay()) throw ConfigError("forward_delay: grid is not delay-aligned");
  const Eigen::Index m = grid.m_tau;
  const Eigen::Index steps = grid.control_steps();
  if (history.samples.cols() != m + 1)
    throw ShapeError("forward_delay: history has " + std::to_string(history.samples.cols()) +
                     " samples, expected m_tau + 1 = " + std::to_string(m + 1));
  if (controls.cols() != steps)
    throw ShapeError("forward_delay: " + std::to_string(controls.cols()) +
                     " control samples for " + std::to_string(steps) + " steps");
  if (!history.samples.allFinite()) throw NumericError("forward_delay: non-finite history");

  out.states.resize(Model::kStateDim, grid.n_steps + 1);
  out.states.leftCols(m + 1) = history.samples;
  typename Model::State r = history.samples.col(m);
  for (Eigen::Index i = 0; i < steps; ++i) {
    const typename Model::State r_tau = out.states.col(i);
    const typename Model::Control u = controls.col(i);
    r += grid.dt * model.derivative(r, r_tau, u);
    if (!(r.array().abs() <= bound).all())
      throw DivergenceError("forward_delay: state left the bounded region", m + i + 1);
    out.states.col(m + i + 1) = r;
  }
}

template <DelayModel Model>
Trajectory<Model> forward_delay(const Model& model, const DelayHistory<Model>& history,
                                const ControlSchedule<Model>& controls, const TimeGrid& grid,
                                typename Model::Scalar bound = kDefaultDivergenceBound) {
  Trajectory<Model> out;
  forward_delay_into(model, history, controls, grid, out, bound);
  return out;
}

/// Backward costate sweep for the time-resolved softmax readout.
///
/// Continuous mode integrates, with p(T) = 0,
///   dp/dt = -(dPsi/dz) omega(t) - (dF/dr)^T p            on [T - tau, T)
///   dp/dt = -(dF/dr)^T p - (dF/dr_tau)(t + tau)^T p(t + tau)   on [0, T - tau)
/// by explicit Euler in reverse time, adding the readout source over each
/// segment with the trapezoid weights used by the forward quadrature.
/// Discrete mode is the exact reverse-mode derivative of `forward_delay`.
/// History costates (t < 0) are left at zero.
template <DelayModel Model, typename DerivedResidual>
void backward_adjoint_delay_into(const Model& model, const Trajectory<Model>& traj,
                                 const ControlSchedule<Model>& controls,
                                 const TimeResolvedReadout<typename Model::Scalar>& readout,
                                 const Eigen::MatrixBase<DerivedResidual>& residual,
                                 const TimeGrid& grid, GradientMode mode,
                                 AdjointTrajectory<Model>& out) {
  using Scalar = typename Model::Scalar;
  using State = typename Model::State;
  using Control = typename Model::Control;
  const Eigen::Index m = grid.m_tau;
  const Eigen::Index last = grid.n_steps;
  const Eigen::Index steps = grid.control_steps();
  const Eigen::Index tail = grid.tail_begin();
  const Eigen::Index obs = readout.observed;
  if (traj.states.cols() != last + 1 || controls.cols() != steps)
    throw ShapeError("backward_adjoint_delay: trajectory/controls do not match the grid");
  if (readout.samples() != m + 1 || residual.size() != readout.classes() || obs > Model::kStateDim)
    throw ShapeError("backward_adjoint_delay: readout does not match the grid");

  // Readout source density omega(t)^T dPsi/dz at each tail sample.
  const VectorX<Scalar> source = readout.omega.transpose() * residual;
  const Scalar dt = grid.dt;
  auto add_source = [&](State& p, Eigen::Index q, Scalar weight) {
    for (Eigen::Index c = 0; c < obs; ++c) p(c) += weight * source(q * obs + c);
  };

  out.mode = mode;
  out.costates.setZero(Model::kStateDim, last + 1);
  State p = State::Zero();
  if (mode == GradientMode::Discrete) {
    add_source(p, m, dt / Scalar(2));
    out.costates.col(last) = p;
    for (Eigen::Index k = last - 1; k >= m; --k) {
      const Eigen::Index i = k - m;
      const Control u = controls.col(i);
      const State r = traj.states.col(k);
      const State r_tau = traj.states.col(i);
      State next = p + dt * (model.jacobian_state(r, r_tau, u).transpose() * p);
      if (k < steps) {
        // Step k reads r_k as its delayed argument and produces r_{k+m+1}.
        const Control u_k = controls.col(k);
        next.noalias() += dt * (model.jacobian_delayed(traj.states.col(k + m), r, u_k).transpose() *
                                out.costates.col(k + m + 1));
      }
      if (k >= tail) add_source(next, k - tail, (k == tail ? dt / Scalar(2) : dt));
      if (!next.allFinite()) throw DivergenceError("backward_adjoint_delay: non-finite costate", k);
      p = next;
      out.costates.col(k) = p;
    }
  } else {
    out.costates.col(last) = p;
    for (Eigen::Index k = last - 1; k >= m; --k) {
      const Control u = controls.col(k - m);
      const State r = traj.states.col(k + 1);
      const State r_tau = traj.states.col(k + 1 - m);
      State next = p + dt * (model.jacobian_state(r, r_tau, u).transpose() * p);
      if (k + 1 < steps) {
        // dF(t + tau)/dr_tau at t = t_{k+1}: the step that reads r_{k+1}.
        const Control u_ahead = controls.col(k + 1);
        next.noalias() += dt * (model.jacobian_delayed(traj.states.col(k + 1 + m), r, u_ahead)
                                    .transpose() *
                                out.costates.col(k + 1 + m));
      }
      if (k >= tail) {
        add_source(next, k - tail, dt / Scalar(2));
        add_source(next, k + 1 - tail, dt / Scalar(2));
      }
      if (!next.allFinite()) throw DivergenceError("backward_adjoint_delay: non-finite costate", k);
      p = next;
      out.costates.col(k) = p;
    }
  }
}

template <DelayModel Model, typename DerivedResidual>
AdjointTrajectory<Model> backward_adjoint_delay(
    const Model& model, const Trajectory<Model>& traj, const ControlSchedule<Model>& controls,
    const TimeResolvedReadout<typename Model::Scalar>& readout,
    const Eigen::MatrixBase<DerivedResidual>& residual, const TimeGrid& grid,
    GradientMode mode = GradientMode::Continuous) {
  AdjointTrajectory<Model> out;
  backward_adjoint_delay_into(model, traj, controls, readout, residual, grid, mode, out);
  return out;
}

/// Adds this sample's dJ/du_i = dt (dF/du)^T p to `grad` (dt is the quadrature
/// weight of the piecewise-constant control sample).
template <DelayModel Model>
void accumulate_control_gradient_delay(const Model& model, const AdjointTrajectory<Model>& adj,
                                       const Trajectory<Model>& traj,
                                       const ControlSchedule<Model>& controls,
                                       const TimeGrid& grid, ControlSchedule<Model>& grad) {
  const Eigen::Index m = grid.m_tau;
  const Eigen::Index steps = controls.cols();
  if (grad.cols() != steps || traj.states.cols() != grid.n_steps + 1 ||
      adj.costates.cols() != grid.n_steps + 1 || steps != grid.control_steps())
    throw ShapeError("control_gradient_delay: shapes disagree");
  const Eigen::Index shift = adj.mode == GradientMode::Discrete ? 1 : 0;
  for (Eigen::Index i = 0; i < steps; ++i) {
    const typename Model::State r = traj.states.col(m + i);
    const typename Model::State r_tau = traj.states.col(i);
    const typename Model::Control u = controls.col(i);
    grad.col(i).noalias() += grid.dt * (model.jacobian_control(r, r_tau, u).transpose() *
                                        adj.costates.col(m + i + shift));
  }
}

template <DelayModel Model>
ControlSchedule<Model> control_gradient_delay(const Model& model,
                                              const std::vector<AdjointTrajectory<Model>>& adjoints,
                                              const std::vector<Trajectory<Model>>& trajs,
                                              const ControlSchedule<Model>& controls,
                                              const TimeGrid& grid) {
  if (adjoints.size() != trajs.size())
    throw ShapeError("control_gradient_delay: adjoint and trajectory batch sizes differ");
  ControlSchedule<Model> grad = ControlSchedule<Model>::Zero(Model::kControlDim, controls.cols());
  for (std::size_t k = 0; k < trajs.size(); ++k)
    accumulate_control_gradient_delay(model, adjoints[k], trajs[k], controls, grid, grad);
  return grad;
}

/// dJ/domega and dJ/db for the time-resolved readout.
template <typename Scalar = double>
struct ReadoutGradient {
  MatrixX<Scalar> omega;
  VectorX<Scalar> bias;
};

/// Adds one sample: dJ/domega_q = w_q residual r(t_q)^T with trapezoid weights
/// w_q; dJ/db = residual. `tail` holds the samples on [T - tau, T].
template <typename DerivedTail, typename DerivedResidual, typename Scalar>
void accumulate_readout_gradient_delay(const Eigen::MatrixBase<DerivedTail>& tail,
                                       const Eigen::MatrixBase<DerivedResidual>& residual,
                                       Eigen::Index observed, Scalar dt,
                                       ReadoutGradient<Scalar>& grad) {
  if (residual.size() != grad.bias.size() || grad.omega.cols() != observed * tail.cols())
    throw ShapeError("readout_gradient_delay: shapes disagree");
  grad.omega.noalias() += residual * weighted_tail(tail, observed, dt).transpose();
  grad.bias += residual;
}

template <class Model, typename Scalar>
ReadoutGradient<Scalar> readout_gradient_delay(const std::vector<Trajectory<Model>>& trajs,
                                               const MatrixX<Scalar>& residuals,
                                               Eigen::Index observed, const TimeGrid& grid) {
  if (static_cast<Eigen::Index>(trajs.size()) != residuals.rows())
    throw ShapeError("readout_gradient_delay: one residual row per trajectory required");
  const Eigen::Index samples = grid.m_tau + 1;
  ReadoutGradient<Scalar> grad{MatrixX<Scalar>::Zero(residuals.cols(), observed * samples),
                               VectorX<Scalar>::Zero(residuals.cols())};
  for (std::size_t k = 0; k < trajs.size(); ++k)
    accumulate_readout_gradient_delay(trajs[k].states.rightCols(samples),
                                      residuals.row(static_cast<Eigen::Index>(k)).transpose(),
                                      observed, grid.dt, grad);
  return grad;
}

}  // namespace optctl
