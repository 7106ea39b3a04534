#pragma once

#include <Eigen/Dense>

#include <concepts>
#include <vector>

#include "optctl/errors.hpp"
#include "optctl/numerics.hpp"
#include "optctl/readout.hpp"

namespace optctl {

/// How the costate is discretized.
///
/// Continuous: the adjoint ODE dp/dt = -(dF/dr)^T p is integrated backward with
/// explicit Euler on the forward grid; carries an O(dt) mismatch to the exact
/// gradient of the discretized loss. Discrete: exact reverse-mode
/// differentiation of the forward Euler recursion.
enum class GradientMode { Continuous, Discrete };

/// dr/dt = F(r, u) with fixed state and control dimensions.
template <class M>
concept OdeModel = requires(const M& m, const typename M::State& r, const typename M::Control& u) {
  typename M::Scalar;
  { M::kStateDim } -> std::convertible_to<int>;
  { M::kControlDim } -> std::convertible_to<int>;
  { m.derivative(r, u) } -> std::convertible_to<typename M::State>;
  { m.jacobian_state(r, u) } -> std::convertible_to<typename M::StateJacobian>;
  { m.jacobian_control(r, u) } -> std::convertible_to<typename M::ControlJacobian>;
};

/// Per-step piecewise-constant controls, one column per step.
template <class Model>
using ControlSchedule = Eigen::Matrix<typename Model::Scalar, Model::kControlDim, Eigen::Dynamic>;
/// State samples, one column per grid point.
template <class Model>
using StatePath = Eigen::Matrix<typename Model::Scalar, Model::kStateDim, Eigen::Dynamic>;

template <class Model>
struct Trajectory {
  StatePath<Model> states;
  auto at(Eigen::Index i) const { return states.col(i); }
  auto end_state() const { return states.col(states.cols() - 1); }
};

template <class Model>
struct AdjointTrajectory {
  StatePath<Model> costates;
  GradientMode mode = GradientMode::Continuous;
};

/// dr/dt = tanh(a(t) r + b(t)), elementwise tanh.
///
/// The control vector packs vec(a) (column-major) followed by b.
template <typename ScalarT = double, int Dim = 2>
struct TanhFlow {
  using Scalar = ScalarT;
  static constexpr int kStateDim = Dim;
  static constexpr int kControlDim = Dim * Dim + Dim;
  using State = Eigen::Matrix<Scalar, Dim, 1>;
  using Control = Eigen::Matrix<Scalar, kControlDim, 1>;
  using Weight = Eigen::Matrix<Scalar, Dim, Dim>;
  using StateJacobian = Eigen::Matrix<Scalar, Dim, Dim>;
  using ControlJacobian = Eigen::Matrix<Scalar, Dim, kControlDim>;

  static Weight weight(const Control& u) { return Eigen::Map<const Weight>(u.data()); }
  static State bias(const Control& u) { return u.template tail<Dim>(); }
  static Control pack(const Weight& a, const State& b) {
    Control u;
    u.template head<Dim * Dim>() = a.reshaped();
    u.template tail<Dim>() = b;
    return u;
  }
  /// Flat index of a(i, j) inside a control vector.
  static constexpr int weight_index(int i, int j) { return i + Dim * j; }
  static constexpr int bias_index(int i) { return Dim * Dim + i; }

  State derivative(const State& r, const Control& u) const {
    return (weight(u) * r + bias(u)).array().tanh().matrix();
  }
  StateJacobian jacobian_state(const State& r, const Control& u) const {
    const Weight a = weight(u);
    const State sech2 = sech_squared(a * r + bias(u));
    return sech2.asDiagonal() * a;
  }
  ControlJacobian jacobian_control(const State& r, const Control& u) const {
    const State sech2 = sech_squared(weight(u) * r + bias(u));
    ControlJacobian jac = ControlJacobian::Zero();
    for (int i = 0; i < Dim; ++i) {
      for (int j = 0; j < Dim; ++j) jac(i, weight_index(i, j)) = sech2(i) * r(j);
      jac(i, bias_index(i)) = sech2(i);
    }
    return jac;
  }

 private:
  static State sech_squared(const State& s) {
    return (Scalar(1) - s.array().tanh().square()).matrix();
  }
};

/// Identity weight and zero bias at every step.
template <typename Scalar = double, int Dim = 2>
ControlSchedule<TanhFlow<Scalar, Dim>> identity_tanh_controls(std::int64_t n_steps) {
  using Flow = TanhFlow<Scalar, Dim>;
  const typename Flow::Control u =
      Flow::pack(Flow::Weight::Identity(), Flow::State::Zero());
  return u.replicate(1, n_steps);
}

template <OdeModel Model>
Trajectory<Model> forward_ode(const Model& model, const typename Model::State& input,
                              const ControlSchedule<Model>& controls, const TimeGrid& grid) {
  if (controls.cols() != grid.n_steps)
    throw ShapeError("forward_ode: " + std::to_string(controls.cols()) + " control samples for " +
                     std::to_string(grid.n_steps) + " steps");
  Trajectory<Model> traj;
  traj.states.resize(Model::kStateDim, grid.n_steps + 1);
  traj.states.col(0) = input;
  typename Model::State r = input;
  for (Eigen::Index i = 0; i < grid.n_steps; ++i) {
    const typename Model::Control u = controls.col(i);
    r += grid.dt * model.derivative(r, u);
    if (!r.allFinite()) throw DivergenceError("forward_ode: non-finite state", i + 1);
    traj.states.col(i + 1) = r;
  }
  return traj;
}

/// p(T) = omega^T residual, residual = dJ/dz for this sample.
template <typename DerivedResidual, typename Scalar>
VectorX<Scalar> end_condition_from_residual(const EndStateReadout<Scalar>& readout,
                                            const Eigen::MatrixBase<DerivedResidual>& residual) {
  if (residual.size() != readout.omega.rows())
    throw ShapeError("adjoint end condition: residual size differs from class count");
  return readout.omega.transpose() * residual;
}

/// p(T) = dPsi/dr(T) for one sample of a batch of size `batch_size`.
template <typename DerivedState, typename DerivedTarget, typename Scalar>
VectorX<Scalar> adjoint_end_condition(const Eigen::MatrixBase<DerivedState>& end_state,
                                      const EndStateReadout<Scalar>& readout,
                                      const Eigen::MatrixBase<DerivedTarget>& target,
                                      Eigen::Index batch_size) {
  if (target.size() != readout.classes()) throw ShapeError("adjoint_end_condition: target size");
  if (batch_size < 1) throw ShapeError("adjoint_end_condition: batch size must be >= 1");
  const VectorX<Scalar> y = softmax(readout_endstate(end_state, readout));
  const VectorX<Scalar> residual = (y - target.template cast<Scalar>()) / Scalar(batch_size);
  return end_condition_from_residual(readout, residual);
}

template <OdeModel Model>
AdjointTrajectory<Model> backward_adjoint_ode(const Model& model, const Trajectory<Model>& traj,
                                              const ControlSchedule<Model>& controls,
                                              const typename Model::State& p_end,
                                              const TimeGrid& grid,
                                              GradientMode mode = GradientMode::Continuous) {
  const Eigen::Index n = grid.n_steps;
  if (traj.states.cols() != n + 1 || controls.cols() != n)
    throw ShapeError("backward_adjoint_ode: trajectory/controls do not match the grid");
  AdjointTrajectory<Model> adj;
  adj.mode = mode;
  adj.costates.resize(Model::kStateDim, n + 1);
  adj.costates.col(n) = p_end;
  typename Model::State p = p_end;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const typename Model::Control u = controls.col(i);
    // Discrete: Jacobian of the step that produced r_{i+1}. Continuous: the
    // adjoint right-hand side at the segment's right end t_{i+1}.
    const typename Model::State r =
        mode == GradientMode::Discrete ? traj.states.col(i) : traj.states.col(i + 1);
    p += grid.dt * (model.jacobian_state(r, u).transpose() * p);
    if (!p.allFinite()) throw DivergenceError("backward_adjoint_ode: non-finite costate", i);
    adj.costates.col(i) = p;
  }
  return adj;
}

/// Adds this sample's dJ/du_i (parameter gradient, includes the dt quadrature
/// weight) to `grad`.
template <OdeModel Model>
void accumulate_control_gradient_ode(const Model& model, const AdjointTrajectory<Model>& adj,
                                     const Trajectory<Model>& traj,
                                     const ControlSchedule<Model>& controls, const TimeGrid& grid,
                                     ControlSchedule<Model>& grad) {
  const Eigen::Index n = controls.cols();
  if (grad.cols() != n || adj.costates.cols() != n + 1 || traj.states.cols() != n + 1)
    throw ShapeError("control_gradient_ode: batch shapes disagree");
  const Eigen::Index shift = adj.mode == GradientMode::Discrete ? 1 : 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const typename Model::State r = traj.states.col(i);
    const typename Model::Control u = controls.col(i);
    grad.col(i).noalias() +=
        grid.dt * (model.jacobian_control(r, u).transpose() * adj.costates.col(i + shift));
  }
}

/// Batch control gradient dJ/du, summed over samples in ascending order.
template <OdeModel Model>
ControlSchedule<Model> control_gradient_ode(const Model& model,
                                            const std::vector<AdjointTrajectory<Model>>& adjoints,
                                            const std::vector<Trajectory<Model>>& trajs,
                                            const ControlSchedule<Model>& controls,
                                            const TimeGrid& grid) {
  if (adjoints.size() != trajs.size())
    throw ShapeError("control_gradient_ode: adjoint and trajectory batch sizes differ");
  ControlSchedule<Model> grad = ControlSchedule<Model>::Zero(Model::kControlDim, controls.cols());
  for (std::size_t k = 0; k < trajs.size(); ++k)
    accumulate_control_gradient_ode(model, adjoints[k], trajs[k], controls, grid, grad);
  return grad;
}

}  // namespace optctl
