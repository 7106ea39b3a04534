#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "optctl/delay.hpp"
#include "optctl/errors.hpp"

namespace optctl {

/// Optoelectronic delay oscillator constants. Times in microseconds.
struct OeoParams {
  double tau_h = 1590.0;  // high-pass time constant
  double tau_l = 15.9;    // low-pass time constant
  double tau = 230.0;     // loop delay
  double beta = 3.0;      // feedback strength

  double g() const { return 1.0 / tau_h + 1.0 / tau_l; }
  double g_h() const { return 1.0 / tau_h; }
  double g_l() const { return 1.0 / tau_l; }
  double beta_tilde() const { return beta / tau_l; }

  void validate() const {
    if (!(tau_h > 0.0) || !(tau_l > 0.0) || !(tau > 0.0))
      throw ConfigError("oeo: time constants must be positive");
    if (!std::isfinite(beta)) throw ConfigError("oeo: beta must be finite");
  }
};

/// State (xi, eta), control (u1, u2):
///   tau_L dxi/dt = -(1 + tau_L/tau_H) xi - eta + beta cos^2(u1 xi(t - tau) + u2)
///   tau_H deta/dt = xi
template <typename ScalarT = double>
struct OeoModel {
  using Scalar = ScalarT;
  static constexpr int kStateDim = 2;
  static constexpr int kControlDim = 2;
  using State = Eigen::Matrix<Scalar, 2, 1>;
  using Control = Eigen::Matrix<Scalar, 2, 1>;
  using StateJacobian = Eigen::Matrix<Scalar, 2, 2>;
  using ControlJacobian = Eigen::Matrix<Scalar, 2, 2>;

  explicit OeoModel(const OeoParams& p) : params(p) { p.validate(); }

  OeoParams params;

  /// delta = 2 (u1 xi_tau + u2), the argument of the feedback derivative.
  static Scalar delta(const State& r_tau, const Control& u) {
    return Scalar(2) * (u(0) * r_tau(0) + u(1));
  }

  State derivative(const State& r, const State& r_tau, const Control& u) const {
    const Scalar c = std::cos(u(0) * r_tau(0) + u(1));
    return State(-Scalar(params.g()) * r(0) - Scalar(params.g_l()) * r(1) +
                     Scalar(params.beta_tilde()) * c * c,
                 Scalar(params.g_h()) * r(0));
  }
  StateJacobian jacobian_state(const State&, const State&, const Control&) const {
    StateJacobian a;
    a << -Scalar(params.g()), -Scalar(params.g_l()), Scalar(params.g_h()), Scalar(0);
    return a;
  }
  StateJacobian jacobian_delayed(const State&, const State& r_tau, const Control& u) const {
    StateJacobian b = StateJacobian::Zero();
    b(0, 0) = -Scalar(params.beta_tilde()) * u(0) * std::sin(delta(r_tau, u));
    return b;
  }
  ControlJacobian jacobian_control(const State&, const State& r_tau, const Control& u) const {
    const Scalar s = -Scalar(params.beta_tilde()) * std::sin(delta(r_tau, u));
    ControlJacobian c = ControlJacobian::Zero();
    c(0, 0) = s * r_tau(0);
    c(0, 1) = s;
    return c;
  }
};

/// (dxi/dt, deta/dt) for scalar arguments.
inline Eigen::Vector2d oeo_derivative(double xi, double eta, double xi_delayed, double u1,
                                      double u2, const OeoParams& params) {
  const double c = std::cos(u1 * xi_delayed + u2);
  return {(-(1.0 + params.tau_l / params.tau_h) * xi - eta + params.beta * c * c) / params.tau_l,
          xi / params.tau_h};
}

struct OeoJacobians {
  Eigen::Matrix2d state;
  Eigen::Matrix2d delayed;
  Eigen::Matrix2d control;
};

inline OeoJacobians oeo_jacobians(const Eigen::Vector2d& state, const Eigen::Vector2d& delayed,
                                  const Eigen::Vector2d& controls, const OeoParams& params) {
  const OeoModel<double> model(params);
  return {model.jacobian_state(state, delayed, controls),
          model.jacobian_delayed(state, delayed, controls),
          model.jacobian_control(state, delayed, controls)};
}

/// Per-sample (dJ/du1, dJ/du2) densities: -beta~ p_xi sin(delta) xi_tau and
/// -beta~ p_xi sin(delta). Descending along them gives the textbook update
/// du1 = +alpha beta~ sum_k p_xi sin(delta) xi_tau.
inline Eigen::Vector2d oeo_control_gradient_terms(double p_xi, double delta, double xi_delayed,
                                                  const OeoParams& params) {
  const double s = -params.beta_tilde() * p_xi * std::sin(delta);
  return {s * xi_delayed, s};
}

/// Hand-specialized continuous costate sweep for the oscillator with a readout
/// on xi only:
///   dp_xi/dt  = -(1/K) sum_l (y_l - t_l) omega_l + g p_xi - g_H p_eta
///               + beta~ u1(t+tau) sin(delta(t+tau)) p_xi(t+tau)
///   dp_eta/dt = g_L p_xi
/// (the delayed term only on [0, T - tau)). Same discretization as the generic
/// continuous sweep; returns costates on the full grid, zero on the history.
inline Eigen::Matrix2Xd oeo_backward_adjoint_closed_form(
    const OeoParams& params, const Eigen::Matrix2Xd& states, const Eigen::Matrix2Xd& controls,
    const Eigen::MatrixXd& omega, const Eigen::VectorXd& residual, const TimeGrid& grid) {
  const Eigen::Index m = grid.m_tau;
  const Eigen::Index last = grid.n_steps;
  const Eigen::Index steps = grid.control_steps();
  const Eigen::Index tail = grid.tail_begin();
  if (states.cols() != last + 1 || controls.cols() != steps || omega.cols() != m + 1 ||
      omega.rows() != residual.size())
    throw ShapeError("oeo closed-form adjoint: shapes do not match the grid");
  const double g = params.g(), gh = params.g_h(), gl = params.g_l(), bt = params.beta_tilde();
  const double dt = grid.dt;
  const Eigen::VectorXd source = omega.transpose() * residual;

  Eigen::Matrix2Xd p = Eigen::Matrix2Xd::Zero(2, last + 1);
  double p_xi = 0.0, p_eta = 0.0;
  for (Eigen::Index k = last - 1; k >= m; --k) {
    double rate_xi = g * p_xi - gh * p_eta;
    const double rate_eta = gl * p_xi;
    if (k + 1 < steps) {
      const double u1 = controls(0, k + 1), u2 = controls(1, k + 1);
      const double delta_ahead = 2.0 * (u1 * states(0, k + 1) + u2);
      rate_xi += bt * u1 * std::sin(delta_ahead) * p(0, k + 1 + m);
    }
    // Reverse-time Euler: p(t - dt) = p(t) - dt dp/dt. The readout source
    // -(1/K) sum_l (y_l - t_l) omega_l is integrated over the segment.
    double next_xi = p_xi - dt * rate_xi;
    const double next_eta = p_eta - dt * rate_eta;
    if (k >= tail) next_xi += 0.5 * dt * (source(k - tail) + source(k + 1 - tail));
    p_xi = next_xi;
    p_eta = next_eta;
    if (!std::isfinite(p_xi) || !std::isfinite(p_eta))
      throw DivergenceError("oeo closed-form adjoint: non-finite costate", k);
    p(0, k) = p_xi;
    p(1, k) = p_eta;
  }
  return p;
}

/// Closed-form control gradient (dJ/du1, dJ/du2) per step from costates of
/// `oeo_backward_adjoint_closed_form`, dt-weighted like the generic path.
inline Eigen::Matrix2Xd oeo_control_gradient_closed_form(const OeoParams& params,
                                                         const Eigen::Matrix2Xd& states,
                                                         const Eigen::Matrix2Xd& controls,
                                                         const Eigen::Matrix2Xd& costates,
                                                         const TimeGrid& grid) {
  const Eigen::Index m = grid.m_tau;
  const Eigen::Index steps = grid.control_steps();
  Eigen::Matrix2Xd grad(2, steps);
  for (Eigen::Index i = 0; i < steps; ++i) {
    const double xi_tau = states(0, i);
    const double delta = 2.0 * (controls(0, i) * xi_tau + controls(1, i));
    grad.col(i) = grid.dt * oeo_control_gradient_terms(costates(0, m + i), delta, xi_tau, params);
  }
  return grad;
}

}  // namespace optctl
