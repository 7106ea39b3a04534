#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "optctl/errors.hpp"

namespace optctl {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Uniform time grid t_i = t_start + i * dt, i = 0..n_steps.
///
/// Delay grids (m_tau > 0) start at t = -tau with tau = m_tau * dt: the first
/// m_tau + 1 samples hold the initial history on [-tau, 0] and the remaining
/// n_steps - m_tau samples are integrated. Sample times are always computed as
/// t_start + i * dt, never by accumulation.
struct TimeGrid {
  double t_start = 0.0;
  double dt = 1.0;
  std::int64_t n_steps = 1;
  std::int64_t m_tau = 0;

  double time(std::int64_t i) const { return t_start + static_cast<double>(i) * dt; }
  double t_end() const { return time(n_steps); }
  std::int64_t samples() const { return n_steps + 1; }

  bool is_delay() const { return m_tau > 0; }
  double tau() const { return static_cast<double>(m_tau) * dt; }
  /// Index of t = 0 on a delay grid.
  std::int64_t origin() const { return m_tau; }
  /// Number of integration steps (controls) after the history segment.
  std::int64_t control_steps() const { return n_steps - m_tau; }
  /// Number of delay intervals after t = 0 (the N of T = N tau).
  std::int64_t layers() const { return m_tau > 0 ? n_steps / m_tau - 1 : 0; }
  /// Index of the first sample of the final delay interval [T - tau, T].
  std::int64_t tail_begin() const { return n_steps - m_tau; }
};

TimeGrid make_time_grid(double t_start, double dt, std::int64_t n_steps,
                        std::optional<std::int64_t> m_tau = std::nullopt);

/// Grid spanning [-tau, layers * tau] with m_tau steps per delay; dt = tau / m_tau.
TimeGrid make_delay_grid(double tau, std::int64_t m_tau, std::int64_t layers);

/// Explicit Euler update; dt may be negative for backward sweeps.
template <typename DerivedState, typename DerivedRate>
auto euler_step(const Eigen::MatrixBase<DerivedState>& state,
                const Eigen::MatrixBase<DerivedRate>& derivative,
                typename DerivedState::Scalar dt) {
  if (state.rows() != derivative.rows() || state.cols() != derivative.cols())
    throw ShapeError("euler_step: state and derivative dimensions differ");
  return (state + dt * derivative).eval();
}

/// Trapezoid weights for `count` uniformly spaced samples: dt * (1/2, 1, ..., 1, 1/2).
template <typename Scalar = double>
VectorX<Scalar> trapezoid_weights(std::int64_t count, Scalar dt) {
  if (count < 2) throw ShapeError("trapezoid rule needs at least 2 samples");
  VectorX<Scalar> w = VectorX<Scalar>::Constant(count, dt);
  w(0) = dt / Scalar(2);
  w(count - 1) = dt / Scalar(2);
  return w;
}

/// Trapezoid rule over uniformly spaced samples.
///
/// A column vector is a scalar series and yields a scalar. A matrix holds one
/// sample per column and yields a column vector.
template <typename Derived>
auto trapezoid_integrate(const Eigen::MatrixBase<Derived>& samples, typename Derived::Scalar dt) {
  using Scalar = typename Derived::Scalar;
  if constexpr (Derived::ColsAtCompileTime == 1) {
    if (samples.size() < 2) throw ShapeError("trapezoid rule needs at least 2 samples");
    const Eigen::Index n = samples.size();
    Scalar inner = samples.segment(1, n - 2).sum();
    return dt * (inner + (samples(0) + samples(n - 1)) / Scalar(2));
  } else {
    if (samples.cols() < 2) throw ShapeError("trapezoid rule needs at least 2 samples");
    const Eigen::Index n = samples.cols();
    VectorX<Scalar> inner = samples.middleCols(1, n - 2).rowwise().sum();
    return VectorX<Scalar>(dt * (inner + (samples.col(0) + samples.col(n - 1)) / Scalar(2)));
  }
}

/// Reproducible random stream.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. Uniform doubles take the top 53 bits; normals use the polar
/// Box-Muller method. Neither depends on the standard library's distributions,
/// which are implementation-defined.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n).
  std::uint64_t index(std::uint64_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Independent stream for a worker or sweep cell; depends only on (seed, stream).
  SeededRng child(std::uint64_t stream) const;

  /// Fisher-Yates shuffle of 0..n-1.
  std::vector<std::int64_t> permutation(std::int64_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

/// SplitMix64 finalizer, used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace optctl
