#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "optctl/errors.hpp"
#include "optctl/numerics.hpp"

namespace optctl {

/// Lower bound applied to probabilities inside the logarithm of the loss.
inline constexpr double kLogClamp = 1e-12;

/// Numerically safe softmax (max-subtracted).
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logit");
  const Scalar peak = logits.maxCoeff();
  VectorX<Scalar> y = (logits.derived().reshaped().array() - peak).exp().matrix();
  y /= y.sum();
  return y;
}

/// Mean cross-entropy -(1/K) sum_k sum_l t_lk ln y_lk; rows are samples.
template <typename DerivedT, typename DerivedY>
typename DerivedY::Scalar cross_entropy(const Eigen::MatrixBase<DerivedT>& targets,
                                        const Eigen::MatrixBase<DerivedY>& outputs) {
  using Scalar = typename DerivedY::Scalar;
  if (targets.rows() != outputs.rows() || targets.cols() != outputs.cols())
    throw ShapeError("cross_entropy: targets and outputs differ in shape");
  if (outputs.rows() == 0) throw ShapeError("cross_entropy: empty batch");
  Scalar total = 0;
  for (Eigen::Index k = 0; k < outputs.rows(); ++k)
    for (Eigen::Index l = 0; l < outputs.cols(); ++l)
      if (targets(k, l) != Scalar(0))
        total -= targets(k, l) * std::log(std::max<Scalar>(outputs(k, l), Scalar(kLogClamp)));
  return total / static_cast<Scalar>(outputs.rows());
}

/// dJ/dz for softmax + cross-entropy: (y - t) / K, rows are samples.
template <typename DerivedT, typename DerivedY>
MatrixX<typename DerivedY::Scalar> loss_residual(const Eigen::MatrixBase<DerivedT>& targets,
                                                 const Eigen::MatrixBase<DerivedY>& outputs) {
  using Scalar = typename DerivedY::Scalar;
  if (targets.rows() != outputs.rows() || targets.cols() != outputs.cols())
    throw ShapeError("loss_residual: targets and outputs differ in shape");
  return (outputs - targets.template cast<Scalar>()) / static_cast<Scalar>(outputs.rows());
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

/// Softmax over a linear map of the end state: z = omega r(T) + bias.
template <typename Scalar = double>
struct EndStateReadout {
  MatrixX<Scalar> omega;  // L x M
  VectorX<Scalar> bias;   // L

  static EndStateReadout zeros(Eigen::Index classes, Eigen::Index state_dim) {
    return {MatrixX<Scalar>::Zero(classes, state_dim), VectorX<Scalar>::Zero(classes)};
  }
  Eigen::Index classes() const { return omega.rows(); }
};

/// Softmax over a time integral across the final delay interval:
/// z = int_{T-tau}^{T} omega(t) r(t) dt + bias, discretized by the trapezoid rule.
///
/// Only the first `observed` state components enter the readout. Column block
/// q of `omega` (width `observed`) is omega at the q-th tail sample.
template <typename Scalar = double>
struct TimeResolvedReadout {
  MatrixX<Scalar> omega;  // L x (observed * tail samples)
  VectorX<Scalar> bias;   // L
  Eigen::Index observed = 1;

  static TimeResolvedReadout zeros(Eigen::Index classes, Eigen::Index tail_samples,
                                   Eigen::Index observed = 1) {
    return {MatrixX<Scalar>::Zero(classes, observed * tail_samples), VectorX<Scalar>::Zero(classes),
            observed};
  }
  Eigen::Index classes() const { return omega.rows(); }
  Eigen::Index samples() const { return omega.cols() / observed; }
  auto at(Eigen::Index q) const { return omega.middleCols(q * observed, observed); }
};

template <typename DerivedState, typename Scalar>
VectorX<Scalar> readout_endstate(const Eigen::MatrixBase<DerivedState>& end_state,
                                 const EndStateReadout<Scalar>& params) {
  if (end_state.size() != params.omega.cols() || params.bias.size() != params.omega.rows())
    throw ShapeError("readout_endstate: dimension mismatch");
  return params.omega * end_state + params.bias;
}

/// Observed tail components, flattened sample-major and multiplied by the
/// trapezoid weights. The readout is `omega * weighted_tail + bias`.
template <typename DerivedTail>
VectorX<typename DerivedTail::Scalar> weighted_tail(const Eigen::MatrixBase<DerivedTail>& tail,
                                                    Eigen::Index observed,
                                                    typename DerivedTail::Scalar dt) {
  using Scalar = typename DerivedTail::Scalar;
  if (observed < 1 || observed > tail.rows()) throw ShapeError("weighted_tail: bad observed count");
  const Eigen::Index n = tail.cols();
  const VectorX<Scalar> w = trapezoid_weights<Scalar>(n, dt);
  VectorX<Scalar> out(observed * n);
  for (Eigen::Index q = 0; q < n; ++q)
    for (Eigen::Index c = 0; c < observed; ++c) out(q * observed + c) = w(q) * tail(c, q);
  return out;
}

template <typename DerivedTail, typename Scalar>
VectorX<Scalar> readout_timeresolved(const Eigen::MatrixBase<DerivedTail>& tail,
                                     const TimeResolvedReadout<Scalar>& params, Scalar dt) {
  if (tail.cols() != params.samples())
    throw ShapeError("readout_timeresolved: tail has " + std::to_string(tail.cols()) +
                     " samples, omega has " + std::to_string(params.samples()));
  if (params.bias.size() != params.omega.rows())
    throw ShapeError("readout_timeresolved: bias size differs from class count");
  return params.omega * weighted_tail(tail, params.observed, dt) + params.bias;
}

/// Loss and accuracy over a set of samples.
struct LossReport {
  double loss = 0.0;
  Eigen::MatrixXd outputs;              // K x L softmax outputs
  double accuracy = 0.0;
  std::vector<int> predicted;           // argmax class per sample, -1 if the pass diverged
  std::int64_t diverged = 0;
};

/// Builds a report from per-sample logits (rows). Rows flagged in `failed`
/// count as misclassified and receive uniform outputs.
LossReport make_loss_report(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                            const Eigen::MatrixXd& targets, const std::vector<char>& failed = {});

}  // namespace optctl
