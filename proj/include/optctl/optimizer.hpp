#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "optctl/errors.hpp"
#include "optctl/numerics.hpp"

namespace optctl {

struct AdamHyper {
  double alpha = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one parameter group.
template <typename Scalar = double>
struct AdamState {
  MatrixX<Scalar> m;
  MatrixX<Scalar> v;
  std::int64_t step_count = 0;
  AdamHyper hyper;

  static AdamState zeros(Eigen::Index rows, Eigen::Index cols, const AdamHyper& hyper) {
    return {MatrixX<Scalar>::Zero(rows, cols), MatrixX<Scalar>::Zero(rows, cols), 0, hyper};
  }
};

/// One bias-corrected Adam update, in place. `grads` is dJ/dparams.
template <typename DerivedP, typename DerivedG, typename Scalar>
void adam_step(Eigen::MatrixBase<DerivedP>& params, const Eigen::MatrixBase<DerivedG>& grads,
               AdamState<Scalar>& state, std::string_view group = "params") {
  if (params.rows() != grads.rows() || params.cols() != grads.cols() ||
      state.m.rows() != params.rows() || state.m.cols() != params.cols())
    throw ShapeError("adam_step: shape mismatch in group '" + std::string(group) + "'");
  if (!grads.allFinite())
    throw NumericError("adam_step: non-finite gradient in group '" + std::string(group) + "'");
  const auto& h = state.hyper;
  ++state.step_count;
  state.m = Scalar(h.beta1) * state.m + Scalar(1 - h.beta1) * grads;
  state.v = Scalar(h.beta2) * state.v + Scalar(1 - h.beta2) * grads.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(Scalar(h.beta1), Scalar(state.step_count));
  const Scalar c2 = Scalar(1) - std::pow(Scalar(h.beta2), Scalar(state.step_count));
  params -= (Scalar(h.alpha) * (state.m.array() / c1) /
             ((state.v.array() / c2).sqrt() + Scalar(h.epsilon)))
                .matrix();
}

/// params <- params - alpha * grads.
template <typename DerivedP, typename DerivedG>
void sgd_step(Eigen::MatrixBase<DerivedP>& params, const Eigen::MatrixBase<DerivedG>& grads,
              typename DerivedP::Scalar alpha) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols())
    throw ShapeError("sgd_step: shape mismatch");
  params -= alpha * grads;
}

}  // namespace optctl
