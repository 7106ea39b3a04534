#pragma once

#include <cstdint>
#include <string>

#include "optctl/config.hpp"
#include "optctl/data.hpp"
#include "optctl/trainer.hpp"

namespace optctl {

/// Normwise relative error max|a - f| / max|f| for one parameter group.
double relative_error(const Eigen::MatrixXd& adjoint, const Eigen::MatrixXd& reference);

struct GroupErrors {
  double controls = 0.0;
  double omega = 0.0;
  double bias = 0.0;
  double max() const { return std::max({controls, omega, bias}); }
};

/// A config, parameters and batch small enough for finite differences.
struct GradCheckInstance {
  TrainConfig config;
  ModelParameters params;
  LabeledDataset data;
};

/// Config for a small instance of `kind` with about `steps` integration steps.
/// Oscillator instances use tau = 16 us, m_tau = steps / 4 and three delay
/// intervals; the MNIST kind feeds its 10-class readout through the direct
/// encoding.
TrainConfig small_instance_config(ExperimentKind kind, std::int64_t steps = 40);

/// Random parameters and inputs for `config`; `samples` rows with random labels.
GradCheckInstance random_instance(const TrainConfig& config, std::uint64_t seed,
                                  std::int64_t samples = 4);

/// Central finite differences of the loss over the whole instance batch.
GradientSet finite_difference_gradient(const GradCheckInstance& instance, double epsilon = 1e-5);

struct GradCheckReport {
  ExperimentKind kind = ExperimentKind::OdeSpiral;
  std::int64_t parameters = 0;
  GroupErrors discrete;
  GroupErrors continuous;
};

/// Adjoint gradients in both modes against central differences.
GradCheckReport gradient_check(const GradCheckInstance& instance, double epsilon = 1e-5);
GradCheckReport gradient_check(const TrainConfig& config, std::int64_t sample_count,
                               double epsilon = 1e-5, std::uint64_t seed = 1);

std::string format_report(const GradCheckReport& report);

/// Continuous-mode control-gradient error relative to discrete mode, on the
/// same smooth continuous-time problem sampled at dt and dt / 2.
struct ConsistencyResult {
  double error_coarse = 0.0;
  double error_fine = 0.0;
  double ratio() const { return error_coarse / error_fine; }
};

/// Smooth random controls, readout weights and (for the oscillator) history,
/// drawn from `seed`, sampled on the config grid implied by `steps`.
GradCheckInstance smooth_instance(ExperimentKind kind, std::int64_t steps, std::uint64_t seed,
                                  std::int64_t samples = 3);

ConsistencyResult continuous_consistency(ExperimentKind kind, std::uint64_t seed,
                                         std::int64_t coarse_steps = 40);

}  // namespace optctl
