#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "optctl/config.hpp"
#include "optctl/data.hpp"
#include "optctl/delay.hpp"
#include "optctl/ode.hpp"
#include "optctl/oeo.hpp"
#include "optctl/optimizer.hpp"
#include "optctl/readout.hpp"

namespace optctl {

using OdeFlow = TanhFlow<double, 2>;
using Oscillator = OeoModel<double>;

/// Trainable state: control schedule (one column per step) and readout.
struct ModelParameters {
  ExperimentKind kind = ExperimentKind::OdeSpiral;
  Eigen::MatrixXd controls;
  Eigen::MatrixXd omega;
  Eigen::VectorXd bias;
};

/// dJ/dparams for one batch, plus the batch's loss bookkeeping.
struct GradientSet {
  Eigen::MatrixXd controls;
  Eigen::MatrixXd omega;
  Eigen::VectorXd bias;
  double loss = 0.0;
  std::int64_t correct = 0;
  std::int64_t diverged = 0;
  std::int64_t count = 0;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double wall_s = 0.0;
  std::int64_t diverged = 0;
};

struct MetricsLog {
  std::vector<EpochRecord> records;

  /// `epoch,train_loss,train_acc,test_loss,test_acc,wall_s`.
  void write_csv(std::ostream& out, bool include_wall = true) const;
  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv(bool include_wall = true) const;
  double best_test_acc() const;
};

/// Adam moments for the three parameter groups.
struct OptimizerState {
  AdamState<double> controls;
  AdamState<double> omega;
  AdamState<double> bias;
};

/// Grid implied by the config: [0, n_steps dt] for the tanh flow, [-tau, T]
/// with dt = tau / m_tau for the oscillator.
TimeGrid make_grid(const TrainConfig& config);

/// Epoch-0 parameters: identity weights / zero bias for the tanh flow, constant
/// (u1_init, u2_init) for the oscillator; zero readout in both cases.
ModelParameters initial_parameters(const TrainConfig& config);

OptimizerState make_optimizer_state(const TrainConfig& config, const ModelParameters& params);

/// Throws ShapeError when `params` does not fit the config's grid and classes.
void check_parameters(const TrainConfig& config, const ModelParameters& params);

/// Initial history for one dataset row (delay kinds only).
OeoHistory encode_input(const TrainConfig& config, const LabeledDataset& data, Eigen::Index row,
                        const TimeGrid& grid);

/// Logits for one row. Throws DivergenceError when the forward pass leaves the
/// bounded region.
Eigen::VectorXd forward_logits(const TrainConfig& config, const ModelParameters& params,
                               const LabeledDataset& data, Eigen::Index row);

/// Full state path for one row: [0, T] for the tanh flow, [-tau, T] for the
/// oscillator (2 x samples).
Eigen::Matrix2Xd forward_states(const TrainConfig& config, const ModelParameters& params,
                                const LabeledDataset& data, Eigen::Index row);

/// Loss J = -(1/B) sum t ln y over `rows` and its gradient with respect to all
/// parameter groups. Samples whose forward or backward pass diverges are
/// dropped from the gradient and counted; B is always rows.size().
/// Reduction order is fixed, so the result does not depend on `threads`.
GradientSet batch_gradient(const TrainConfig& config, const ModelParameters& params,
                           const LabeledDataset& data, const std::vector<std::int64_t>& rows,
                           GradientMode mode, int threads = 1);

/// Forward-only loss and accuracy over a whole dataset.
LossReport evaluate(const TrainConfig& config, const ModelParameters& params,
                    const LabeledDataset& data, int threads = 1);

/// Applies one optimizer step to every group.
void apply_update(const TrainConfig& config, ModelParameters& params, const GradientSet& grads,
                  OptimizerState& state);

struct TrainResult {
  ModelParameters params;
  MetricsLog log;
  OptimizerState optimizer;
  std::int64_t diverged_total = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs config.epochs epochs. A non-finite loss stops training with a
/// NumericError after saving the last good parameters to
/// config.checkpoint_path (when set).
TrainResult train(const TrainConfig& config, const LabeledDataset& train_set,
                  const LabeledDataset& test_set, const EpochCallback& on_epoch = {},
                  std::optional<ModelParameters> start = std::nullopt);

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

/// Spirals (generated from the data seed, or read from CSV) or MNIST IDX files.
DatasetPair load_datasets(const TrainConfig& config);

/// Runs `body(i)` for i in [0, count) on up to `threads` workers.
void parallel_for(std::int64_t count, int threads, const std::function<void(std::int64_t)>& body);

}  // namespace optctl
