#include "optctl/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "optctl/checkpoint.hpp"
#include "optctl/errors.hpp"

namespace optctl {

namespace {

constexpr std::int64_t kChunk = 8;

bool is_delay_kind(ExperimentKind kind) { return kind != ExperimentKind::OdeSpiral; }

Eigen::Index readout_width(const TrainConfig& config) {
  return is_delay_kind(config.kind) ? config.m_tau + 1 : OdeFlow::kStateDim;
}

Eigen::Index control_dim(const TrainConfig& config) {
  return is_delay_kind(config.kind) ? Oscillator::kControlDim : OdeFlow::kControlDim;
}

double sample_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& target) {
  double loss = 0.0;
  for (Eigen::Index l = 0; l < y.size(); ++l)
    if (target(l) != 0.0) loss -= target(l) * std::log(std::max(y(l), kLogClamp));
  return loss;
}

/// Per-chunk accumulator; sums are formed in ascending row order.
struct Partial {
  Eigen::MatrixXd controls;
  Eigen::MatrixXd omega;
  Eigen::VectorXd bias;
  double loss = 0.0;
  std::int64_t correct = 0;
  std::int64_t diverged = 0;
};

/// Shared state for one batch pass; read-only while workers run.
struct PassContext {
  const TrainConfig& config;
  const LabeledDataset& data;
  TimeGrid grid;
  double batch_size;
  GradientMode mode;
};

class OdePass {
 public:
  OdePass(const PassContext& ctx, const ModelParameters& params)
      : ctx_(ctx), controls_(params.controls), readout_{params.omega, params.bias} {}

  void run(Eigen::Index row, Partial& out) const {
    const OdeFlow::State x = ctx_.data.inputs.row(row).transpose().head<2>();
    const Trajectory<OdeFlow> traj = forward_ode(flow_, x, controls_, ctx_.grid);
    const Eigen::VectorXd end = traj.end_state();
    const Eigen::VectorXd y = softmax(readout_endstate(end, readout_));
    const Eigen::VectorXd target = ctx_.data.targets.row(row).transpose();
    const Eigen::VectorXd residual = (y - target) / ctx_.batch_size;
    const OdeFlow::State p_end = end_condition_from_residual(readout_, residual);
    const AdjointTrajectory<OdeFlow> adj =
        backward_adjoint_ode(flow_, traj, controls_, p_end, ctx_.grid, ctx_.mode);
    ControlSchedule<OdeFlow> grad = ControlSchedule<OdeFlow>::Zero(OdeFlow::kControlDim,
                                                                   controls_.cols());
    accumulate_control_gradient_ode(flow_, adj, traj, controls_, ctx_.grid, grad);
    out.controls += grad;
    out.omega.noalias() += residual * end.transpose();
    out.bias += residual;
    out.loss += sample_loss(y, target);
    if (argmax(y) == ctx_.data.labels[static_cast<std::size_t>(row)]) ++out.correct;
  }

 private:
  const PassContext& ctx_;
  OdeFlow flow_;
  ControlSchedule<OdeFlow> controls_;
  EndStateReadout<double> readout_;
};

class DelayPass {
 public:
  DelayPass(const PassContext& ctx, const ModelParameters& params)
      : ctx_(ctx),
        model_(ctx.config.oeo_params()),
        controls_(params.controls),
        readout_{params.omega, params.bias, 1} {}

  struct Workspace {
    Trajectory<Oscillator> traj;
    AdjointTrajectory<Oscillator> adj;
    ControlSchedule<Oscillator> grad;
  };

  void run(Eigen::Index row, Partial& out, Workspace& ws) const {
    const Eigen::Index m = ctx_.grid.m_tau;
    const OeoHistory history = encode_input(ctx_.config, ctx_.data, row, ctx_.grid);
    forward_delay_into(model_, history, controls_, ctx_.grid, ws.traj, ctx_.config.divergence_bound);
    const auto tail = ws.traj.states.rightCols(m + 1);
    const Eigen::VectorXd y = softmax(readout_timeresolved(tail, readout_, ctx_.grid.dt));
    const Eigen::VectorXd target = ctx_.data.targets.row(row).transpose();
    const Eigen::VectorXd residual = (y - target) / ctx_.batch_size;
    backward_adjoint_delay_into(model_, ws.traj, controls_, readout_, residual, ctx_.grid,
                                ctx_.mode, ws.adj);
    ws.grad.setZero(Oscillator::kControlDim, controls_.cols());
    accumulate_control_gradient_delay(model_, ws.adj, ws.traj, controls_, ctx_.grid, ws.grad);
    out.controls += ws.grad;
    out.omega.noalias() += residual * weighted_tail(tail, 1, ctx_.grid.dt).transpose();
    out.bias += residual;
    out.loss += sample_loss(y, target);
    if (argmax(y) == ctx_.data.labels[static_cast<std::size_t>(row)]) ++out.correct;
  }

  Eigen::VectorXd logits(Eigen::Index row, Trajectory<Oscillator>& traj) const {
    const OeoHistory history = encode_input(ctx_.config, ctx_.data, row, ctx_.grid);
    forward_delay_into(model_, history, controls_, ctx_.grid, traj, ctx_.config.divergence_bound);
    return readout_timeresolved(traj.states.rightCols(ctx_.grid.m_tau + 1), readout_,
                                ctx_.grid.dt);
  }

 private:
  const PassContext& ctx_;
  Oscillator model_;
  ControlSchedule<Oscillator> controls_;
  TimeResolvedReadout<double> readout_;
};

Partial zero_partial(const ModelParameters& params) {
  return {Eigen::MatrixXd::Zero(params.controls.rows(), params.controls.cols()),
          Eigen::MatrixXd::Zero(params.omega.rows(), params.omega.cols()),
          Eigen::VectorXd::Zero(params.bias.size())};
}

void check_dataset(const TrainConfig& config, const LabeledDataset& data) {
  data.validate();
  if (data.classes() != config.classes())
    throw ShapeError("dataset has " + std::to_string(data.classes()) + " classes, " +
                     to_string(config.kind) + " expects " + std::to_string(config.classes()));
  const bool needs_pair =
      config.kind == ExperimentKind::OdeSpiral || config.encoding == InputEncoding::Spiral;
  if (needs_pair && data.input_dim() != 2)
    throw ShapeError("dataset rows have " + std::to_string(data.input_dim()) +
                     " columns, expected 2");
}

}  // namespace

void parallel_for(std::int64_t count, int threads, const std::function<void(std::int64_t)>& body) {
  const auto workers = static_cast<std::int64_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::int64_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::int64_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::int64_t w = 1; w < std::min(workers, count); ++w) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

void MetricsLog::write_csv(std::ostream& out, bool include_wall) const {
  out << "epoch,train_loss,train_acc,test_loss,test_acc" << (include_wall ? ",wall_s" : "")
      << "\n";
  out << std::setprecision(17);
  for (const EpochRecord& r : records) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.test_loss << ','
        << r.test_acc;
    if (include_wall) out << ',' << std::setprecision(6) << r.wall_s << std::setprecision(17);
    out << "\n";
  }
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics to " + path.string());
  write_csv(out, true);
}

std::string MetricsLog::to_csv(bool include_wall) const {
  std::ostringstream out;
  write_csv(out, include_wall);
  return out.str();
}

double MetricsLog::best_test_acc() const {
  double best = 0.0;
  for (const EpochRecord& r : records) best = std::max(best, r.test_acc);
  return best;
}

TimeGrid make_grid(const TrainConfig& config) {
  if (is_delay_kind(config.kind))
    return make_delay_grid(config.tau_us, config.m_tau, config.t_over_tau);
  return make_time_grid(0.0, config.dt, config.n_steps);
}

ModelParameters initial_parameters(const TrainConfig& config) {
  config.validate();
  const TimeGrid grid = make_grid(config);
  ModelParameters p;
  p.kind = config.kind;
  if (is_delay_kind(config.kind)) {
    p.controls.resize(Oscillator::kControlDim, grid.control_steps());
    p.controls.row(0).setConstant(config.u1_init);
    p.controls.row(1).setConstant(config.u2_init);
  } else {
    p.controls = identity_tanh_controls<double, 2>(grid.n_steps);
  }
  p.omega = Eigen::MatrixXd::Zero(config.classes(), readout_width(config));
  p.bias = Eigen::VectorXd::Zero(config.classes());
  return p;
}

OptimizerState make_optimizer_state(const TrainConfig& config, const ModelParameters& params) {
  const auto hyper = [&](double alpha) {
    return AdamHyper{alpha, config.adam_beta1, config.adam_beta2, config.adam_epsilon};
  };
  return {AdamState<double>::zeros(params.controls.rows(), params.controls.cols(),
                                   hyper(config.alpha_u)),
          AdamState<double>::zeros(params.omega.rows(), params.omega.cols(),
                                   hyper(config.alpha_omega)),
          AdamState<double>::zeros(params.bias.rows(), 1, hyper(config.alpha_b))};
}

void check_parameters(const TrainConfig& config, const ModelParameters& params) {
  const TimeGrid grid = make_grid(config);
  const Eigen::Index steps = is_delay_kind(config.kind) ? grid.control_steps() : grid.n_steps;
  if (params.kind != config.kind)
    throw ShapeError("parameters are for " + to_string(params.kind) + ", config is " +
                     to_string(config.kind));
  if (params.controls.rows() != control_dim(config) || params.controls.cols() != steps)
    throw ShapeError("controls are " + std::to_string(params.controls.rows()) + "x" +
                     std::to_string(params.controls.cols()) + ", expected " +
                     std::to_string(control_dim(config)) + "x" + std::to_string(steps));
  if (params.omega.rows() != config.classes() || params.omega.cols() != readout_width(config) ||
      params.bias.size() != config.classes())
    throw ShapeError("readout is " + std::to_string(params.omega.rows()) + "x" +
                     std::to_string(params.omega.cols()) + ", expected " +
                     std::to_string(config.classes()) + "x" +
                     std::to_string(readout_width(config)));
}

OeoHistory encode_input(const TrainConfig& config, const LabeledDataset& data, Eigen::Index row,
                        const TimeGrid& grid) {
  if (row < 0 || row >= data.size())
    throw ShapeError("row " + std::to_string(row) + " outside dataset of " +
                     std::to_string(data.size()));
  switch (config.encoding) {
    case InputEncoding::Spiral:
      return encode_spiral_input(data.inputs.row(row).transpose().head<2>(), grid);
    case InputEncoding::Image: {
      const int rows = data.image_rows > 0 ? data.image_rows : 28;
      const int cols = data.image_cols > 0 ? data.image_cols : 28;
      return encode_image_input(data.inputs.row(row), grid, rows, cols);
    }
    case InputEncoding::Direct: {
      if (data.input_dim() != grid.m_tau + 1)
        throw ShapeError("direct encoding needs m_tau + 1 = " + std::to_string(grid.m_tau + 1) +
                         " values per row, got " + std::to_string(data.input_dim()));
      OeoHistory h;
      h.samples = Eigen::Matrix2Xd::Zero(2, grid.m_tau + 1);
      h.samples.row(0) = data.inputs.row(row);
      return h;
    }
  }
  throw ConfigError("unknown input encoding");
}

Eigen::VectorXd forward_logits(const TrainConfig& config, const ModelParameters& params,
                               const LabeledDataset& data, Eigen::Index row) {
  const PassContext ctx{config, data, make_grid(config), 1.0, config.gradient_mode};
  if (is_delay_kind(config.kind)) {
    Trajectory<Oscillator> traj;
    return DelayPass(ctx, params).logits(row, traj);
  }
  const ControlSchedule<OdeFlow> controls = params.controls;
  const OdeFlow::State x = data.inputs.row(row).transpose().head<2>();
  const Trajectory<OdeFlow> traj = forward_ode(OdeFlow{}, x, controls, ctx.grid);
  const Eigen::VectorXd end = traj.end_state();
  return readout_endstate(end, EndStateReadout<double>{params.omega, params.bias});
}

Eigen::Matrix2Xd forward_states(const TrainConfig& config, const ModelParameters& params,
                                const LabeledDataset& data, Eigen::Index row) {
  const TimeGrid grid = make_grid(config);
  if (is_delay_kind(config.kind)) {
    const Oscillator model(config.oeo_params());
    const ControlSchedule<Oscillator> controls = params.controls;
    return forward_delay(model, encode_input(config, data, row, grid), controls, grid,
                         config.divergence_bound)
        .states;
  }
  if (row < 0 || row >= data.size()) throw ShapeError("row outside dataset");
  const ControlSchedule<OdeFlow> controls = params.controls;
  const OdeFlow::State x = data.inputs.row(row).transpose().head<2>();
  return forward_ode(OdeFlow{}, x, controls, grid).states;
}

GradientSet batch_gradient(const TrainConfig& config, const ModelParameters& params,
                           const LabeledDataset& data, const std::vector<std::int64_t>& rows,
                           GradientMode mode, int threads) {
  check_parameters(config, params);
  check_dataset(config, data);
  if (rows.empty()) throw ShapeError("batch_gradient: empty batch");
  const PassContext ctx{config, data, make_grid(config), static_cast<double>(rows.size()), mode};
  const auto count = static_cast<std::int64_t>(rows.size());
  const std::int64_t chunks = (count + kChunk - 1) / kChunk;
  std::vector<Partial> partials(static_cast<std::size_t>(chunks));
  const double uniform_loss = std::log(static_cast<double>(config.classes()));

  const bool delay = is_delay_kind(config.kind);
  std::optional<OdePass> ode_pass;
  std::optional<DelayPass> delay_pass;
  if (delay)
    delay_pass.emplace(ctx, params);
  else
    ode_pass.emplace(ctx, params);

  parallel_for(chunks, threads, [&](std::int64_t c) {
    Partial& part = partials[static_cast<std::size_t>(c)];
    part = zero_partial(params);
    DelayPass::Workspace ws;
    const std::int64_t end = std::min(count, (c + 1) * kChunk);
    for (std::int64_t i = c * kChunk; i < end; ++i) {
      const Eigen::Index row = rows[static_cast<std::size_t>(i)];
      if (row < 0 || row >= data.size())
        throw ShapeError("batch_gradient: row " + std::to_string(row) + " outside dataset");
      // Both passes finish before anything is accumulated, so a diverged
      // sample leaves `part` untouched.
      try {
        if (delay)
          delay_pass->run(row, part, ws);
        else
          ode_pass->run(row, part);
      } catch (const DivergenceError&) {
        ++part.diverged;
        part.loss += uniform_loss;
      }
    }
  });

  GradientSet out;
  out.controls = Eigen::MatrixXd::Zero(params.controls.rows(), params.controls.cols());
  out.omega = Eigen::MatrixXd::Zero(params.omega.rows(), params.omega.cols());
  out.bias = Eigen::VectorXd::Zero(params.bias.size());
  for (const Partial& p : partials) {
    out.controls += p.controls;
    out.omega += p.omega;
    out.bias += p.bias;
    out.loss += p.loss;
    out.correct += p.correct;
    out.diverged += p.diverged;
  }
  out.loss /= static_cast<double>(count);
  out.count = count;
  return out;
}

LossReport evaluate(const TrainConfig& config, const ModelParameters& params,
                    const LabeledDataset& data, int threads) {
  check_parameters(config, params);
  check_dataset(config, data);
  const PassContext ctx{config, data, make_grid(config), 1.0, config.gradient_mode};
  const Eigen::Index count = data.size();
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(count, config.classes());
  std::vector<char> failed(static_cast<std::size_t>(count), 0);
  const bool delay = is_delay_kind(config.kind);
  std::optional<DelayPass> delay_pass;
  if (delay) delay_pass.emplace(ctx, params);
  const ControlSchedule<OdeFlow> ode_controls =
      delay ? ControlSchedule<OdeFlow>() : ControlSchedule<OdeFlow>(params.controls);
  const EndStateReadout<double> ode_readout{params.omega, params.bias};
  const std::int64_t chunks = (count + kChunk - 1) / kChunk;

  parallel_for(chunks, threads, [&](std::int64_t c) {
    Trajectory<Oscillator> traj;
    const Eigen::Index end = std::min<Eigen::Index>(count, (c + 1) * kChunk);
    for (Eigen::Index row = c * kChunk; row < end; ++row) {
      try {
        if (delay) {
          logits.row(row) = delay_pass->logits(row, traj).transpose();
        } else {
          const OdeFlow::State x = data.inputs.row(row).transpose().head<2>();
          const Eigen::VectorXd r_end =
              forward_ode(OdeFlow{}, x, ode_controls, ctx.grid).end_state();
          logits.row(row) = readout_endstate(r_end, ode_readout).transpose();
        }
      } catch (const DivergenceError&) {
        failed[static_cast<std::size_t>(row)] = 1;
      }
    }
  });
  return make_loss_report(logits, data.labels, data.targets, failed);
}

void apply_update(const TrainConfig& config, ModelParameters& params, const GradientSet& grads,
                  OptimizerState& state) {
  if (config.optimizer == OptimizerKind::Sgd) {
    sgd_step(params.controls, grads.controls, config.alpha_u);
    sgd_step(params.omega, grads.omega, config.alpha_omega);
    sgd_step(params.bias, grads.bias, config.alpha_b);
    return;
  }
  adam_step(params.controls, grads.controls, state.controls, "controls");
  adam_step(params.omega, grads.omega, state.omega, "omega");
  adam_step(params.bias, grads.bias, state.bias, "bias");
}

TrainResult train(const TrainConfig& config, const LabeledDataset& train_set,
                  const LabeledDataset& test_set, const EpochCallback& on_epoch,
                  std::optional<ModelParameters> start) {
  config.validate();
  check_dataset(config, train_set);
  check_dataset(config, test_set);
  const std::int64_t count = train_set.size();
  if (count < 1) throw ShapeError("train: empty training set");
  if (config.batch_size > count)
    throw ConfigError("batch_size " + std::to_string(config.batch_size) + " exceeds the " +
                      std::to_string(count) + " training samples");
  const std::int64_t batch = config.batch_size == 0 ? count : config.batch_size;

  TrainResult result;
  result.params = start ? std::move(*start) : initial_parameters(config);
  check_parameters(config, result.params);
  result.optimizer = make_optimizer_state(config, result.params);

  SeededRng shuffle_rng = SeededRng(config.seed).child(0x5f);
  std::vector<std::int64_t> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (batch < count) order = shuffle_rng.permutation(count);
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    std::int64_t diverged = 0;
    for (std::int64_t first = 0; first < count; first += batch) {
      const std::int64_t last = std::min(count, first + batch);
      const std::vector<std::int64_t> rows(order.begin() + first, order.begin() + last);
      const GradientSet grads =
          batch_gradient(config, result.params, train_set, rows, config.gradient_mode,
                         config.threads);
      if (!std::isfinite(grads.loss)) {
        if (!config.checkpoint_path.empty())
          save_checkpoint(config.checkpoint_path,
                          make_checkpoint(config, result.params, &result.optimizer, epoch - 1));
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(first / batch) + "; last good parameters saved");
      }
      loss_sum += grads.loss * static_cast<double>(grads.count);
      correct += grads.correct;
      diverged += grads.diverged;
      apply_update(config, result.params, grads, result.optimizer);
    }
    const LossReport test = evaluate(config, result.params, test_set, config.threads);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(count);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(count);
    rec.test_loss = test.loss;
    rec.test_acc = test.accuracy;
    rec.diverged = diverged;
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.diverged_total += diverged;
    result.log.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!config.checkpoint_path.empty())
    save_checkpoint(config.checkpoint_path,
                    make_checkpoint(config, result.params, &result.optimizer, config.epochs));
  if (!config.metrics_path.empty()) result.log.write_csv(config.metrics_path);
  return result;
}

DatasetPair load_datasets(const TrainConfig& config) {
  DatasetPair out;
  if (config.kind == ExperimentKind::OeoMnist) {
    if (config.mnist_dir.empty()) throw ConfigError("oeo_mnist needs mnist_dir");
    const auto& dir = config.mnist_dir;
    out.train = load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    out.test = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    if (config.train_limit > 0 && config.train_limit < out.train.size())
      out.train = out.train.slice(0, config.train_limit);
    if (config.test_limit > 0 && config.test_limit < out.test.size())
      out.test = out.test.slice(0, config.test_limit);
    return out;
  }
  const std::uint64_t seed = config.effective_data_seed();
  out.train = config.train_csv.empty()
                  ? generate_spirals(config.train_per_class, config.spiral_noise,
                                     config.spiral_turns, seed)
                  : read_spiral_csv(config.train_csv);
  out.test = config.test_csv.empty()
                 ? generate_spirals(config.test_per_class, config.spiral_noise,
                                    config.spiral_turns, mix_seed(seed ^ 0x7e57ULL))
                 : read_spiral_csv(config.test_csv);
  return out;
}

}  // namespace optctl
