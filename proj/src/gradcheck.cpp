#include "optctl/gradcheck.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace optctl {

namespace {

constexpr double kOscillatorTau = 16.0;
constexpr std::int64_t kOscillatorLayers = 3;

std::vector<std::int64_t> all_rows(const LabeledDataset& data) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(data.size()));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

double batch_loss(const GradCheckInstance& inst, const ModelParameters& params) {
  return evaluate(inst.config, params, inst.data).loss;
}

template <typename Access>
Eigen::MatrixXd central_difference(const GradCheckInstance& inst, Eigen::Index rows,
                                   Eigen::Index cols, double epsilon, Access access) {
  Eigen::MatrixXd grad(rows, cols);
  ModelParameters work = inst.params;
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      double& entry = access(work, i, j);
      const double saved = entry;
      entry = saved + epsilon;
      const double up = batch_loss(inst, work);
      entry = saved - epsilon;
      const double down = batch_loss(inst, work);
      entry = saved;
      grad(i, j) = (up - down) / (2.0 * epsilon);
    }
  }
  return grad;
}

GroupErrors compare(const GradientSet& adjoint, const GradientSet& reference) {
  return {relative_error(adjoint.controls, reference.controls),
          relative_error(adjoint.omega, reference.omega),
          relative_error(adjoint.bias, reference.bias)};
}

/// c0 + c1 sin(2 pi f s + phase) with random coefficients.
struct SmoothCurve {
  double offset, amplitude, frequency, phase;

  static SmoothCurve draw(SeededRng& rng, double offset_lo, double offset_hi, double amp) {
    return {rng.uniform(offset_lo, offset_hi), rng.uniform(-amp, amp), rng.uniform(0.5, 1.5),
            rng.uniform(0.0, 2.0 * std::numbers::pi)};
  }
  double operator()(double s) const {
    return offset + amplitude * std::sin(2.0 * std::numbers::pi * frequency * s + phase);
  }
};

}  // namespace

double relative_error(const Eigen::MatrixXd& adjoint, const Eigen::MatrixXd& reference) {
  if (adjoint.rows() != reference.rows() || adjoint.cols() != reference.cols())
    throw ShapeError("relative_error: shapes differ");
  if (reference.size() == 0) return 0.0;
  const double scale = reference.cwiseAbs().maxCoeff();
  const double diff = (adjoint - reference).cwiseAbs().maxCoeff();
  if (scale == 0.0) return diff;
  return diff / scale;
}

TrainConfig small_instance_config(ExperimentKind kind, std::int64_t steps) {
  if (steps < 8) throw ConfigError("gradient check needs at least 8 steps");
  TrainConfig c = TrainConfig::defaults(kind);
  c.epochs = 1;
  c.batch_size = 0;
  if (kind == ExperimentKind::OdeSpiral) {
    c.n_steps = steps;
    c.dt = 1.0 / static_cast<double>(steps);
  } else {
    c.m_tau = std::max<std::int64_t>(2, steps / (kOscillatorLayers + 1) / 2 * 2);
    c.t_over_tau = kOscillatorLayers;
    c.tau_us = kOscillatorTau;
    c.encoding = kind == ExperimentKind::OeoSpiral ? InputEncoding::Spiral : InputEncoding::Direct;
  }
  c.validate();
  return c;
}

GradCheckInstance random_instance(const TrainConfig& config, std::uint64_t seed,
                                  std::int64_t samples) {
  SeededRng rng(seed);
  GradCheckInstance inst{config, initial_parameters(config), {}};
  ModelParameters& p = inst.params;
  const int classes = config.classes();
  const TimeGrid grid = make_grid(config);
  Eigen::Index width = 2;
  if (config.kind == ExperimentKind::OdeSpiral) {
    for (Eigen::Index j = 0; j < p.controls.cols(); ++j)
      for (Eigen::Index i = 0; i < p.controls.rows(); ++i)
        p.controls(i, j) = i < 4 ? rng.uniform(-1.5, 1.5) : rng.uniform(-0.5, 0.5);
    for (Eigen::Index i = 0; i < p.omega.size(); ++i) p.omega.data()[i] = rng.normal();
  } else {
    for (Eigen::Index j = 0; j < p.controls.cols(); ++j) {
      p.controls(0, j) = rng.uniform(0.5, 1.5);
      p.controls(1, j) = rng.uniform(-1.0, 0.5);
    }
    const double scale = 3.0 / grid.tau();
    for (Eigen::Index i = 0; i < p.omega.size(); ++i) p.omega.data()[i] = scale * rng.normal();
    if (config.encoding == InputEncoding::Direct) width = grid.m_tau + 1;
  }
  for (Eigen::Index l = 0; l < p.bias.size(); ++l) p.bias(l) = rng.normal(0.0, 0.5);

  RowMatrixXd inputs(samples, width);
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.uniform(-1.0, 1.0);
  std::vector<int> labels(static_cast<std::size_t>(samples));
  for (int& label : labels) label = static_cast<int>(rng.index(static_cast<std::uint64_t>(classes)));
  inst.data = make_dataset(std::move(inputs), std::move(labels), classes);
  return inst;
}

GradientSet finite_difference_gradient(const GradCheckInstance& inst, double epsilon) {
  const ModelParameters& p = inst.params;
  GradientSet g;
  g.controls = central_difference(inst, p.controls.rows(), p.controls.cols(), epsilon,
                                  [](ModelParameters& w, Eigen::Index i, Eigen::Index j) -> double& {
                                    return w.controls(i, j);
                                  });
  g.omega = central_difference(inst, p.omega.rows(), p.omega.cols(), epsilon,
                               [](ModelParameters& w, Eigen::Index i, Eigen::Index j) -> double& {
                                 return w.omega(i, j);
                               });
  g.bias = central_difference(inst, p.bias.size(), 1, epsilon,
                              [](ModelParameters& w, Eigen::Index i, Eigen::Index) -> double& {
                                return w.bias(i);
                              });
  g.loss = batch_loss(inst, p);
  g.count = inst.data.size();
  return g;
}

GradCheckReport gradient_check(const GradCheckInstance& inst, double epsilon) {
  const GradientSet reference = finite_difference_gradient(inst, epsilon);
  const auto rows = all_rows(inst.data);
  GradCheckReport report;
  report.kind = inst.config.kind;
  report.parameters = inst.params.controls.size() + inst.params.omega.size() + inst.params.bias.size();
  report.discrete =
      compare(batch_gradient(inst.config, inst.params, inst.data, rows, GradientMode::Discrete),
              reference);
  report.continuous =
      compare(batch_gradient(inst.config, inst.params, inst.data, rows, GradientMode::Continuous),
              reference);
  return report;
}

GradCheckReport gradient_check(const TrainConfig& config, std::int64_t sample_count,
                               double epsilon, std::uint64_t seed) {
  return gradient_check(random_instance(config, seed, sample_count), epsilon);
}

std::string format_report(const GradCheckReport& r) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific;
  out << "kind " << to_string(r.kind) << ", " << r.parameters << " parameters\n";
  out << "mode,controls,omega,bias\n";
  out << "discrete," << r.discrete.controls << ',' << r.discrete.omega << ',' << r.discrete.bias
      << "\n";
  out << "continuous," << r.continuous.controls << ',' << r.continuous.omega << ','
      << r.continuous.bias << "\n";
  return out.str();
}

GradCheckInstance smooth_instance(ExperimentKind kind, std::int64_t steps, std::uint64_t seed,
                                  std::int64_t samples) {
  TrainConfig config = small_instance_config(kind, steps);
  if (kind != ExperimentKind::OdeSpiral) config.encoding = InputEncoding::Direct;
  config.validate();
  const TimeGrid grid = make_grid(config);
  GradCheckInstance inst{config, initial_parameters(config), {}};
  ModelParameters& p = inst.params;
  SeededRng rng(seed);
  const int classes = config.classes();

  if (kind == ExperimentKind::OdeSpiral) {
    std::vector<SmoothCurve> curves;
    for (int i = 0; i < OdeFlow::kControlDim; ++i)
      curves.push_back(i < 4 ? SmoothCurve::draw(rng, -1.0, 1.0, 1.0)
                             : SmoothCurve::draw(rng, -0.3, 0.3, 0.5));
    const double horizon = grid.t_end();
    for (Eigen::Index j = 0; j < p.controls.cols(); ++j)
      for (int i = 0; i < OdeFlow::kControlDim; ++i)
        p.controls(i, j) = curves[static_cast<std::size_t>(i)](grid.time(j) / horizon);
    for (Eigen::Index i = 0; i < p.omega.size(); ++i) p.omega.data()[i] = rng.normal();
    for (Eigen::Index l = 0; l < p.bias.size(); ++l) p.bias(l) = rng.normal(0.0, 0.5);
    RowMatrixXd inputs(samples, 2);
    for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.uniform(-1.0, 1.0);
    std::vector<int> labels(static_cast<std::size_t>(samples));
    for (int& label : labels) label = static_cast<int>(rng.index(2));
    inst.data = make_dataset(std::move(inputs), std::move(labels), classes);
    return inst;
  }

  const double tau = grid.tau();
  const double horizon = grid.t_end();
  const SmoothCurve gain = SmoothCurve::draw(rng, 0.7, 1.3, 0.3);
  const SmoothCurve offset = SmoothCurve::draw(rng, -0.9, -0.5, 0.3);
  for (Eigen::Index j = 0; j < p.controls.cols(); ++j) {
    const double s = grid.time(grid.origin() + j) / horizon;
    p.controls(0, j) = gain(s);
    p.controls(1, j) = offset(s);
  }
  const Eigen::Index tail_samples = grid.m_tau + 1;
  for (int l = 0; l < classes; ++l) {
    const SmoothCurve weight = SmoothCurve::draw(rng, -1.0, 1.0, 1.0);
    for (Eigen::Index q = 0; q < tail_samples; ++q)
      p.omega(l, q) = 3.0 / tau * weight(static_cast<double>(q) / static_cast<double>(grid.m_tau));
    p.bias(l) = rng.normal(0.0, 0.5);
  }
  RowMatrixXd inputs(samples, tail_samples);
  std::vector<int> labels(static_cast<std::size_t>(samples));
  for (Eigen::Index k = 0; k < samples; ++k) {
    const SmoothCurve history = SmoothCurve::draw(rng, 0.2, 0.8, 0.4);
    for (Eigen::Index q = 0; q < tail_samples; ++q)
      inputs(k, q) = history(static_cast<double>(q) / static_cast<double>(grid.m_tau));
    labels[static_cast<std::size_t>(k)] = static_cast<int>(rng.index(static_cast<std::uint64_t>(classes)));
  }
  inst.data = make_dataset(std::move(inputs), std::move(labels), classes);
  return inst;
}

ConsistencyResult continuous_consistency(ExperimentKind kind, std::uint64_t seed,
                                         std::int64_t coarse_steps) {
  const auto control_error = [&](std::int64_t steps) {
    const GradCheckInstance inst = smooth_instance(kind, steps, seed);
    const auto rows = all_rows(inst.data);
    const GradientSet cont =
        batch_gradient(inst.config, inst.params, inst.data, rows, GradientMode::Continuous);
    const GradientSet disc =
        batch_gradient(inst.config, inst.params, inst.data, rows, GradientMode::Discrete);
    return relative_error(cont.controls, disc.controls);
  };
  return {control_error(coarse_steps), control_error(2 * coarse_steps)};
}

}  // namespace optctl
