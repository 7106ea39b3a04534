#include "optctl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace optctl {

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (values.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

void SweepSpec::validate() const {
  const auto check = [&](const SweepAxis& axis) {
    if (axis.values.empty()) throw ConfigError("sweep axis '" + axis.name + "' has no values");
    for (const auto& v : axis.values) {
      TrainConfig probe = base;
      probe.set(axis.name, v);
    }
  };
  check(first);
  if (second) {
    check(*second);
    if (second->name == first.name) throw ConfigError("sweep axes must name different keys");
  }
  for (std::size_t i = 0; i < cells(); ++i) sweep_cell_config(*this, i).validate();
}

std::size_t SweepSpec::cells() const {
  return first.values.size() * (second ? second->values.size() : 1);
}

TrainConfig sweep_cell_config(const SweepSpec& spec, std::size_t index) {
  const std::size_t inner = spec.second ? spec.second->values.size() : 1;
  if (index >= spec.cells()) throw ConfigError("sweep cell index out of range");
  TrainConfig c = spec.base;
  c.set(spec.first.name, spec.first.values[index / inner]);
  if (spec.second) c.set(spec.second->name, spec.second->values[index % inner]);
  c.metrics_path.clear();
  c.checkpoint_path.clear();
  return c;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, int workers) {
  spec.validate();
  const std::size_t cells = spec.cells();
  const std::size_t inner = spec.second ? spec.second->values.size() : 1;
  std::vector<SweepRow> rows(cells);
  const int cell_threads = workers > 1 ? 1 : spec.base.threads;
  parallel_for(static_cast<std::int64_t>(cells), workers, [&](std::int64_t i) {
    const auto idx = static_cast<std::size_t>(i);
    SweepRow& row = rows[idx];
    row.param1 = spec.first.values[idx / inner];
    if (spec.second) row.param2 = spec.second->values[idx % inner];
    try {
      TrainConfig config = sweep_cell_config(spec, idx);
      config.threads = cell_threads;
      const DatasetPair data = load_datasets(config);
      const TrainResult result = train(config, data.train, data.test);
      const EpochRecord& last = result.log.records.back();
      row.test_acc = last.test_acc;
      row.final_loss = last.train_loss;
      row.diverged_samples = result.diverged_total;
    } catch (const std::exception& e) {
      row.test_acc = std::numeric_limits<double>::quiet_NaN();
      row.final_loss = std::numeric_limits<double>::quiet_NaN();
      row.diverged_samples = -1;
      row.error = e.what();
    }
  });
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "param1,param2,test_acc,final_loss,diverged_samples\n" << std::setprecision(17);
  for (const SweepRow& r : rows)
    out << r.param1 << ',' << r.param2 << ',' << r.test_acc << ',' << r.final_loss << ','
        << r.diverged_samples << "\n";
}

std::vector<CorrelationRecord> correlations(const TrainConfig& config,
                                            const ModelParameters& params,
                                            const LabeledDataset& data,
                                            std::int64_t instance_count, int threads) {
  if (config.kind == ExperimentKind::OdeSpiral)
    throw ConfigError("correlations need a delay experiment, got " + to_string(config.kind));
  check_parameters(config, params);
  if (instance_count < 0 || instance_count > data.size())
    throw ConfigError("correlations: " + std::to_string(instance_count) +
                      " instances requested from " + std::to_string(data.size()));
  const TimeGrid grid = make_grid(config);
  const int classes = config.classes();
  std::vector<CorrelationRecord> records(static_cast<std::size_t>(instance_count * classes));
  parallel_for(instance_count, threads, [&](std::int64_t k) {
    const Eigen::Matrix2Xd states = forward_states(config, params, data, k);
    const Eigen::VectorXd weighted =
        weighted_tail(states.rightCols(grid.m_tau + 1), 1, grid.dt);
    const Eigen::VectorXd z = params.omega * weighted;
    for (int l = 0; l < classes; ++l)
      records[static_cast<std::size_t>(k * classes + l)] = {
          k, l, data.labels[static_cast<std::size_t>(k)], z(l)};
  });
  return records;
}

void write_correlations_csv(std::ostream& out, const std::vector<CorrelationRecord>& records) {
  out << "sample_id,class_l,true_class,z_tilde\n" << std::setprecision(17);
  for (const CorrelationRecord& r : records)
    out << r.sample_id << ',' << r.class_l << ',' << r.true_class << ',' << r.z_tilde << "\n";
}

CorrelationSummary summarize_correlations(const std::vector<CorrelationRecord>& records) {
  std::vector<double> matching, other;
  std::int64_t instances = 0, wins = 0;
  for (std::size_t i = 0; i < records.size();) {
    std::size_t j = i;
    double own = std::numeric_limits<double>::quiet_NaN();
    double best_other = -std::numeric_limits<double>::infinity();
    for (; j < records.size() && records[j].sample_id == records[i].sample_id; ++j) {
      const CorrelationRecord& r = records[j];
      if (r.class_l == r.true_class) {
        own = r.z_tilde;
        matching.push_back(r.z_tilde);
      } else {
        best_other = std::max(best_other, r.z_tilde);
        other.push_back(r.z_tilde);
      }
    }
    ++instances;
    if (own > best_other) ++wins;
    i = j;
  }
  CorrelationSummary s;
  s.own_class_wins = instances > 0 ? static_cast<double>(wins) / static_cast<double>(instances) : 0.0;
  s.median_matching = median(std::move(matching));
  s.median_other = median(std::move(other));
  return s;
}

void trajectory_dump(std::ostream& out, const TrainConfig& config, const ModelParameters& params,
                     const LabeledDataset& data, const std::vector<std::int64_t>& sample_ids,
                     const std::optional<std::vector<double>>& times) {
  check_parameters(config, params);
  for (std::int64_t id : sample_ids)
    if (id < 0 || id >= data.size())
      throw ConfigError("trajdump: unknown sample id " + std::to_string(id) + " (dataset has " +
                        std::to_string(data.size()) + " rows)");
  const TimeGrid grid = make_grid(config);
  std::vector<std::int64_t> indices;
  if (!times) {
    for (std::int64_t i = 0; i <= grid.n_steps; ++i) indices.push_back(i);
  } else {
    for (double t : *times) {
      const double pos = (t - grid.t_start) / grid.dt;
      const auto i = static_cast<std::int64_t>(std::llround(pos));
      if (!std::isfinite(pos) || i < 0 || i > grid.n_steps)
        throw ConfigError("trajdump: time " + std::to_string(t) + " outside [" +
                          std::to_string(grid.t_start) + ", " + std::to_string(grid.t_end()) + "]");
      indices.push_back(i);
    }
  }
  out << "t,sample_id,component,value\n" << std::setprecision(17);
  if (indices.empty()) return;
  for (std::int64_t id : sample_ids) {
    const Eigen::Matrix2Xd states = forward_states(config, params, data, id);
    for (std::int64_t i : indices)
      for (Eigen::Index c = 0; c < states.rows(); ++c)
        out << grid.time(i) << ',' << id << ',' << c << ',' << states(c, i) << "\n";
  }
}

}  // namespace optctl
