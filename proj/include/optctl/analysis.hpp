#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "optctl/config.hpp"
#include "optctl/data.hpp"
#include "optctl/trainer.hpp"

namespace optctl {

struct SweepAxis {
  std::string name;
  std::vector<std::string> values;
};

/// One or two config keys swept over value lists; every other field comes
/// from `base`.
struct SweepSpec {
  SweepAxis first;
  std::optional<SweepAxis> second;
  TrainConfig base;

  /// Throws ConfigError for unknown keys, empty value lists or bad values.
  void validate() const;
  std::size_t cells() const;
};

struct SweepRow {
  std::string param1;
  std::string param2;
  double test_acc = 0.0;
  double final_loss = 0.0;
  std::int64_t diverged_samples = 0;
  std::string error;  // empty when the cell trained
};

/// Config for cell `index` (row-major over first x second).
TrainConfig sweep_cell_config(const SweepSpec& spec, std::size_t index);

/// Trains every cell on its own RNG seeded from the base seed; cells run on up
/// to `workers` threads (each cell itself single-threaded when workers > 1).
/// Rows come back in cell order. A failing cell is reported, not rethrown.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, int workers = 1);

/// `param1,param2,test_acc,final_loss,diverged_samples`.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

/// Readout correlation of one instance with one class: the weighted tail
/// integral without the bias.
struct CorrelationRecord {
  std::int64_t sample_id = 0;
  int class_l = 0;
  int true_class = 0;
  double z_tilde = 0.0;
};

/// One record per (instance, class) for the first `instance_count` rows.
std::vector<CorrelationRecord> correlations(const TrainConfig& config,
                                            const ModelParameters& params,
                                            const LabeledDataset& data,
                                            std::int64_t instance_count, int threads = 1);

/// `sample_id,class_l,true_class,z_tilde`.
void write_correlations_csv(std::ostream& out, const std::vector<CorrelationRecord>& records);

/// Correlation summary: fraction of instances whose own-class value beats
/// every other class, and the medians over matching / non-matching pairs.
struct CorrelationSummary {
  double own_class_wins = 0.0;
  double median_matching = 0.0;
  double median_other = 0.0;
};

CorrelationSummary summarize_correlations(const std::vector<CorrelationRecord>& records);

/// Writes `t,sample_id,component,value` rows. `times == nullopt` dumps every
/// grid sample; otherwise each time is mapped to its nearest grid sample and
/// must lie on the simulated range. An empty list yields only the header.
void trajectory_dump(std::ostream& out, const TrainConfig& config, const ModelParameters& params,
                     const LabeledDataset& data, const std::vector<std::int64_t>& sample_ids,
                     const std::optional<std::vector<double>>& times);

}  // namespace optctl
