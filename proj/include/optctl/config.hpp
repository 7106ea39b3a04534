#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "optctl/ode.hpp"
#include "optctl/oeo.hpp"
#include "optctl/optimizer.hpp"

namespace optctl {

enum class ExperimentKind { OdeSpiral, OeoSpiral, OeoMnist };
enum class OptimizerKind { Adam, Sgd };
/// How a dataset row becomes an initial condition for the delay system.
/// `Direct` uses the row itself as the xi history (m_tau + 1 values).
enum class InputEncoding { Spiral, Image, Direct };

std::string to_string(ExperimentKind kind);
std::string to_string(GradientMode mode);
std::string to_string(InputEncoding encoding);
ExperimentKind parse_kind(const std::string& text);
GradientMode parse_gradient_mode(const std::string& text);

/// Everything needed to reproduce a training run. Loaded from flat
/// `key = value` text; see configs/ for documented examples.
struct TrainConfig {
  ExperimentKind kind = ExperimentKind::OdeSpiral;
  std::uint64_t seed = 1;
  /// Seed for synthetic data; 0 means "same as seed".
  std::uint64_t data_seed = 0;
  int threads = 1;
  std::int64_t epochs = 300;
  /// 0 means full batch.
  std::int64_t batch_size = 0;
  GradientMode gradient_mode = GradientMode::Continuous;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double alpha_u = 1e-2;
  double alpha_omega = 1e-2;
  double alpha_b = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  // tanh flow
  double dt = 0.01;
  std::int64_t n_steps = 200;

  // optoelectronic oscillator (microseconds)
  double beta = 3.0;
  double tau_us = 230.0;
  double tau_h_us = 1590.0;
  double tau_l_us = 15.9;
  std::int64_t m_tau = 3286;
  std::int64_t t_over_tau = 5;
  double u1_init = 1.0;
  double u2_init = -0.7853981633974483;
  double divergence_bound = 1e6;
  InputEncoding encoding = InputEncoding::Spiral;

  // data
  std::int64_t train_per_class = 500;
  std::int64_t test_per_class = 500;
  double spiral_noise = 0.025;
  double spiral_turns = 1.0;
  std::filesystem::path train_csv;
  std::filesystem::path test_csv;
  std::filesystem::path mnist_dir;
  std::int64_t train_limit = 0;
  std::int64_t test_limit = 0;

  // outputs
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;

  /// Defaults for an experiment kind (the values used by the shipped configs).
  static TrainConfig defaults(ExperimentKind kind);
  /// Parses `key = value` lines; unknown keys and malformed values throw ConfigError.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);

  /// Applies one `key`/`value` override (same validation as parse).
  void set(const std::string& key, const std::string& value);
  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
  /// Canonical `key = value` text of every field, in a fixed order.
  std::string to_text() const;
  /// FNV-1a hash of the fields that determine parameter shapes and dynamics.
  std::uint64_t model_hash() const;

  OeoParams oeo_params() const { return {tau_h_us, tau_l_us, tau_us, beta}; }
  std::uint64_t effective_data_seed() const { return data_seed != 0 ? data_seed : seed; }
  int classes() const { return kind == ExperimentKind::OeoMnist ? 10 : 2; }
};

/// FNV-1a, 64 bit.
std::uint64_t fnv1a(const std::string& bytes);

/// Parses flat `key = value` text ('#' starts a comment); duplicate keys throw.
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace optctl
