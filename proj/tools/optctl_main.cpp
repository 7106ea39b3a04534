// optctl: train, evaluate and analyse adjoint-trained controlled dynamical systems.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "optctl/analysis.hpp"
#include "optctl/checkpoint.hpp"
#include "optctl/config.hpp"
#include "optctl/data.hpp"
#include "optctl/errors.hpp"
#include "optctl/gradcheck.hpp"
#include "optctl/trainer.hpp"

namespace {

using namespace optctl;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* opt = cmd->add_option("--config", args.config_path, "Config file (key = value)");
  if (config_required) opt->required();
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--threads", args.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--set", args.overrides, "Config override key=value (repeatable)");
  cmd->add_option("--out", args.out, "Output path");
}

TrainConfig resolve_config(const CommonArgs& args, const std::string& fallback_text = {}) {
  TrainConfig config;
  if (!args.config_path.empty())
    config = TrainConfig::load(args.config_path);
  else if (!fallback_text.empty())
    config = TrainConfig::parse(fallback_text);
  else
    throw ConfigError("--config is required");
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) config.seed = *args.seed;
  if (args.threads) config.threads = *args.threads;
  config.validate();
  return config;
}

/// Writes to `path`, or standard output when empty.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw std::runtime_error("cannot open " + path + " for writing");
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

const LabeledDataset& pick_split(const DatasetPair& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "test") return data.test;
  throw ConfigError("--split must be 'train' or 'test', got '" + split + "'");
}

struct LoadedModel {
  TrainConfig config;
  ModelParameters params;
};

LoadedModel load_model(const CommonArgs& args, const std::string& checkpoint_path) {
  const Checkpoint raw = read_checkpoint(checkpoint_path);
  const TrainConfig config = resolve_config(args, raw.config_text);
  Checkpoint checked = load_checkpoint(checkpoint_path, config);
  return {config, std::move(checked.params)};
}

int run_train(const CommonArgs& args) {
  TrainConfig config = resolve_config(args);
  if (!args.out.empty()) {
    std::filesystem::create_directories(args.out);
    config.metrics_path = std::filesystem::path(args.out) / "metrics.csv";
    config.checkpoint_path = std::filesystem::path(args.out) / "model.ckpt";
  }
  const DatasetPair data = load_datasets(config);
  std::cerr << "training " << to_string(config.kind) << " on " << data.train.size()
            << " samples, testing on " << data.test.size() << "\n";
  const TrainResult result = train(config, data.train, data.test, [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << "  train_loss " << r.train_loss << "  train_acc "
              << r.train_acc << "  test_loss " << r.test_loss << "  test_acc " << r.test_acc
              << "  diverged " << r.diverged << "  " << r.wall_s << " s\n";
  });
  if (config.metrics_path.empty()) result.log.write_csv(std::cout);
  return EXIT_SUCCESS;
}

int run_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& split) {
  const LoadedModel model = load_model(args, checkpoint);
  const DatasetPair data = load_datasets(model.config);
  const LabeledDataset& set = pick_split(data, split);
  const LossReport report = evaluate(model.config, model.params, set, model.config.threads);
  std::cout << "loss " << report.loss << "\naccuracy " << report.accuracy << "\ndiverged "
            << report.diverged << "\n";
  if (!args.out.empty()) {
    Output out(args.out);
    out.stream() << "sample_id,label,predicted";
    for (Eigen::Index l = 0; l < report.outputs.cols(); ++l) out.stream() << ",y" << l;
    out.stream() << "\n" << std::setprecision(17);
    for (Eigen::Index k = 0; k < report.outputs.rows(); ++k) {
      out.stream() << k << ',' << set.labels[static_cast<std::size_t>(k)] << ','
                   << report.predicted[static_cast<std::size_t>(k)];
      for (Eigen::Index l = 0; l < report.outputs.cols(); ++l)
        out.stream() << ',' << report.outputs(k, l);
      out.stream() << "\n";
    }
  }
  return EXIT_SUCCESS;
}

int run_sweep_cmd(const CommonArgs& args, const std::string& param1, const std::string& values1,
                  const std::string& param2, const std::string& values2) {
  SweepSpec spec;
  spec.base = resolve_config(args);
  spec.first = {param1, split_list(values1)};
  if (!param2.empty()) spec.second = SweepAxis{param2, split_list(values2)};
  const std::vector<SweepRow> rows = run_sweep(spec, spec.base.threads);
  for (const SweepRow& r : rows)
    if (!r.error.empty())
      std::cerr << "cell " << r.param1 << ',' << r.param2 << " failed: " << r.error << "\n";
  Output out(args.out);
  write_sweep_csv(out.stream(), rows);
  return EXIT_SUCCESS;
}

int run_gradcheck(const CommonArgs& args, const std::string& kind, std::int64_t steps,
                  std::int64_t samples, double epsilon) {
  TrainConfig config = args.config_path.empty()
                           ? small_instance_config(parse_kind(kind), steps)
                           : resolve_config(args);
  if (args.config_path.empty()) {
    for (const std::string& kv : args.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    config.validate();
  }
  const GradCheckReport report =
      gradient_check(config, samples, epsilon, args.seed.value_or(config.seed));
  Output out(args.out);
  out.stream() << format_report(report);
  return EXIT_SUCCESS;
}

int run_gendata(const std::string& what, std::int64_t per_class, std::uint64_t seed, double noise,
                double turns, const std::string& out_path) {
  if (what != "spirals") throw ConfigError("gendata supports 'spirals', got '" + what + "'");
  const LabeledDataset data = generate_spirals(per_class, noise, turns, seed);
  if (out_path.empty()) throw ConfigError("gendata needs --out");
  write_spiral_csv(data, out_path);
  std::cerr << "wrote " << data.size() << " rows to " << out_path << "\n";
  return EXIT_SUCCESS;
}

int run_correlations(const CommonArgs& args, const std::string& checkpoint, std::int64_t count,
                     const std::string& split) {
  const LoadedModel model = load_model(args, checkpoint);
  const DatasetPair data = load_datasets(model.config);
  const LabeledDataset& set = pick_split(data, split);
  const auto records = correlations(model.config, model.params, set,
                                    std::min<std::int64_t>(count, set.size()), model.config.threads);
  Output out(args.out);
  write_correlations_csv(out.stream(), records);
  const CorrelationSummary s = summarize_correlations(records);
  std::cerr << "own class wins " << s.own_class_wins << ", median matching " << s.median_matching
            << ", median other " << s.median_other << "\n";
  return EXIT_SUCCESS;
}

int run_trajdump(const CommonArgs& args, const std::string& checkpoint, const std::string& ids,
                 const std::string& times, const std::string& split) {
  const LoadedModel model = load_model(args, checkpoint);
  const DatasetPair data = load_datasets(model.config);
  const LabeledDataset& set = pick_split(data, split);
  std::vector<std::int64_t> sample_ids;
  for (const std::string& s : split_list(ids)) {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw ConfigError("bad sample id '" + s + "'");
    sample_ids.push_back(v);
  }
  std::optional<std::vector<double>> time_list;
  if (times != "all") {
    time_list.emplace();
    for (const std::string& s : split_list(times)) time_list->push_back(std::stod(s));
  }
  Output out(args.out);
  trajectory_dump(out.stream(), model.config, model.params, set, sample_ids, time_list);
  return EXIT_SUCCESS;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal-control training of neural ODEs and delay systems"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, sweep_args, grad_args, corr_args, traj_args;

  auto* train_cmd = app.add_subcommand("train", "Train a model; --out names a run directory");
  add_common(train_cmd, train_args, true);

  std::string eval_ckpt, eval_split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; --out writes per-sample outputs");
  add_common(eval_cmd, eval_args, false);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "train or test");

  std::string p1, v1, p2, v2;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one model per grid cell");
  add_common(sweep_cmd, sweep_args, true);
  sweep_cmd->add_option("--param1", p1, "First swept config key")->required();
  sweep_cmd->add_option("--values1", v1, "Comma-separated values")->required();
  sweep_cmd->add_option("--param2", p2, "Second swept config key");
  sweep_cmd->add_option("--values2", v2, "Comma-separated values");

  std::string grad_kind = "ode_spiral";
  std::int64_t grad_steps = 40, grad_samples = 4;
  double grad_eps = 1e-5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare adjoint gradients with finite differences");
  add_common(grad_cmd, grad_args, false);
  grad_cmd->add_option("--kind", grad_kind, "ode_spiral, oeo_spiral or oeo_mnist");
  grad_cmd->add_option("--steps", grad_steps, "Integration steps of the small instance");
  grad_cmd->add_option("--samples", grad_samples, "Batch size")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--epsilon", grad_eps, "Finite-difference step")->check(CLI::PositiveNumber);

  std::string gen_what = "spirals", gen_out;
  std::int64_t gen_per_class = 500;
  std::uint64_t gen_seed = 1;
  double gen_noise = kSpiralNoise, gen_turns = kSpiralTurns;
  auto* gen_cmd = app.add_subcommand("gendata", "Write a synthetic dataset as CSV");
  gen_cmd->add_option("dataset", gen_what, "Dataset name (spirals)");
  gen_cmd->add_option("--per-class", gen_per_class, "Points per class")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen_seed, "Random seed");
  gen_cmd->add_option("--noise", gen_noise, "Gaussian noise standard deviation");
  gen_cmd->add_option("--turns", gen_turns, "Spiral turns");
  gen_cmd->add_option("--out", gen_out, "CSV path")->required();

  std::string corr_ckpt, corr_split = "test";
  std::int64_t corr_count = 500;
  auto* corr_cmd = app.add_subcommand("correlations", "Readout correlation values per instance and class");
  add_common(corr_cmd, corr_args, false);
  corr_cmd->add_option("--checkpoint", corr_ckpt, "Checkpoint file")->required();
  corr_cmd->add_option("--instances", corr_count, "Number of instances")->check(CLI::NonNegativeNumber);
  corr_cmd->add_option("--split", corr_split, "train or test");

  std::string traj_ckpt, traj_ids = "0", traj_times = "all", traj_split = "test";
  auto* traj_cmd = app.add_subcommand("trajdump", "Dump state trajectories");
  add_common(traj_cmd, traj_args, false);
  traj_cmd->add_option("--checkpoint", traj_ckpt, "Checkpoint file")->required();
  traj_cmd->add_option("--samples", traj_ids, "Comma-separated sample ids");
  traj_cmd->add_option("--times", traj_times, "Comma-separated times, 'all', or empty");
  traj_cmd->add_option("--split", traj_split, "train or test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? EXIT_SUCCESS : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args, eval_ckpt, eval_split);
    if (*sweep_cmd) return run_sweep_cmd(sweep_args, p1, v1, p2, v2);
    if (*grad_cmd) return run_gradcheck(grad_args, grad_kind, grad_steps, grad_samples, grad_eps);
    if (*gen_cmd) return run_gendata(gen_what, gen_per_class, gen_seed, gen_noise, gen_turns, gen_out);
    if (*corr_cmd) return run_correlations(corr_args, corr_ckpt, corr_count, corr_split);
    if (*traj_cmd) return run_trajdump(traj_args, traj_ckpt, traj_ids, traj_times, traj_split);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
