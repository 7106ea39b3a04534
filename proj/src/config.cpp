#include "optctl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace optctl {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("config: '" + key + "' expects a finite number, got '" + v + "'");
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define OPTCTL_DOUBLE(name)                                                               \
  Field {                                                                                 \
    #name, [](TrainConfig& c, const std::string& v) { c.name = to_double(#name, v); },    \
        [](const TrainConfig& c) { return fmt(c.name); }                                  \
  }
#define OPTCTL_INT(name)                                                                  \
  Field {                                                                                 \
    #name, [](TrainConfig& c, const std::string& v) { c.name = to_int(#name, v); },       \
        [](const TrainConfig& c) { return std::to_string(c.name); }                       \
  }
#define OPTCTL_PATH(name)                                                                 \
  Field {                                                                                 \
    #name, [](TrainConfig& c, const std::string& v) { c.name = v; },                      \
        [](const TrainConfig& c) { return c.name.string(); }                              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"kind", [](TrainConfig& c, const std::string& v) { c.kind = parse_kind(v); },
            [](const TrainConfig& c) { return to_string(c.kind); }},
      Field{"seed", [](TrainConfig& c, const std::string& v) { c.seed = to_uint("seed", v); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      Field{"data_seed",
            [](TrainConfig& c, const std::string& v) { c.data_seed = to_uint("data_seed", v); },
            [](const TrainConfig& c) { return std::to_string(c.data_seed); }},
      Field{"threads",
            [](TrainConfig& c, const std::string& v) {
              c.threads = static_cast<int>(to_int("threads", v));
            },
            [](const TrainConfig& c) { return std::to_string(c.threads); }},
      OPTCTL_INT(epochs),
      OPTCTL_INT(batch_size),
      Field{"gradient_mode",
            [](TrainConfig& c, const std::string& v) { c.gradient_mode = parse_gradient_mode(v); },
            [](const TrainConfig& c) { return to_string(c.gradient_mode); }},
      Field{"optimizer",
            [](TrainConfig& c, const std::string& v) {
              if (v == "adam")
                c.optimizer = OptimizerKind::Adam;
              else if (v == "sgd")
                c.optimizer = OptimizerKind::Sgd;
              else
                throw ConfigError("config: optimizer must be 'adam' or 'sgd', got '" + v + "'");
            },
            [](const TrainConfig& c) {
              return std::string(c.optimizer == OptimizerKind::Adam ? "adam" : "sgd");
            }},
      OPTCTL_DOUBLE(alpha_u),
      OPTCTL_DOUBLE(alpha_omega),
      OPTCTL_DOUBLE(alpha_b),
      OPTCTL_DOUBLE(adam_beta1),
      OPTCTL_DOUBLE(adam_beta2),
      OPTCTL_DOUBLE(adam_epsilon),
      OPTCTL_DOUBLE(dt),
      OPTCTL_INT(n_steps),
      OPTCTL_DOUBLE(beta),
      OPTCTL_DOUBLE(tau_us),
      OPTCTL_DOUBLE(tau_h_us),
      OPTCTL_DOUBLE(tau_l_us),
      OPTCTL_INT(m_tau),
      OPTCTL_INT(t_over_tau),
      OPTCTL_DOUBLE(u1_init),
      OPTCTL_DOUBLE(u2_init),
      OPTCTL_DOUBLE(divergence_bound),
      Field{"encoding",
            [](TrainConfig& c, const std::string& v) {
              if (v == "spiral")
                c.encoding = InputEncoding::Spiral;
              else if (v == "image")
                c.encoding = InputEncoding::Image;
              else if (v == "direct")
                c.encoding = InputEncoding::Direct;
              else
                throw ConfigError("config: encoding must be spiral, image or direct, got '" + v +
                                  "'");
            },
            [](const TrainConfig& c) { return to_string(c.encoding); }},
      OPTCTL_INT(train_per_class),
      OPTCTL_INT(test_per_class),
      OPTCTL_DOUBLE(spiral_noise),
      OPTCTL_DOUBLE(spiral_turns),
      OPTCTL_PATH(train_csv),
      OPTCTL_PATH(test_csv),
      OPTCTL_PATH(mnist_dir),
      OPTCTL_INT(train_limit),
      OPTCTL_INT(test_limit),
      OPTCTL_PATH(metrics_path),
      OPTCTL_PATH(checkpoint_path),
  };
  return table;
}

#undef OPTCTL_DOUBLE
#undef OPTCTL_INT
#undef OPTCTL_PATH

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::OdeSpiral: return "ode_spiral";
    case ExperimentKind::OeoSpiral: return "oeo_spiral";
    case ExperimentKind::OeoMnist: return "oeo_mnist";
  }
  return "?";
}

std::string to_string(GradientMode mode) {
  return mode == GradientMode::Continuous ? "continuous" : "discrete";
}

std::string to_string(InputEncoding encoding) {
  switch (encoding) {
    case InputEncoding::Spiral: return "spiral";
    case InputEncoding::Image: return "image";
    case InputEncoding::Direct: return "direct";
  }
  return "?";
}

ExperimentKind parse_kind(const std::string& text) {
  if (text == "ode_spiral") return ExperimentKind::OdeSpiral;
  if (text == "oeo_spiral") return ExperimentKind::OeoSpiral;
  if (text == "oeo_mnist") return ExperimentKind::OeoMnist;
  throw ConfigError("unknown experiment kind '" + text +
                    "' (expected ode_spiral, oeo_spiral or oeo_mnist)");
}

GradientMode parse_gradient_mode(const std::string& text) {
  if (text == "continuous") return GradientMode::Continuous;
  if (text == "discrete") return GradientMode::Discrete;
  throw ConfigError("gradient_mode must be 'continuous' or 'discrete', got '" + text + "'");
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
  }
  return out;
}

TrainConfig TrainConfig::defaults(ExperimentKind kind) {
  TrainConfig c;
  c.kind = kind;
  switch (kind) {
    case ExperimentKind::OdeSpiral:
      c.epochs = 300;
      c.alpha_u = c.alpha_omega = c.alpha_b = 0.1;
      break;
    case ExperimentKind::OeoSpiral:
      c.epochs = 100;
      c.encoding = InputEncoding::Spiral;
      break;
    case ExperimentKind::OeoMnist:
      c.epochs = 50;
      c.batch_size = 100;
      c.tau_us = 1610.0;
      c.m_tau = 23000;
      c.t_over_tau = 3;
      c.encoding = InputEncoding::Image;
      c.alpha_u = c.alpha_omega = c.alpha_b = 1e-3;
      c.train_limit = 10000;
      c.test_limit = 2000;
      break;
  }
  return c;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  const auto kv = parse_key_values(text);
  const auto kind_it = kv.find("kind");
  TrainConfig c = defaults(kind_it != kv.end() ? parse_kind(kind_it->second)
                                               : ExperimentKind::OdeSpiral);
  for (const auto& [key, value] : kv)
    if (key != "kind") c.set(key, value);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (batch_size < 0) throw ConfigError("config: batch_size must be >= 0 (0 = full batch)");
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (alpha_u < 0 || alpha_omega < 0 || alpha_b < 0)
    throw ConfigError("config: learning rates must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) ||
      !(adam_epsilon > 0))
    throw ConfigError("config: Adam needs 0 <= beta1, beta2 < 1 and epsilon > 0");
  if (train_limit < 0 || test_limit < 0) throw ConfigError("config: limits must be >= 0");
  if (kind == ExperimentKind::OdeSpiral) {
    if (!(dt > 0)) throw ConfigError("config: dt must be positive");
    if (n_steps < 1) throw ConfigError("config: n_steps must be >= 1");
  } else {
    oeo_params().validate();
    if (m_tau < 2) throw ConfigError("config: m_tau must be >= 2");
    if (t_over_tau < 1) throw ConfigError("config: t_over_tau must be >= 1");
    if (!(divergence_bound > 0)) throw ConfigError("config: divergence_bound must be positive");
    if (encoding == InputEncoding::Spiral && m_tau % 2 != 0)
      throw ConfigError("config: spiral encoding needs an even m_tau, got " + std::to_string(m_tau));
  }
  if (kind != ExperimentKind::OeoMnist && (train_per_class < 1 || test_per_class < 1))
    throw ConfigError("config: spiral datasets need at least one point per class");
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t TrainConfig::model_hash() const {
  std::string key = "kind=" + to_string(kind) + ";";
  if (kind == ExperimentKind::OdeSpiral) {
    key += "dt=" + fmt(dt) + ";n_steps=" + std::to_string(n_steps) + ";";
  } else {
    key += "beta=" + fmt(beta) + ";tau=" + fmt(tau_us) + ";tau_h=" + fmt(tau_h_us) +
           ";tau_l=" + fmt(tau_l_us) + ";m_tau=" + std::to_string(m_tau) +
           ";layers=" + std::to_string(t_over_tau) + ";encoding=" + to_string(encoding) + ";";
  }
  return fnv1a(key);
}

}  // namespace optctl
