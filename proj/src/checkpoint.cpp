#include "optctl/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "optctl/errors.hpp"

namespace optctl {

namespace {

constexpr std::array<char, 8> kMagic = {'O', 'P', 'T', 'C', 'T', 'L', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    std::array<unsigned char, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_matrix(const Eigen::MatrixXd& m) {
    put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put<double>(m.data()[i]);
  }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::array<unsigned char, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }
  std::string get_string(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Eigen::MatrixXd get_matrix(const char* what) {
    const auto rows = get<std::uint64_t>(what);
    const auto cols = get<std::uint64_t>(what);
    if (rows > (1u << 30) || cols > (1u << 30) || rows * cols * 8 > bytes_.size() - pos_)
      throw ParseError(std::string("checkpoint: truncated ") + what, pos_);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get<double>(what);
    return m;
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_) throw ParseError(std::string("checkpoint: truncated ") + what, pos_);
  }
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

void put_adam(Writer& w, const AdamState<double>& s) {
  w.put<std::int64_t>(s.step_count);
  w.put_matrix(s.m);
  w.put_matrix(s.v);
}

AdamState<double> get_adam(Reader& r, const char* what) {
  AdamState<double> s;
  s.step_count = r.get<std::int64_t>(what);
  s.m = r.get_matrix(what);
  s.v = r.get_matrix(what);
  return s;
}

}  // namespace

Checkpoint make_checkpoint(const TrainConfig& config, const ModelParameters& params,
                           const OptimizerState* optimizer, std::int64_t epoch) {
  Checkpoint c;
  c.params = params;
  if (optimizer != nullptr) c.optimizer = *optimizer;
  c.epoch = epoch;
  c.config_text = config.to_text();
  c.model_hash = config.model_hash();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  Writer w;
  w.put_bytes(kMagic.data(), kMagic.size());
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(checkpoint.model_hash);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.params.kind));
  w.put<std::int64_t>(checkpoint.epoch);
  w.put<std::uint64_t>(checkpoint.config_text.size());
  w.put_bytes(checkpoint.config_text.data(), checkpoint.config_text.size());
  w.put_matrix(checkpoint.params.controls);
  w.put_matrix(checkpoint.params.omega);
  w.put_matrix(checkpoint.params.bias);
  w.put<std::uint8_t>(checkpoint.optimizer ? 1 : 0);
  if (checkpoint.optimizer) {
    put_adam(w, checkpoint.optimizer->controls);
    put_adam(w, checkpoint.optimizer->omega);
    put_adam(w, checkpoint.optimizer->bias);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));
  if (r.get_string(kMagic.size(), "magic") != std::string(kMagic.data(), kMagic.size()))
    throw ParseError("checkpoint: bad magic in " + path.string(), 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), 8);
  Checkpoint c;
  c.model_hash = r.get<std::uint64_t>("hash");
  const auto kind = r.get<std::uint32_t>("kind");
  if (kind > static_cast<std::uint32_t>(ExperimentKind::OeoMnist))
    throw ParseError("checkpoint: unknown experiment kind " + std::to_string(kind), r.pos() - 4);
  c.params.kind = static_cast<ExperimentKind>(kind);
  c.epoch = r.get<std::int64_t>("epoch");
  const auto text_len = r.get<std::uint64_t>("config length");
  c.config_text = r.get_string(text_len, "config text");
  c.params.controls = r.get_matrix("controls");
  c.params.omega = r.get_matrix("omega");
  const Eigen::MatrixXd bias = r.get_matrix("bias");
  if (bias.cols() != 1) throw ParseError("checkpoint: bias is not a column", r.pos());
  c.params.bias = bias.col(0);
  if (r.get<std::uint8_t>("optimizer flag") != 0) {
    OptimizerState s;
    s.controls = get_adam(r, "controls moments");
    s.omega = get_adam(r, "omega moments");
    s.bias = get_adam(r, "bias moments");
    c.optimizer = std::move(s);
  }
  if (!r.at_end()) throw ParseError("checkpoint: trailing bytes", r.pos());
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig& config) {
  Checkpoint c = read_checkpoint(path);
  if (c.model_hash != config.model_hash())
    throw ConfigError("checkpoint " + path.string() +
                      " was written for a different model configuration (hash mismatch)");
  check_parameters(config, c.params);
  if (c.optimizer) {
    const AdamHyper controls{config.alpha_u, config.adam_beta1, config.adam_beta2,
                             config.adam_epsilon};
    c.optimizer->controls.hyper = controls;
    c.optimizer->omega.hyper = {config.alpha_omega, config.adam_beta1, config.adam_beta2,
                                config.adam_epsilon};
    c.optimizer->bias.hyper = {config.alpha_b, config.adam_beta1, config.adam_beta2,
                               config.adam_epsilon};
  }
  return c;
}

}  // namespace optctl
