#include "optctl/data.hpp"

#include <charconv>
#include <cmath>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace optctl {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setfill('0') << std::setw(8) << v;
  return os.str();
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(where + ": not a number: '" + text + "'");
  return v;
}

}  // namespace

void LabeledDataset::validate() const {
  if (static_cast<Eigen::Index>(labels.size()) != inputs.rows() || targets.rows() != inputs.rows())
    throw ShapeError("dataset: inputs, labels and targets have different sample counts");
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int c = labels[k];
    if (c < 0 || c >= targets.cols()) throw ShapeError("dataset: label out of range");
    const auto row = targets.row(static_cast<Eigen::Index>(k));
    if (row.sum() != 1.0 || row(c) != 1.0) throw ShapeError("dataset: target row is not one-hot");
  }
}

LabeledDataset LabeledDataset::slice(Eigen::Index first, Eigen::Index count) const {
  if (first < 0 || count < 0 || first + count > size())
    throw ShapeError("dataset slice out of range");
  LabeledDataset out;
  out.inputs = inputs.middleRows(first, count);
  out.labels.assign(labels.begin() + first, labels.begin() + first + count);
  out.targets = targets.middleRows(first, count);
  out.image_rows = image_rows;
  out.image_cols = image_cols;
  return out;
}

Eigen::VectorXd one_hot(int label, int n_classes) {
  if (n_classes < 1 || label < 0 || label >= n_classes)
    throw ShapeError("one_hot: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(n_classes) + ")");
  Eigen::VectorXd t = Eigen::VectorXd::Zero(n_classes);
  t(label) = 1.0;
  return t;
}

LabeledDataset make_dataset(RowMatrixXd inputs, std::vector<int> labels, int n_classes) {
  LabeledDataset out;
  out.inputs = std::move(inputs);
  out.labels = std::move(labels);
  out.targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out.labels.size()), n_classes);
  for (std::size_t k = 0; k < out.labels.size(); ++k)
    out.targets.row(static_cast<Eigen::Index>(k)) = one_hot(out.labels[k], n_classes).transpose();
  out.validate();
  return out;
}

Eigen::Vector2d spiral_point(double theta, int cls, double turns) {
  const double span = turns * 2.0 * std::numbers::pi;
  const double radius = 0.1 + 0.8 * theta / span;
  const double angle = theta + cls * std::numbers::pi;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

LabeledDataset generate_spirals(std::int64_t count_per_class, double noise_sd, double turns,
                                std::uint64_t seed) {
  if (count_per_class < 1) throw ConfigError("spirals: count_per_class must be >= 1");
  if (!(noise_sd >= 0.0)) throw ConfigError("spirals: noise_sd must be >= 0");
  if (!(turns > 0.0)) throw ConfigError("spirals: turns must be positive");
  SeededRng rng(seed);
  const double span = turns * 2.0 * std::numbers::pi;
  RowMatrixXd inputs(2 * count_per_class, 2);
  std::vector<int> labels(static_cast<std::size_t>(2 * count_per_class));
  for (std::int64_t k = 0; k < 2 * count_per_class; ++k) {
    const int cls = static_cast<int>(k % 2);
    const double theta = rng.uniform(0.0, span);
    Eigen::Vector2d x = spiral_point(theta, cls, turns);
    x(0) += rng.normal(0.0, noise_sd);
    x(1) += rng.normal(0.0, noise_sd);
    inputs.row(k) = x.transpose();
    labels[static_cast<std::size_t>(k)] = cls;
  }
  return make_dataset(std::move(inputs), std::move(labels), 2);
}

void write_spiral_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  if (data.input_dim() != 2) throw ShapeError("spiral csv: inputs must be 2-D");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x1,x2,label\n";
  char buf[64];
  for (Eigen::Index k = 0; k < data.size(); ++k) {
    for (int c = 0; c < 2; ++c) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, data.inputs(k, c));
      out.write(buf, end - buf);
      out << ',';
    }
    out << data.labels[static_cast<std::size_t>(k)] << '\n';
  }
}

LabeledDataset read_spiral_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "x1,x2,label")
    throw ConfigError(path.string() + ": expected header 'x1,x2,label'");
  std::vector<double> values;
  std::vector<int> labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string a, b, c;
    if (!std::getline(fields, a, ',') || !std::getline(fields, b, ',') || !std::getline(fields, c))
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    const std::string where = path.string() + ":" + std::to_string(line_no);
    values.push_back(parse_double(a, where));
    values.push_back(parse_double(b, where));
    const double label = parse_double(c, where);
    if (label != 0.0 && label != 1.0) throw ConfigError(where + ": label must be 0 or 1");
    labels.push_back(static_cast<int>(label));
  }
  RowMatrixXd inputs =
      Eigen::Map<RowMatrixXd>(values.data(), static_cast<Eigen::Index>(labels.size()), 2);
  return make_dataset(std::move(inputs), std::move(labels), 2);
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw ParseError(path.string() + ": truncated IDX magic", bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0)
    throw ParseError(path.string() + ": bad IDX magic, leading bytes must be zero", 0);
  if (bytes[2] != 0x08)
    throw ParseError(path.string() + ": unsupported IDX element type (only unsigned byte)", 2);
  const std::size_t rank = bytes[3];
  if (rank == 0) throw ParseError(path.string() + ": IDX rank must be >= 1", 3);
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header)
    throw ParseError(path.string() + ": truncated IDX dimensions", bytes.size());
  IdxArray out;
  std::uint64_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t o = 4 + 4 * d;
    const std::uint32_t dim = (std::uint32_t(bytes[o]) << 24) | (std::uint32_t(bytes[o + 1]) << 16) |
                              (std::uint32_t(bytes[o + 2]) << 8) | std::uint32_t(bytes[o + 3]);
    out.dims.push_back(dim);
    count *= dim;
  }
  if (bytes.size() < header + count)
    throw ParseError(path.string() + ": truncated IDX payload, expected " +
                         std::to_string(count) + " bytes",
                     bytes.size());
  if (bytes.size() > header + count)
    throw ParseError(path.string() + ": trailing bytes after IDX payload", header + count);
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::uint8_t head[4] = {0, 0, 0x08, static_cast<std::uint8_t>(array.dims.size())};
  out.write(reinterpret_cast<const char*>(head), 4);
  for (std::uint32_t d : array.dims) {
    const std::uint8_t be[4] = {static_cast<std::uint8_t>(d >> 24), static_cast<std::uint8_t>(d >> 16),
                                static_cast<std::uint8_t>(d >> 8), static_cast<std::uint8_t>(d)};
    out.write(reinterpret_cast<const char*>(be), 4);
  }
  out.write(reinterpret_cast<const char*>(array.data.data()),
            static_cast<std::streamsize>(array.data.size()));
}

LabeledDataset load_mnist_idx(const std::filesystem::path& image_path,
                              const std::filesystem::path& label_path) {
  const IdxArray images = read_idx(image_path);
  const IdxArray labels = read_idx(label_path);
  const std::uint32_t image_magic = 0x0800u | static_cast<std::uint32_t>(images.dims.size());
  const std::uint32_t label_magic = 0x0800u | static_cast<std::uint32_t>(labels.dims.size());
  if (image_magic != kIdxImageMagic)
    throw ParseError(image_path.string() + ": expected image magic " + hex(kIdxImageMagic) +
                         ", found " + hex(image_magic),
                     0);
  if (label_magic != kIdxLabelMagic)
    throw ParseError(label_path.string() + ": expected label magic " + hex(kIdxLabelMagic) +
                         ", found " + hex(label_magic),
                     0);
  if (images.dims[0] != labels.dims[0])
    throw ParseError("MNIST: " + std::to_string(images.dims[0]) + " images but " +
                         std::to_string(labels.dims[0]) + " labels",
                     4);
  const Eigen::Index count = images.dims[0];
  const int rows = static_cast<int>(images.dims[1]);
  const int cols = static_cast<int>(images.dims[2]);
  RowMatrixXd inputs(count, static_cast<Eigen::Index>(rows) * cols);
  for (Eigen::Index i = 0; i < inputs.size(); ++i)
    inputs.data()[i] = static_cast<double>(images.data[static_cast<std::size_t>(i)]) / 255.0;
  std::vector<int> y(static_cast<std::size_t>(count));
  for (std::size_t k = 0; k < y.size(); ++k) {
    y[k] = labels.data[k];
    if (y[k] > 9) throw ParseError(label_path.string() + ": label above 9", 8 + k);
  }
  LabeledDataset out = make_dataset(std::move(inputs), std::move(y), 10);
  out.image_rows = rows;
  out.image_cols = cols;
  return out;
}

void save_mnist_idx(const LabeledDataset& data, const std::filesystem::path& image_path,
                    const std::filesystem::path& label_path) {
  if (data.image_rows <= 0 || data.image_cols <= 0 ||
      data.input_dim() != static_cast<Eigen::Index>(data.image_rows) * data.image_cols)
    throw ShapeError("save_mnist_idx: dataset does not carry image dimensions");
  IdxArray images{{static_cast<std::uint32_t>(data.size()), static_cast<std::uint32_t>(data.image_rows),
                   static_cast<std::uint32_t>(data.image_cols)},
                  {}};
  images.data.resize(static_cast<std::size_t>(data.inputs.size()));
  for (Eigen::Index i = 0; i < data.inputs.size(); ++i)
    images.data[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(std::clamp(data.inputs.data()[i], 0.0, 1.0) * 255.0));
  IdxArray labels{{static_cast<std::uint32_t>(data.size())}, {}};
  for (int c : data.labels) labels.data.push_back(static_cast<std::uint8_t>(c));
  write_idx(image_path, images);
  write_idx(label_path, labels);
}

OeoHistory encode_spiral_input(const Eigen::Vector2d& x, const TimeGrid& grid) {
  if (!grid.is_delay()) throw ConfigError("encode_spiral_input: grid is not delay-aligned");
  if (grid.m_tau % 2 != 0)
    throw ConfigError("encode_spiral_input: m_tau must be even, got " + std::to_string(grid.m_tau));
  const Eigen::Index m = grid.m_tau;
  OeoHistory h;
  h.samples = Eigen::Matrix2Xd::Zero(2, m + 1);
  h.samples.row(0).head(m / 2).setConstant(x(0));
  h.samples.row(0).tail(m + 1 - m / 2).setConstant(x(1));
  return h;
}

Eigen::VectorXd enlarge_image(const Eigen::Ref<const Eigen::RowVectorXd>& pixels, int rows,
                              int cols) {
  if (rows < 1 || cols < 1 || pixels.size() != static_cast<Eigen::Index>(rows) * cols)
    throw ShapeError("enlarge_image: expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + " pixels, got " + std::to_string(pixels.size()));
  const int big_cols = cols * kImageScale;
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows) * kImageScale * big_cols);
  for (int r = 0; r < rows * kImageScale; ++r)
    for (int c = 0; c < big_cols; ++c)
      out(static_cast<Eigen::Index>(r) * big_cols + c) =
          pixels(static_cast<Eigen::Index>(r / kImageScale) * cols + c / kImageScale);
  return out;
}

OeoHistory encode_image_input(const Eigen::Ref<const Eigen::RowVectorXd>& pixels,
                              const TimeGrid& grid, int rows, int cols) {
  if (!grid.is_delay()) throw ConfigError("encode_image_input: grid is not delay-aligned");
  const Eigen::VectorXd big = enlarge_image(pixels, rows, cols);
  const Eigen::Index m = big.size();
  if (grid.m_tau < m)
    throw ConfigError("encode_image_input: m_tau = " + std::to_string(grid.m_tau) +
                      " is shorter than one image (" + std::to_string(m) + " samples)");
  OeoHistory h;
  h.samples = Eigen::Matrix2Xd::Zero(2, grid.m_tau + 1);
  for (Eigen::Index j = 0; j <= grid.m_tau; ++j) h.samples(0, j) = big(j % m);
  return h;
}

}  // namespace optctl
