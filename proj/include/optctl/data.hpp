#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "optctl/delay.hpp"
#include "optctl/numerics.hpp"
#include "optctl/oeo.hpp"

namespace optctl {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Inputs (one row per sample), class indices and one-hot targets.
struct LabeledDataset {
  RowMatrixXd inputs;        // K x M
  std::vector<int> labels;   // K
  Eigen::MatrixXd targets;   // K x L
  int image_rows = 0;        // nonzero for image data
  int image_cols = 0;

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index input_dim() const { return inputs.cols(); }
  int classes() const { return static_cast<int>(targets.cols()); }

  /// Throws ShapeError when rows, labels and targets disagree.
  void validate() const;
  /// Rows [first, first + count).
  LabeledDataset slice(Eigen::Index first, Eigen::Index count) const;
};

Eigen::VectorXd one_hot(int label, int n_classes);

LabeledDataset make_dataset(RowMatrixXd inputs, std::vector<int> labels, int n_classes);

// ---------------------------------------------------------------------------
// Spirals

inline constexpr double kSpiralTurns = 1.0;
inline constexpr double kSpiralNoise = 0.025;

/// Point on arm `cls` at angle theta: radius 0.1 + 0.8 theta / (2 pi turns),
/// rotated by cls * pi.
Eigen::Vector2d spiral_point(double theta, int cls, double turns = kSpiralTurns);

/// Two interleaved spiral arms, `count_per_class` points each, alternating
/// class 0 / class 1 rows.
LabeledDataset generate_spirals(std::int64_t count_per_class, double noise_sd = kSpiralNoise,
                                double turns = kSpiralTurns, std::uint64_t seed = 0);

/// CSV with header `x1,x2,label`.
void write_spiral_csv(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset read_spiral_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// IDX (big-endian; unsigned-byte payloads only)

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Images (magic 0x00000803) scaled to [0, 1]; labels (0x00000801) one-hot, L = 10.
LabeledDataset load_mnist_idx(const std::filesystem::path& image_path,
                              const std::filesystem::path& label_path);
/// Inverse of load_mnist_idx; pixels are rounded back to bytes.
void save_mnist_idx(const LabeledDataset& data, const std::filesystem::path& image_path,
                    const std::filesystem::path& label_path);

// ---------------------------------------------------------------------------
// Delay-system input encodings (history on [-tau, 0], eta history zero)

using OeoHistory = DelayHistory<OeoModel<double>>;

/// xi = x1 on [-tau, -tau/2), x2 on [-tau/2, 0]. Requires even m_tau.
OeoHistory encode_spiral_input(const Eigen::Vector2d& x, const TimeGrid& grid);

/// Side length multiplier and flattened length of the enlarged image.
inline constexpr int kImageScale = 2;

/// Nearest-neighbour 2x enlargement, flattened row-major.
Eigen::VectorXd enlarge_image(const Eigen::Ref<const Eigen::RowVectorXd>& pixels, int rows = 28,
                              int cols = 28);

/// History sample j gets component j mod m of the enlarged image (m = 4 rows cols).
OeoHistory encode_image_input(const Eigen::Ref<const Eigen::RowVectorXd>& pixels,
                              const TimeGrid& grid, int rows = 28, int cols = 28);

}  // namespace optctl
