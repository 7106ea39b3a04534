#include "optctl/readout.hpp"

namespace optctl {

LossReport make_loss_report(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                            const Eigen::MatrixXd& targets, const std::vector<char>& failed) {
  const Eigen::Index count = logits.rows();
  if (static_cast<Eigen::Index>(labels.size()) != count || targets.rows() != count ||
      targets.cols() != logits.cols())
    throw ShapeError("make_loss_report: logits, labels and targets disagree");
  if (!failed.empty() && static_cast<Eigen::Index>(failed.size()) != count)
    throw ShapeError("make_loss_report: failure mask size mismatch");

  LossReport report;
  report.outputs.resize(count, logits.cols());
  report.predicted.assign(static_cast<std::size_t>(count), -1);
  std::int64_t correct = 0;
  for (Eigen::Index k = 0; k < count; ++k) {
    if (!failed.empty() && failed[static_cast<std::size_t>(k)]) {
      report.outputs.row(k).setConstant(1.0 / static_cast<double>(logits.cols()));
      ++report.diverged;
      continue;
    }
    report.outputs.row(k) = softmax(logits.row(k)).transpose();
    const auto cls = static_cast<int>(argmax(report.outputs.row(k)));
    report.predicted[static_cast<std::size_t>(k)] = cls;
    if (cls == labels[static_cast<std::size_t>(k)]) ++correct;
  }
  report.loss = count > 0 ? cross_entropy(targets, report.outputs) : 0.0;
  report.accuracy = count > 0 ? static_cast<double>(correct) / static_cast<double>(count) : 0.0;
  return report;
}

}  // namespace optctl
