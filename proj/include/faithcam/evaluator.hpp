#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace faithcam {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;  // classes x classes, row-major
  std::vector<std::string> labels;

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;

  bool operator==(const ConfusionMatrix&) const = default;
};

// Throws ValueError on length mismatch or a label outside [0, classes).
// Labels default to "class0", "class1", ... when names is empty.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                 std::size_t classes, std::vector<std::string> names = {});

// Harmonic mean of precision and recall; 0 when both are 0.
double f1_score(double precision, double recall);

struct ClassMetrics {
  std::string label;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
  // Set when the denominator was zero and the metric was reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  bool operator==(const ClassMetrics&) const = default;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double micro_precision = 0, micro_recall = 0, micro_f1 = 0;
  double top1 = 0;  // trace / total
  std::uint64_t total = 0;

  bool operator==(const MetricsReport&) const = default;
};

// One-vs-rest counts per class, then accuracy (TP+TN)/(TP+TN+FP+FN),
// precision TP/(TP+FP), recall TP/(TP+FN) and F1 from those two. Macro
// aggregates are unweighted class means; micro aggregates pool the counts.
// Throws ValueError when the matrix is malformed or holds no samples.
MetricsReport per_class_metrics(const ConfusionMatrix& cm);

struct NormalizedConfusion {
  std::size_t classes = 0;
  std::vector<double> values;     // each non-empty row sums to 1
  std::vector<bool> empty_rows;   // rows with no samples, emitted as zeros
};

NormalizedConfusion normalize_rows(const ConfusionMatrix& cm);

struct ReportOptions {
  std::size_t cell_size = 32;  // pixels per confusion cell in the PNG
  std::size_t margin = 8;      // border on every side
};

// Writes metrics.json, confusion.csv, confusion_normalized.csv and
// confusion.png into dir. The PNG is (cell_size * C + 2 * margin) square.
void write_report(const MetricsReport& report, const ConfusionMatrix& cm, const std::filesystem::path& dir,
                  const ReportOptions& options = {});

// Parses a metrics.json written by write_report.
MetricsReport read_report(const std::filesystem::path& path);

}  // namespace faithcam
