#include "faithcam/evaluator.hpp"

#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "faithcam/error.hpp"
#include "faithcam/image.hpp"

namespace faithcam {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kOrientation = "rows=true class, columns=predicted class";

double ratio(std::uint64_t num, std::uint64_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string csv_label(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                 std::size_t classes, std::vector<std::string> names) {
  if (truth.size() != predicted.size()) {
    throw ValueError(fmt::format("confusion_matrix: {} true labels but {} predictions", truth.size(), predicted.size()));
  }
  if (classes == 0) throw ValueError("confusion_matrix: need at least one class");
  if (names.empty()) {
    for (std::size_t c = 0; c < classes; ++c) names.push_back(fmt::format("class{}", c));
  }
  if (names.size() != classes) {
    throw ValueError(fmt::format("confusion_matrix: {} label names for {} classes", names.size(), classes));
  }
  ConfusionMatrix cm{classes, std::vector<std::uint64_t>(classes * classes, 0), std::move(names)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw ValueError(fmt::format("confusion_matrix: sample {} has label pair ({}, {}) outside [0, {})", i,
                                   truth[i], predicted[i], classes));
    }
    ++cm.counts[truth[i] * classes + predicted[i]];
  }
  return cm;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

MetricsReport per_class_metrics(const ConfusionMatrix& cm) {
  if (cm.classes == 0 || cm.counts.size() != cm.classes * cm.classes) {
    throw ValueError("per_class_metrics: empty or malformed confusion matrix");
  }
  MetricsReport report;
  report.total = cm.total();
  if (report.total == 0) throw ValueError("per_class_metrics: confusion matrix holds no samples");
  const std::size_t C = cm.classes;
  for (std::size_t c = 0; c < C; ++c) {
    ClassMetrics m;
    m.label = c < cm.labels.size() ? cm.labels[c] : fmt::format("class{}", c);
    m.tp = cm.at(c, c);
    for (std::size_t o = 0; o < C; ++o) {
      if (o == c) continue;
      m.fp += cm.at(o, c);
      m.fn += cm.at(c, o);
    }
    m.tn = report.total - m.tp - m.fp - m.fn;
    m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
    m.recall = ratio(m.tp, m.tp + m.fn, m.recall_undefined);
    m.f1_undefined = m.precision + m.recall == 0.0;
    m.f1 = f1_score(m.precision, m.recall);
    bool unused = false;
    m.accuracy = ratio(m.tp + m.tn, report.total, unused);
    report.macro_precision += m.precision;
    report.macro_recall += m.recall;
    report.macro_f1 += m.f1;
    report.per_class.push_back(std::move(m));
  }
  report.macro_precision /= static_cast<double>(C);
  report.macro_recall /= static_cast<double>(C);
  report.macro_f1 /= static_cast<double>(C);

  // Pooled over classes every misclassification is one FP and one FN.
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (const auto& m : report.per_class) tp += m.tp, fp += m.fp, fn += m.fn;
  bool unused = false;
  report.micro_precision = ratio(tp, tp + fp, unused);
  report.micro_recall = ratio(tp, tp + fn, unused);
  report.micro_f1 = f1_score(report.micro_precision, report.micro_recall);
  report.top1 = ratio(cm.trace(), report.total, unused);
  return report;
}

NormalizedConfusion normalize_rows(const ConfusionMatrix& cm) {
  NormalizedConfusion out{cm.classes, std::vector<double>(cm.classes * cm.classes, 0.0),
                          std::vector<bool>(cm.classes, false)};
  for (std::size_t r = 0; r < cm.classes; ++r) {
    std::uint64_t row_sum = 0;
    for (std::size_t c = 0; c < cm.classes; ++c) row_sum += cm.at(r, c);
    if (row_sum == 0) {
      out.empty_rows[r] = true;
      continue;
    }
    for (std::size_t c = 0; c < cm.classes; ++c) {
      out.values[r * cm.classes + c] = static_cast<double>(cm.at(r, c)) / static_cast<double>(row_sum);
    }
  }
  return out;
}

namespace {

json class_to_json(const ClassMetrics& m) {
  return {{"label", m.label},         {"tp", m.tp},
          {"fp", m.fp},               {"fn", m.fn},
          {"tn", m.tn},               {"precision", m.precision},
          {"recall", m.recall},       {"f1", m.f1},
          {"accuracy", m.accuracy},   {"precision_undefined", m.precision_undefined},
          {"recall_undefined", m.recall_undefined}, {"f1_undefined", m.f1_undefined}};
}

ClassMetrics class_from_json(const json& j) {
  ClassMetrics m;
  m.label = j.at("label").get<std::string>();
  m.tp = j.at("tp").get<std::uint64_t>();
  m.fp = j.at("fp").get<std::uint64_t>();
  m.fn = j.at("fn").get<std::uint64_t>();
  m.tn = j.at("tn").get<std::uint64_t>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.accuracy = j.at("accuracy").get<double>();
  m.precision_undefined = j.at("precision_undefined").get<bool>();
  m.recall_undefined = j.at("recall_undefined").get<bool>();
  m.f1_undefined = j.at("f1_undefined").get<bool>();
  return m;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_report(const MetricsReport& report, const ConfusionMatrix& cm, const fs::path& dir,
                  const ReportOptions& options) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());

  json classes = json::array();
  for (const auto& m : report.per_class) classes.push_back(class_to_json(m));
  const json doc = {{"orientation", kOrientation},
                    {"total", report.total},
                    {"top1", report.top1},
                    {"macro", {{"precision", report.macro_precision}, {"recall", report.macro_recall}, {"f1", report.macro_f1}}},
                    {"micro", {{"precision", report.micro_precision}, {"recall", report.micro_recall}, {"f1", report.micro_f1}}},
                    {"per_class", classes}};
  {
    auto out = open_out(dir / "metrics.json");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + (dir / "metrics.json").string());
  }

  const auto norm = normalize_rows(cm);
  {
    auto raw = open_out(dir / "confusion.csv");
    auto nrm = open_out(dir / "confusion_normalized.csv");
    raw << "true\\predicted";
    nrm << "true\\predicted";
    for (const auto& l : cm.labels) {
      raw << ',' << csv_label(l);
      nrm << ',' << csv_label(l);
    }
    raw << '\n';
    nrm << ",empty_row\n";
    for (std::size_t r = 0; r < cm.classes; ++r) {
      raw << csv_label(cm.labels[r]);
      nrm << csv_label(cm.labels[r]);
      for (std::size_t c = 0; c < cm.classes; ++c) {
        raw << ',' << cm.at(r, c);
        nrm << ',' << fmt::format("{}", norm.values[r * cm.classes + c]);
      }
      raw << '\n';
      nrm << ',' << (norm.empty_rows[r] ? 1 : 0) << '\n';
    }
    if (!raw || !nrm) throw IoError("failed writing confusion CSVs in " + dir.string());
  }

  const std::size_t side = options.cell_size * cm.classes + 2 * options.margin;
  Image8 png{side, side, std::vector<std::uint8_t>(side * side * 3, 255)};
  for (std::size_t r = 0; r < cm.classes; ++r) {
    for (std::size_t c = 0; c < cm.classes; ++c) {
      std::array<float, 3> color{0.5f, 0.5f, 0.5f};
      if (!norm.empty_rows[r]) color = colormap(norm.values[r * cm.classes + c]);
      for (std::size_t y = 0; y < options.cell_size; ++y) {
        for (std::size_t x = 0; x < options.cell_size; ++x) {
          const std::size_t py = options.margin + r * options.cell_size + y;
          const std::size_t px = options.margin + c * options.cell_size + x;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            png.at(py, px, ch) = static_cast<std::uint8_t>(std::lround(color[ch] * 255.0f));
          }
        }
      }
    }
  }
  std::string labels;
  for (std::size_t i = 0; i < cm.labels.size(); ++i) labels += (i ? "," : "") + cm.labels[i];
  write_png(dir / "confusion.png", png, {{"Orientation", kOrientation}, {"Labels", labels}});
}

MetricsReport read_report(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    const json doc = json::parse(in);
    MetricsReport r;
    r.total = doc.at("total").get<std::uint64_t>();
    r.top1 = doc.at("top1").get<double>();
    r.macro_precision = doc.at("macro").at("precision").get<double>();
    r.macro_recall = doc.at("macro").at("recall").get<double>();
    r.macro_f1 = doc.at("macro").at("f1").get<double>();
    r.micro_precision = doc.at("micro").at("precision").get<double>();
    r.micro_recall = doc.at("micro").at("recall").get<double>();
    r.micro_f1 = doc.at("micro").at("f1").get<double>();
    for (const auto& c : doc.at("per_class")) r.per_class.push_back(class_from_json(c));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed metrics file " + path.string() + ": " + e.what());
  }
}

}  // namespace faithcam
