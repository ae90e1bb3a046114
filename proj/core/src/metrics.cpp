#include "canopy/metrics.hpp"

#include <numeric>

#include "canopy/error.hpp"
#include "metrics_json.hpp"

namespace canopy::metrics {

std::int64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::row_sum(std::size_t t) const noexcept {
  std::int64_t s = 0;
  for (std::size_t p = 0; p < classes; ++p) s += at(t, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t p) const noexcept {
  std::int64_t s = 0;
  for (std::size_t t = 0; t < classes; ++t) s += at(t, p);
  return s;
}

std::vector<double> ConfusionMatrix::row_normalized() const {
  std::vector<double> out(classes * classes, 0.0);
  for (std::size_t t = 0; t < classes; ++t) {
    const auto rs = row_sum(t);
    if (rs == 0) continue;
    for (std::size_t p = 0; p < classes; ++p)
      out[t * classes + p] = static_cast<double>(at(t, p)) / static_cast<double>(rs);
  }
  return out;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred,
                          std::size_t classes) {
  if (truth.size() != pred.size())
    fail(ErrorKind::Validation, "truth has " + std::to_string(truth.size()) +
                                    " labels but prediction has " + std::to_string(pred.size()));
  ConfusionMatrix cm;
  cm.classes = classes;
  cm.counts.assign(classes * classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes ||
        static_cast<std::size_t>(p) >= classes)
      fail(ErrorKind::Validation, "label out of range at index " + std::to_string(i) + " (" +
                                      std::to_string(t) + "," + std::to_string(p) + ")");
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

EvaluationReport report(const ConfusionMatrix& cm, double attractor_threshold) {
  const std::size_t c = cm.classes;
  if (cm.counts.size() != c * c) fail(ErrorKind::Validation, "confusion matrix has wrong size");
  for (auto v : cm.counts)
    if (v < 0) fail(ErrorKind::Validation, "confusion matrix has negative counts");
  const auto total = cm.total();
  if (total == 0) fail(ErrorKind::Validation, "confusion matrix is all zero");

  EvaluationReport r;
  r.attractor_threshold = attractor_threshold;
  r.per_class.resize(c);
  const auto norm = cm.row_normalized();
  std::int64_t diag = 0;
  double f1_sum = 0, recall_sum = 0;
  for (std::size_t k = 0; k < c; ++k) {
    auto& s = r.per_class[k];
    const auto tp = cm.at(k, k);
    diag += tp;
    s.support = cm.row_sum(k);
    const auto predicted = cm.col_sum(k);
    s.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    s.recall = s.support ? static_cast<double>(tp) / static_cast<double>(s.support) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    for (std::size_t t = 0; t < c; ++t) {
      if (t == k) continue;
      const double v = norm[t * c + k];
      s.age += v;
      if (v > attractor_threshold) ++s.nc;
    }
    if (s.support == 0) {
      const std::string name = k < cm.labels.size() ? cm.labels[k] : std::to_string(k);
      r.notes.push_back("class " + name + " has no support; excluded from macro F1 and balanced accuracy");
      continue;
    }
    ++r.scored_classes;
    f1_sum += s.f1;
    recall_sum += s.recall;
  }
  r.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  r.macro_f1 = f1_sum / static_cast<double>(r.scored_classes);
  r.balanced_accuracy = recall_sum / static_cast<double>(r.scored_classes);
  return r;
}

double jaccard_maps(const geodata::LabelRaster& a, const geodata::LabelRaster& b) {
  if (a.width != b.width || a.height != b.height || a.labels.size() != b.labels.size())
    fail(ErrorKind::Validation, "maps differ in shape (" + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) +
                                    "x" + std::to_string(b.height) + ")");
  constexpr auto kNone = geodata::LabelRaster::kUnlabeled;
  std::size_t agree = 0, uni = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool la = a.labels[i] != kNone, lb = b.labels[i] != kNone;
    if (!la && !lb) continue;
    ++uni;
    if (la && lb && a.labels[i] == b.labels[i]) ++agree;
  }
  return uni ? static_cast<double>(agree) / static_cast<double>(uni) : 1.0;
}

std::vector<double> class_area_fractions(const geodata::LabelRaster& map, std::size_t classes) {
  std::vector<std::size_t> n(classes, 0);
  std::size_t labelled = 0;
  for (auto v : map.labels) {
    if (v == geodata::LabelRaster::kUnlabeled) continue;
    if (v < 0 || static_cast<std::size_t>(v) >= classes)
      fail(ErrorKind::Validation, "map label " + std::to_string(v) + " out of range");
    ++n[static_cast<std::size_t>(v)];
    ++labelled;
  }
  if (labelled == 0) fail(ErrorKind::Validation, "map has no labelled pixels");
  std::vector<double> out(classes);
  for (std::size_t k = 0; k < classes; ++k)
    out[k] = 100.0 * static_cast<double>(n[k]) / static_cast<double>(labelled);
  return out;
}

nlohmann::ordered_json report_to_json(const ConfusionMatrix& cm, const EvaluationReport& r,
                                      std::span<const std::string> class_names) {
  if (!class_names.empty() && class_names.size() != cm.classes)
    fail(ErrorKind::Validation, "class list has " + std::to_string(class_names.size()) +
                                    " names for a " + std::to_string(cm.classes) +
                                    "-class matrix");
  nlohmann::ordered_json j;
  j["schema"] = kReportSchema;
  j["classes"] = std::vector<std::string>(class_names.begin(), class_names.end());
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < cm.classes; ++t) {
    std::vector<std::int64_t> row(cm.counts.begin() + static_cast<long>(t * cm.classes),
                                  cm.counts.begin() + static_cast<long>((t + 1) * cm.classes));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  j["accuracy"] = r.accuracy;
  j["balanced_accuracy"] = r.balanced_accuracy;
  j["macro_f1"] = r.macro_f1;
  j["attractor_threshold"] = r.attractor_threshold;
  nlohmann::ordered_json pc = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& s = r.per_class[k];
    nlohmann::ordered_json e;
    e["class"] = class_names.empty() ? std::to_string(k) : class_names[k];
    e["support"] = s.support;
    e["precision"] = s.precision;
    e["recall"] = s.recall;
    e["f1"] = s.f1;
    e["age"] = s.age;
    e["nc"] = s.nc;
    pc.push_back(e);
  }
  j["per_class"] = pc;
  j["notes"] = r.notes;
  return j;
}

std::string report_json(const ConfusionMatrix& cm, const EvaluationReport& r,
                        std::span<const std::string> class_names) {
  return report_to_json(cm, r, class_names).dump(2) + "\n";
}

}  // namespace canopy::metrics
