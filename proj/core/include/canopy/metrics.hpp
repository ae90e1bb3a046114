#pragma once

// Confusion matrices, per-class and averaged scores, attractor statistics
// and map agreement.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "canopy/geodata.hpp"

namespace canopy::metrics {

struct ConfusionMatrix {
  std::vector<std::string> labels;    // optional names, size() entries when set
  std::size_t classes = 0;
  std::vector<std::int64_t> counts;   // rows = true class, columns = predicted

  std::int64_t at(std::size_t t, std::size_t p) const noexcept { return counts[t * classes + p]; }
  std::int64_t& at(std::size_t t, std::size_t p) noexcept { return counts[t * classes + p]; }
  std::int64_t total() const noexcept;
  std::int64_t row_sum(std::size_t t) const noexcept;
  std::int64_t col_sum(std::size_t p) const noexcept;

  /// Each row divided by its sum; rows without support stay zero.
  std::vector<double> row_normalized() const;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred,
                          std::size_t classes);

struct ClassScores {
  double precision = 0;  // 0 when nothing was predicted as this class
  double recall = 0;
  double f1 = 0;
  std::int64_t support = 0;
  double age = 0;  // aggregated incoming error, row-normalized
  int nc = 0;      // classes sending more than the threshold
};

struct EvaluationReport {
  std::vector<ClassScores> per_class;
  double macro_f1 = 0;
  double accuracy = 0;
  double balanced_accuracy = 0;
  double attractor_threshold = 0.01;
  std::size_t scored_classes = 0;  // classes with support
  std::vector<std::string> notes;
};

/// Classes without support are left out of macro F1 and balanced accuracy;
/// a note names each of them.
EvaluationReport report(const ConfusionMatrix& cm, double attractor_threshold = 0.01);

/// Agreement over pixels labelled in at least one map.
double jaccard_maps(const geodata::LabelRaster& a, const geodata::LabelRaster& b);

/// Percentage of labelled pixels per class, indices 0..classes-1.
std::vector<double> class_area_fractions(const geodata::LabelRaster& map, std::size_t classes);

/// Versioned JSON document with the matrix and every score.
std::string report_json(const ConfusionMatrix& cm, const EvaluationReport& r,
                        std::span<const std::string> class_names);

}  // namespace canopy::metrics
