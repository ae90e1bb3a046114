#pragma once

// Two-pass experiment driver: a first classifier labels treetop candidates,
// cohabitation-aware fusion turns the confident ones into pseudo-labels, and
// a freshly initialised classifier is trained on labels plus pseudo-labels.
// Both are scored on the held-out test split and aggregated over runs.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "canopy/cohabitation.hpp"
#include "canopy/config.hpp"
#include "canopy/dsnn.hpp"
#include "canopy/geodata.hpp"
#include "canopy/metrics.hpp"
#include "canopy/pseudolabel.hpp"
#include "canopy/treetop.hpp"

namespace canopy::pipeline {

inline constexpr const char* kMethodBase = "DSNN";
inline constexpr const char* kMethodPseudo = "DSNN+P";

struct Dataset {
  geodata::RasterCube hsi;
  geodata::RasterCube als;
  geodata::RasterCube chm;
  std::vector<std::string> classes;
  std::vector<geodata::PolygonLabel> polygons;
  geodata::SplitAssignment splits;
  geodata::LabelRaster labels;                  // rasterized polygons
  std::optional<geodata::LabelRaster> truth;    // full reference map, when known
};

Dataset load_dataset(const ExperimentConfig& cfg);

/// Prior over `classes`. Entries come from `matrix` by species name; pairs
/// involving a class the matrix does not list use `unlisted_affinity` (1 on
/// the diagonal). Sentinels become `missing_as`. No matrix gives a uniform prior.
cohab::ScaledPrior build_prior(const std::optional<cohab::CohabitationMatrix>& matrix,
                               const std::vector<std::string>& classes, double delta_scale,
                               double missing_as, double unlisted_affinity);

/// Standardized features of the given pixels.
dsnn::Batch<float> pixel_features(const Dataset& data, std::span<const pseudolabel::Coord> pixels,
                                  const geodata::Standardizer& hsi_std,
                                  const geodata::Standardizer& als_std);

/// Argmax class per pixel; nodata pixels stay unlabelled.
geodata::LabelRaster predict_map(const dsnn::ModelState<float>& model, const Dataset& data,
                                 const geodata::Standardizer& hsi_std,
                                 const geodata::Standardizer& als_std, int threads);

/// Fraction of pseudo-labels agreeing with the reference map.
double pseudo_label_precision(std::span<const pseudolabel::PseudoLabel> labels,
                              const geodata::LabelRaster& truth);

struct MethodResult {
  metrics::ConfusionMatrix confusion;
  metrics::EvaluationReport report;
};

/// In-memory record of one run, kept for analysis beyond the JSON outputs.
struct RunDetail {
  int run = 0;
  std::uint64_t seed = 0;
  std::vector<pseudolabel::Candidate> candidates;  // first-pass probabilities
  std::vector<pseudolabel::Parent> parents;
  std::set<pseudolabel::Coord> excluded;           // labelled polygon pixels
  std::vector<pseudolabel::PseudoLabel> augmented;
  std::optional<double> pseudo_precision;
  MethodResult base;
  MethodResult pseudo;
};

struct ExperimentResult {
  std::vector<RunDetail> runs;
  cohab::ScaledPrior prior;
  std::string metrics_json;   // byte-deterministic for a fixed config and thread count
  std::string manifest_json;
};

/// Runs every stage for cfg.n_runs seeds (base_seed + r). When `out_dir` is
/// non-empty, writes metrics.json, manifest.json, candidates, augmented sets,
/// checkpoints and (for run 0) class maps there. A failing stage is reported
/// with its run and stage name; runs finished before it stay in the manifest.
ExperimentResult run_two_pass(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Per-class F1, macro F1, class-area and map agreement between one method
/// of each manifest, as JSON.
std::string compare_runs(const std::filesystem::path& manifest_a, const std::string& method_a,
                         const std::filesystem::path& manifest_b, const std::string& method_b);

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(std::span<const double> values);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace canopy::pipeline
