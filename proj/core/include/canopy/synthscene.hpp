#pragma once

// Synthetic forest scenes with known ground truth. Trees are planted one at
// a time; each new tree draws its species from the cohabitation rows of the
// trees already standing nearby. Crowns are Gaussian bumps in the CHM, and
// the spectra mix species signatures by crown coverage.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "canopy/cohabitation.hpp"
#include "canopy/geodata.hpp"

namespace canopy::synth {

inline constexpr double kGroundHeight = 5.0;
inline constexpr const char* kBackgroundClass = "Background";

struct SceneConfig {
  std::size_t width = 96;
  std::size_t height = 96;
  int n_trees = 400;
  std::vector<std::string> species;
  cohab::CohabitationMatrix gt_cohab;
  double crown_radius_min = 2.0;  // metres (1 m pixels)
  double crown_radius_max = 3.5;
  double height_min = 12.0;
  double height_max = 30.0;
  int spectral_bands = 20;
  int als_bands = 6;              // at most 8 structural features
  double noise_sigma = 0.02;      // reflectance units
  double als_noise_sigma = 0.5;   // metres
  double brightness_sigma = 0.08; // per-tree multiplicative spread
  double label_fraction = 0.15;
  double polygon_radius_scale = 0.8;
  int background_polygons = -1;   // -1: as many as the average species gets
  double min_spacing = 3.5;
  double neighbor_radius = 20.0;
  int max_attempts = 20000;       // placement retries per tree
  geodata::SplitFractions split;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Tree {
  double x = 0;
  double y = 0;
  int species = 0;
  double radius = 0;
  double height = 0;
  std::int64_t polygon_id = -1;  // -1 when unlabelled
};

struct GroundTruth {
  std::vector<std::string> classes;  // species followed by Background
  std::vector<Tree> trees;
  geodata::LabelRaster class_map;    // dominant cover per pixel
  std::vector<geodata::PolygonLabel> polygons;
  geodata::SplitAssignment splits;

  int background_class() const noexcept { return static_cast<int>(classes.size()) - 1; }
};

struct Scene {
  geodata::RasterCube hsi;
  geodata::RasterCube als;
  geodata::RasterCube chm;
  GroundTruth truth;
};

/// Deterministic for a given config and seed.
Scene generate_scene(const SceneConfig& cfg);

/// Observed over expected pair counts within `radius`, using the species
/// frequencies of the scene. Symmetric; 0 where a species is absent.
struct EmpiricalCohabitation {
  std::vector<std::string> species;
  std::vector<double> values;
  std::size_t pairs = 0;

  double at(std::size_t i, std::size_t j) const noexcept { return values[i * species.size() + j]; }
};

EmpiricalCohabitation measure_empirical_cohabitation(const GroundTruth& gt, double radius);

/// Six species with two strongly associated pairs on a 96x96 grid.
SceneConfig benchmark_scene_config(std::uint64_t seed = 7);

/// Writes hsi/als/chm cubes, polygons.csv, splits.csv, classes.txt,
/// cohabitation.csv, class_map cube and ground_truth.json into `dir`.
void write_scene(const Scene& scene, const SceneConfig& cfg, const std::filesystem::path& dir);

}  // namespace canopy::synth
