#pragma once

// TOML configuration for experiments and synthetic scenes. Relative paths
// are resolved against the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <string>

#include "canopy/dsnn.hpp"
#include "canopy/pseudolabel.hpp"
#include "canopy/synthscene.hpp"
#include "canopy/treetop.hpp"

namespace canopy {

struct DataPaths {
  std::filesystem::path hsi;
  std::filesystem::path als;
  std::filesystem::path chm;
  std::filesystem::path polygons;
  std::filesystem::path splits;        // optional; derived from base_seed when empty
  std::filesystem::path classes;
  std::filesystem::path cohabitation;  // optional; uniform prior when empty
  std::filesystem::path truth_map;     // optional; enables pseudo-label precision
};

struct ExperimentConfig {
  DataPaths data;
  dsnn::NetworkConfig network;  // layer input/output sizes come from the data
  treetop::TreetopConfig treetops;
  pseudolabel::FusionConfig fusion;
  double missing_as = 0.0;          // replacement for -1 sentinels
  double unlisted_affinity = 0.5;   // prior entry for classes absent from the matrix
  int n_runs = 5;
  std::uint64_t base_seed = 0;
  int threads = 1;
  bool render_maps = true;

  /// With `check_files`, also requires every referenced file to exist.
  void validate(bool check_files) const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// `[scene]` table; `preset = "benchmark"` starts from the benchmark scene.
synth::SceneConfig load_scene_config(const std::filesystem::path& path);

}  // namespace canopy
