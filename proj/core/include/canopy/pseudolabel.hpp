#pragma once

// Cohabitation-aware pseudo-labelling: each treetop candidate is scored
// against every labelled parent in reach, the most confident fused score
// wins, and confident winners are expanded into blocks of new training pixels.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "canopy/cohabitation.hpp"

namespace canopy::pseudolabel {

struct Candidate {
  int x = 0;
  int y = 0;
  std::vector<double> probs;  // classifier probabilities, sums to 1
};

struct Parent {
  int x = 0;
  int y = 0;
  int label = 0;
};

struct FusionConfig {
  double r_min = 5.0;    // metres
  double r_max = 20.0;   // metres
  double epsilon = 0.05;
  double tau = 0.99;
  int expand_n = 1;      // block half-width in pixels
  double delta_scale = 0.75;
  double gsd = 1.0;      // metres per pixel

  void validate() const;
};

struct PseudoLabel {
  int x = 0;
  int y = 0;
  int label = 0;
  double confidence = 0;
  std::int64_t parent_index = -1;
  bool expanded = false;  // false for the block centre
};

struct Coord {
  int x = 0;
  int y = 0;
  auto operator<=>(const Coord&) const = default;
};

/// 1 inside r_min, epsilon beyond r_max, quarter-ellipse in between.
double distance_weight(double d, const FusionConfig& cfg);

/// Normalized P_k * pi[c0][k] * Omega_k where Omega damps only the parent's
/// class by w(d). Returns nullopt when every product is zero.
std::optional<std::vector<double>> fuse_scores(const Candidate& candidate, const Parent& parent,
                                               const cohab::ScaledPrior& prior, double d,
                                               const FusionConfig& cfg);

/// Best parent within r_max by maximum fused class score. Ties go to the
/// lower parent index, then the lower class index.
std::optional<PseudoLabel> select_best_parent(const Candidate& candidate,
                                              std::span<const Parent> parents,
                                              const cohab::ScaledPrior& prior,
                                              const FusionConfig& cfg);

/// Bucketed parent lookup so each candidate only visits parents near it.
class ParentIndex {
public:
  ParentIndex(std::span<const Parent> parents, double reach_pixels);

  /// Indices of parents within `reach_pixels` of (x, y), ascending.
  std::vector<std::size_t> near(int x, int y) const;

private:
  std::span<const Parent> parents_;
  double reach_;
  int cell_;
  int min_cx_ = 0, min_cy_ = 0, ncx_ = 0, ncy_ = 0;
  std::vector<std::vector<std::size_t>> buckets_;
};

std::optional<PseudoLabel> select_best_parent(const Candidate& candidate,
                                              std::span<const Parent> parents,
                                              const ParentIndex& index,
                                              const cohab::ScaledPrior& prior,
                                              const FusionConfig& cfg);

struct AugmentOptions {
  std::size_t width = 0;   // raster bounds for block clipping
  std::size_t height = 0;
  std::optional<std::uint64_t> shuffle_seed;  // candidate order before collision resolution
  int threads = 1;
};

/// Confidence filter (> tau), removal of training coordinates, expansion
/// to (2n+1)^2 blocks clipped to the raster, and first-come collision
/// resolution in candidate order.
std::vector<PseudoLabel> build_augmented_set(std::span<const Candidate> candidates,
                                             std::span<const Parent> parents,
                                             const cohab::ScaledPrior& prior,
                                             const FusionConfig& cfg,
                                             const std::set<Coord>& training_coords,
                                             const AugmentOptions& options);

void write_augmented_csv(std::span<const PseudoLabel> labels, const std::filesystem::path& path);
std::vector<PseudoLabel> read_augmented_csv(const std::filesystem::path& path);

std::vector<Parent> read_parents_csv(const std::filesystem::path& path);
void write_parents_csv(std::span<const Parent> parents, const std::filesystem::path& path);

}  // namespace canopy::pseudolabel
