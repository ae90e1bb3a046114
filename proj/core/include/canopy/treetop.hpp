#pragma once

// Treetop candidates from a canopy height model: clamp, Gaussian smoothing,
// windowed local maxima with plateau suppression.

#include <filesystem>
#include <span>
#include <vector>

#include "canopy/geodata.hpp"

namespace canopy::treetop {

struct TreetopConfig {
  double clip_lo = 5.0;   // metres
  double clip_hi = 40.0;  // metres
  double sigma = 1.0;     // pixels
  int window = 5;         // odd, >= 3
  double h_min = 5.0;     // metres

  void validate() const;
};

struct Treetop {
  int x = 0;
  int y = 0;
  float height = 0;
};

using CandidateSet = std::vector<Treetop>;

/// Normalized Gaussian weights for offsets -r..r, r = ceil(3 sigma).
std::vector<double> gaussian_kernel_1d(double sigma);

/// Half-sample symmetric reflection of an out-of-range index into [0, n).
long reflect_index(long i, long n) noexcept;

/// Clamps to [clip_lo, clip_hi] (NaN and sub-clip values become clip_lo),
/// then smooths with a separable Gaussian using reflect padding.
geodata::RasterCube preprocess_chm(const geodata::RasterCube& chm, const TreetopConfig& cfg);

/// Candidates in row-major order. A pixel qualifies when it reaches h_min,
/// is >= every pixel in its (clipped) window, and no equal pixel in the
/// window precedes it in (y, x) order.
CandidateSet detect_treetops(const geodata::RasterCube& smoothed, const TreetopConfig& cfg);

void write_candidates_csv(std::span<const Treetop> candidates, const std::filesystem::path& path);
CandidateSet read_candidates_csv(const std::filesystem::path& path);

}  // namespace canopy::treetop
