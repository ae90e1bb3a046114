#pragma once

// Co-registered rasters, labelled crown polygons, polygon-level splits and
// feature standardization.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace canopy::geodata {

/// Band-sequential grid of 32-bit measurements. Value (x, y, b) lives at
/// values[b * width * height + y * width + x].
struct RasterCube {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t bands = 0;
  std::vector<float> values;
  float nodata = std::numeric_limits<float>::quiet_NaN();
  std::string name;
  std::vector<std::string> band_names;

  static RasterCube filled(std::size_t width, std::size_t height, std::size_t bands,
                           float value = 0.0f);

  std::size_t plane_size() const noexcept { return width * height; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t band) const noexcept {
    return band * plane_size() + y * width + x;
  }
  float at(std::size_t x, std::size_t y, std::size_t band = 0) const noexcept {
    return values[index(x, y, band)];
  }
  float& at(std::size_t x, std::size_t y, std::size_t band = 0) noexcept {
    return values[index(x, y, band)];
  }
  std::span<const float> band(std::size_t b) const noexcept {
    return {values.data() + b * plane_size(), plane_size()};
  }

  bool is_nodata(float v) const noexcept;
  /// True when any band of the pixel carries the nodata sentinel.
  bool pixel_is_nodata(std::size_t x, std::size_t y) const noexcept;
  std::vector<float> pixel(std::size_t x, std::size_t y) const;

  /// Throws on a size mismatch or a non-finite value that is not nodata.
  void validate() const;
};

/// `path` may name the payload (`.f32`), the sidecar (`.json`) or the stem.
struct CubePaths {
  std::filesystem::path data;
  std::filesystem::path header;
};
CubePaths cube_paths(const std::filesystem::path& path);

RasterCube load_cube(const std::filesystem::path& path);
void save_cube(const RasterCube& cube, const std::filesystem::path& path);

enum class Split { Train, Validation, Test };
std::string_view to_string(Split s) noexcept;
Split parse_split(std::string_view s);

struct PolygonLabel {
  double center_x = 0;
  double center_y = 0;
  double radius = 0;
  int label = 0;
  std::int64_t polygon_id = 0;
};

std::vector<PolygonLabel> read_polygons_csv(const std::filesystem::path& path);
void write_polygons_csv(std::span<const PolygonLabel> polygons, const std::filesystem::path& path);

struct LabelRaster {
  static constexpr std::int32_t kUnlabeled = -1;

  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::int32_t> labels;
  std::vector<std::int64_t> polygon_ids;  // -1 where unlabeled

  std::int32_t at(std::size_t x, std::size_t y) const noexcept { return labels[y * width + x]; }
};

/// Pixel (x, y) has its centre at (x, y). A pixel takes label L when its
/// centre is within `radius` of a polygon centre; overlaps go to the
/// smallest polygon_id.
LabelRaster rasterize_polygons(std::span<const PolygonLabel> polygons, std::size_t width,
                               std::size_t height);

/// Single-band cube with the class index per pixel, NaN where unlabeled.
RasterCube label_raster_to_cube(const LabelRaster& raster);
LabelRaster label_raster_from_cube(const RasterCube& cube);

struct SplitFractions {
  double train = 0.66;
  double validation = 0.23;
  double test = 0.11;
};

struct SplitAssignment {
  std::map<std::int64_t, Split> by_polygon;
  std::vector<std::string> warnings;

  Split of(std::int64_t polygon_id) const;
};

/// Stratified per class by polygon count with a seeded Fisher-Yates shuffle.
/// Classes with fewer than three polygons go entirely to train (with a warning).
SplitAssignment split_by_polygon(std::span<const PolygonLabel> polygons, SplitFractions fractions,
                                 std::uint64_t seed);

void write_splits_csv(const SplitAssignment& splits, const std::filesystem::path& path);
SplitAssignment read_splits_csv(const std::filesystem::path& path);

struct LabeledSample {
  int x = 0;
  int y = 0;
  std::vector<float> hsi;
  std::vector<float> als;
  int label = 0;
  std::int64_t polygon_id = -1;
  Split split = Split::Train;
};

/// One sample per labelled pixel; pixels that are nodata in either cube are skipped.
std::vector<LabeledSample> extract_samples(const RasterCube& hsi, const RasterCube& als,
                                           const LabelRaster& labels,
                                           const SplitAssignment& splits);

enum class Stream { Hsi, Als };

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // population std; 0 marks a degenerate band

  std::vector<float> apply(std::span<const float> v) const;
  void apply_inplace(std::span<float> v) const;
};

Standardizer fit_standardizer(std::span<const LabeledSample> samples, Stream which);

std::vector<std::string> read_class_list(const std::filesystem::path& path);
void write_class_list(std::span<const std::string> classes, const std::filesystem::path& path);

/// Holds the extracted samples and records every split access so the
/// pipeline can prove the test split was untouched until evaluation.
class SampleStore {
public:
  struct Access {
    std::string stage;
    Split split;
    bool during_evaluation;
  };

  explicit SampleStore(std::vector<LabeledSample> samples);

  std::vector<LabeledSample> get(Split split, std::string_view stage);
  void begin_evaluation() noexcept { evaluating_ = true; }

  std::size_t count(Split split) const noexcept;
  const std::vector<Access>& audit_log() const noexcept { return log_; }
  std::size_t premature_test_reads() const noexcept;

private:
  std::vector<LabeledSample> samples_;
  std::vector<Access> log_;
  bool evaluating_ = false;
};

}  // namespace canopy::geodata
