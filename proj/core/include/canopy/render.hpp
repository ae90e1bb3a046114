#pragma once

// Class maps as RGBA PNGs: one palette colour per class, transparent
// unlabelled pixels, and a legend strip of swatches for the classes present.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "canopy/geodata.hpp"

namespace canopy::render {

struct Rgba {
  std::uint8_t r = 0, g = 0, b = 0, a = 255;
  auto operator<=>(const Rgba&) const = default;
};

/// Sixteen well-separated opaque colours.
std::span<const Rgba> default_palette() noexcept;

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Rgba> pixels;  // row-major

  Rgba at(std::size_t x, std::size_t y) const noexcept { return pixels[y * width + x]; }
};

inline constexpr std::size_t kSwatch = 10;
inline constexpr std::size_t kGap = 2;

/// Map rows followed by the legend strip. Throws when the palette has fewer
/// entries than `classes` or a label is out of range.
Image render_class_map(const geodata::LabelRaster& map, std::size_t classes,
                       std::span<const Rgba> palette = default_palette());

void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

}  // namespace canopy::render
