#include "canopy/render.hpp"

#include <array>
#include <cstdio>
#include <memory>

#include <png.h>

#include "canopy/error.hpp"

namespace canopy::render {

namespace {

constexpr std::array<Rgba, 16> kPalette{{
    {31, 119, 180, 255}, {255, 127, 14, 255}, {44, 160, 44, 255},   {214, 39, 40, 255},
    {148, 103, 189, 255}, {140, 86, 75, 255}, {227, 119, 194, 255}, {127, 127, 127, 255},
    {188, 189, 34, 255}, {23, 190, 207, 255}, {0, 0, 128, 255},     {128, 128, 0, 255},
    {0, 128, 128, 255},  {255, 215, 0, 255},  {139, 0, 0, 255},     {220, 220, 220, 255},
}};

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};

}  // namespace

std::span<const Rgba> default_palette() noexcept { return kPalette; }

Image render_class_map(const geodata::LabelRaster& map, std::size_t classes,
                       std::span<const Rgba> palette) {
  if (palette.size() < classes)
    fail(ErrorKind::Validation, "palette has " + std::to_string(palette.size()) +
                                    " colours for " + std::to_string(classes) + " classes");
  if (map.labels.size() != map.width * map.height || map.width == 0)
    fail(ErrorKind::Validation, "class map is empty or malformed");
  std::vector<bool> used(classes, false);
  for (auto v : map.labels) {
    if (v == geodata::LabelRaster::kUnlabeled) continue;
    if (v < 0 || static_cast<std::size_t>(v) >= classes)
      fail(ErrorKind::Validation, "map label " + std::to_string(v) + " out of range");
    used[static_cast<std::size_t>(v)] = true;
  }
  std::vector<std::size_t> legend;
  for (std::size_t k = 0; k < classes; ++k)
    if (used[k]) legend.push_back(k);

  const std::size_t per_line = std::max<std::size_t>(1, (map.width - kGap) / (kSwatch + kGap));
  const std::size_t lines = legend.empty() ? 0 : (legend.size() + per_line - 1) / per_line;
  const std::size_t width = std::max(map.width, kSwatch + 2 * kGap);
  Image img;
  img.width = width;
  img.height = map.height + lines * (kSwatch + kGap) + (lines ? kGap : 0);
  img.pixels.assign(img.width * img.height, Rgba{0, 0, 0, 0});
  for (std::size_t y = 0; y < map.height; ++y)
    for (std::size_t x = 0; x < map.width; ++x) {
      const auto v = map.at(x, y);
      if (v != geodata::LabelRaster::kUnlabeled)
        img.pixels[y * width + x] = palette[static_cast<std::size_t>(v)];
    }
  for (std::size_t i = 0; i < legend.size(); ++i) {
    const std::size_t x0 = kGap + (i % per_line) * (kSwatch + kGap);
    const std::size_t y0 = map.height + kGap + (i / per_line) * (kSwatch + kGap);
    for (std::size_t y = y0; y < y0 + kSwatch; ++y)
      for (std::size_t x = x0; x < std::min(width, x0 + kSwatch); ++x)
        img.pixels[y * width + x] = palette[legend[i]];
  }
  return img;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.string().c_str(), "wb"));
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorKind::Io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::Io, "libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  static_assert(sizeof(Rgba) == 4);
  for (std::size_t y = 0; y < image.height; ++y)
    png_write_row(png, reinterpret_cast<png_const_bytep>(image.pixels.data() + y * image.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    fail(ErrorKind::Io, "cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGBA;
  Image out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(out.width * out.height);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    fail(ErrorKind::Io, "failed decoding PNG " + path.string());
  }
  return out;
}

}  // namespace canopy::render
