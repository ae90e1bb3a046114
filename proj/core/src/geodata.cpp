#include "canopy/geodata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "canopy/error.hpp"
#include "csv.hpp"

namespace canopy::geodata {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void swap_if_big_endian(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
      v = std::bit_cast<float>(bits);
    }
  }
}

}  // namespace

RasterCube RasterCube::filled(std::size_t width, std::size_t height, std::size_t bands,
                              float value) {
  RasterCube c;
  c.width = width;
  c.height = height;
  c.bands = bands;
  c.values.assign(width * height * bands, value);
  return c;
}

bool RasterCube::is_nodata(float v) const noexcept {
  if (std::isnan(nodata)) return std::isnan(v);
  return v == nodata;
}

bool RasterCube::pixel_is_nodata(std::size_t x, std::size_t y) const noexcept {
  for (std::size_t b = 0; b < bands; ++b)
    if (is_nodata(at(x, y, b))) return true;
  return false;
}

std::vector<float> RasterCube::pixel(std::size_t x, std::size_t y) const {
  std::vector<float> out(bands);
  for (std::size_t b = 0; b < bands; ++b) out[b] = at(x, y, b);
  return out;
}

void RasterCube::validate() const {
  if (values.size() != width * height * bands)
    fail(ErrorKind::Validation, "cube '" + name + "': " + std::to_string(values.size()) +
                                    " values for " + std::to_string(width) + "x" +
                                    std::to_string(height) + "x" + std::to_string(bands));
  if (!band_names.empty() && band_names.size() != bands)
    fail(ErrorKind::Validation, "cube '" + name + "': band_names length differs from bands");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) && !is_nodata(values[i]))
      fail(ErrorKind::Validation,
           "cube '" + name + "': non-finite value at flat index " + std::to_string(i));
  }
}

CubePaths cube_paths(const fs::path& path) {
  fs::path stem = path;
  auto ext = path.extension();
  if (ext == ".f32" || ext == ".json") stem.replace_extension();
  fs::path data = stem, header = stem;
  data += ".f32";
  header += ".json";
  return {data, header};
}

RasterCube load_cube(const fs::path& path) {
  auto paths = cube_paths(path);
  json hdr;
  try {
    hdr = json::parse(csv::read_file(paths.header));
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, paths.header.string() + ": " + e.what());
  }

  auto dtype = hdr.value("dtype", std::string("f32"));
  auto layout = hdr.value("layout", std::string("bsq"));
  if (dtype != "f32")
    fail(ErrorKind::Unsupported, paths.header.string() + ": unsupported dtype '" + dtype + "'");
  if (layout != "bsq")
    fail(ErrorKind::Unsupported, paths.header.string() + ": unsupported layout '" + layout + "'");

  RasterCube cube;
  try {
    cube.width = hdr.at("width").get<std::size_t>();
    cube.height = hdr.at("height").get<std::size_t>();
    cube.bands = hdr.at("bands").get<std::size_t>();
    cube.name = hdr.value("name", paths.data.stem().string());
    if (hdr.contains("band_names")) cube.band_names = hdr["band_names"].get<std::vector<std::string>>();
    if (hdr.contains("nodata")) {
      const auto& nd = hdr["nodata"];
      if (nd.is_number())
        cube.nodata = nd.get<float>();
      else if (!nd.is_null() && !(nd.is_string() && (nd == "nan" || nd == "NaN")))
        fail(ErrorKind::Validation, paths.header.string() + ": bad nodata value");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, paths.header.string() + ": " + e.what());
  }

  const std::uintmax_t expected = cube.width * cube.height * cube.bands * sizeof(float);
  std::error_code ec;
  const std::uintmax_t actual = fs::file_size(paths.data, ec);
  if (ec) fail(ErrorKind::Io, "cannot stat " + paths.data.string() + ": " + ec.message());
  if (actual != expected)
    fail(ErrorKind::Validation, paths.data.string() + ": size mismatch, expected " +
                                    std::to_string(expected) + " bytes, found " +
                                    std::to_string(actual));

  cube.values.resize(cube.width * cube.height * cube.bands);
  std::ifstream in(paths.data, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + paths.data.string());
  in.read(reinterpret_cast<char*>(cube.values.data()), static_cast<std::streamsize>(expected));
  if (!in && expected > 0) fail(ErrorKind::Io, "short read from " + paths.data.string());
  swap_if_big_endian(cube.values);
  return cube;
}

void save_cube(const RasterCube& cube, const fs::path& path) {
  cube.validate();
  auto paths = cube_paths(path);
  if (paths.data.has_parent_path()) fs::create_directories(paths.data.parent_path());

  json hdr;
  hdr["width"] = cube.width;
  hdr["height"] = cube.height;
  hdr["bands"] = cube.bands;
  hdr["dtype"] = "f32";
  hdr["layout"] = "bsq";
  hdr["byte_order"] = "little";
  hdr["name"] = cube.name;
  if (std::isnan(cube.nodata))
    hdr["nodata"] = "nan";
  else
    hdr["nodata"] = cube.nodata;
  hdr["band_names"] = cube.band_names;
  csv::write_file(paths.header, hdr.dump(2) + "\n");

  std::ofstream out(paths.data, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + paths.data.string());
  if constexpr (std::endian::native == std::endian::big) {
    auto copy = cube.values;
    swap_if_big_endian(copy);
    out.write(reinterpret_cast<const char*>(copy.data()),
              static_cast<std::streamsize>(copy.size() * sizeof(float)));
  } else {
    out.write(reinterpret_cast<const char*>(cube.values.data()),
              static_cast<std::streamsize>(cube.values.size() * sizeof(float)));
  }
  if (!out) fail(ErrorKind::Io, "short write to " + paths.data.string());
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "validation" || s == "val") return Split::Validation;
  if (s == "test") return Split::Test;
  fail(ErrorKind::Validation, "unknown split '" + std::string(s) + "'");
}

std::vector<PolygonLabel> read_polygons_csv(const fs::path& path) {
  auto t = csv::read_table(path);
  const auto src = path.string();
  auto cid = t.column("polygon_id", src), cx = t.column("center_x", src),
       cy = t.column("center_y", src), cr = t.column("radius", src), cl = t.column("label", src);
  std::vector<PolygonLabel> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    PolygonLabel p;
    p.polygon_id = csv::to_int(r[cid], src);
    p.center_x = csv::to_double(r[cx], src);
    p.center_y = csv::to_double(r[cy], src);
    p.radius = csv::to_double(r[cr], src);
    p.label = static_cast<int>(csv::to_int(r[cl], src));
    if (!(p.radius > 0))
      fail(ErrorKind::Validation, src + ": polygon " + std::to_string(p.polygon_id) +
                                      " has non-positive radius");
    out.push_back(p);
  }
  return out;
}

void write_polygons_csv(std::span<const PolygonLabel> polygons, const fs::path& path) {
  std::string s = "polygon_id,center_x,center_y,radius,label\n";
  for (const auto& p : polygons) {
    s += std::to_string(p.polygon_id) + "," + csv::format_double(p.center_x) + "," +
         csv::format_double(p.center_y) + "," + csv::format_double(p.radius) + "," +
         std::to_string(p.label) + "\n";
  }
  csv::write_file(path, s);
}

LabelRaster rasterize_polygons(std::span<const PolygonLabel> polygons, std::size_t width,
                               std::size_t height) {
  LabelRaster out;
  out.width = width;
  out.height = height;
  out.labels.assign(width * height, LabelRaster::kUnlabeled);
  out.polygon_ids.assign(width * height, -1);

  std::vector<const PolygonLabel*> order;
  order.reserve(polygons.size());
  for (const auto& p : polygons) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->polygon_id < b->polygon_id; });

  // Paint in ascending id order; a pixel keeps the first polygon that claims it.
  for (const auto* p : order) {
    const double r2 = p->radius * p->radius;
    const auto x0 = static_cast<long>(std::max(0.0, std::ceil(p->center_x - p->radius)));
    const auto y0 = static_cast<long>(std::max(0.0, std::ceil(p->center_y - p->radius)));
    const auto x1 = std::min(static_cast<long>(width) - 1,
                             static_cast<long>(std::floor(p->center_x + p->radius)));
    const auto y1 = std::min(static_cast<long>(height) - 1,
                             static_cast<long>(std::floor(p->center_y + p->radius)));
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - p->center_x;
        const double dy = static_cast<double>(y) - p->center_y;
        if (dx * dx + dy * dy > r2) continue;
        const auto i = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
        if (out.polygon_ids[i] != -1) continue;
        out.labels[i] = p->label;
        out.polygon_ids[i] = p->polygon_id;
      }
    }
  }
  return out;
}

RasterCube label_raster_to_cube(const LabelRaster& raster) {
  auto cube = RasterCube::filled(raster.width, raster.height, 1);
  for (std::size_t i = 0; i < raster.labels.size(); ++i)
    cube.values[i] = raster.labels[i] == LabelRaster::kUnlabeled
                         ? std::numeric_limits<float>::quiet_NaN()
                         : static_cast<float>(raster.labels[i]);
  cube.name = "labels";
  return cube;
}

LabelRaster label_raster_from_cube(const RasterCube& cube) {
  if (cube.bands != 1)
    fail(ErrorKind::Validation, "label raster '" + cube.name + "' must have exactly one band");
  LabelRaster r;
  r.width = cube.width;
  r.height = cube.height;
  r.labels.resize(cube.plane_size());
  r.polygon_ids.assign(cube.plane_size(), -1);
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    const float v = cube.values[i];
    if (cube.is_nodata(v) || std::isnan(v) || v < 0) {
      r.labels[i] = LabelRaster::kUnlabeled;
    } else {
      if (v != std::floor(v))
        fail(ErrorKind::Validation, "label raster '" + cube.name + "' holds non-integer value");
      r.labels[i] = static_cast<std::int32_t>(v);
    }
  }
  return r;
}

Split SplitAssignment::of(std::int64_t polygon_id) const {
  auto it = by_polygon.find(polygon_id);
  if (it == by_polygon.end())
    fail(ErrorKind::Validation, "polygon " + std::to_string(polygon_id) + " has no split");
  return it->second;
}

SplitAssignment split_by_polygon(std::span<const PolygonLabel> polygons, SplitFractions fractions,
                                 std::uint64_t seed) {
  const double f[3] = {fractions.train, fractions.validation, fractions.test};
  if (f[0] < 0 || f[1] < 0 || f[2] < 0 || std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9)
    fail(ErrorKind::Validation, "split fractions must be non-negative and sum to 1");

  std::map<int, std::vector<std::int64_t>> by_class;
  std::set<std::int64_t> seen;
  for (const auto& p : polygons) {
    if (!seen.insert(p.polygon_id).second)
      fail(ErrorKind::Validation, "duplicate polygon_id " + std::to_string(p.polygon_id));
    by_class[p.label].push_back(p.polygon_id);
  }

  SplitAssignment out;
  std::mt19937_64 rng(seed);
  for (auto& [label, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    const std::size_t n = ids.size();
    if (n < 3) {
      out.warnings.push_back("class " + std::to_string(label) + " has " + std::to_string(n) +
                             " polygon(s); all assigned to train");
      for (auto id : ids) out.by_polygon[id] = Split::Train;
      continue;
    }
    for (std::size_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng() % (i + 1));
      std::swap(ids[i], ids[j]);
    }
    // Largest remainder apportionment; ties favour train, then validation.
    std::size_t counts[3];
    double rem[3];
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
      const double exact = f[k] * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(std::floor(exact));
      rem[k] = exact - std::floor(exact);
      used += counts[k];
    }
    while (used < n) {
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (rem[k] > rem[best]) best = k;
      ++counts[best];
      rem[best] = -1.0;
      ++used;
    }
    std::size_t pos = 0;
    const Split order[3] = {Split::Train, Split::Validation, Split::Test};
    for (int k = 0; k < 3; ++k)
      for (std::size_t c = 0; c < counts[k]; ++c) out.by_polygon[ids[pos++]] = order[k];
  }
  return out;
}

void write_splits_csv(const SplitAssignment& splits, const fs::path& path) {
  std::string s = "polygon_id,split\n";
  for (const auto& [id, sp] : splits.by_polygon)
    s += std::to_string(id) + "," + std::string(to_string(sp)) + "\n";
  csv::write_file(path, s);
}

SplitAssignment read_splits_csv(const fs::path& path) {
  auto t = csv::read_table(path);
  const auto src = path.string();
  auto cid = t.column("polygon_id", src), cs = t.column("split", src);
  SplitAssignment out;
  for (const auto& r : t.rows) out.by_polygon[csv::to_int(r[cid], src)] = parse_split(r[cs]);
  return out;
}

std::vector<LabeledSample> extract_samples(const RasterCube& hsi, const RasterCube& als,
                                           const LabelRaster& labels,
                                           const SplitAssignment& splits) {
  if (hsi.width != als.width || hsi.height != als.height || hsi.width != labels.width ||
      hsi.height != labels.height)
    fail(ErrorKind::Validation, "HSI, ALS and label rasters are not co-registered");
  std::vector<LabeledSample> out;
  for (std::size_t y = 0; y < labels.height; ++y) {
    for (std::size_t x = 0; x < labels.width; ++x) {
      const auto i = y * labels.width + x;
      if (labels.labels[i] == LabelRaster::kUnlabeled) continue;
      if (hsi.pixel_is_nodata(x, y) || als.pixel_is_nodata(x, y)) continue;
      LabeledSample s;
      s.x = static_cast<int>(x);
      s.y = static_cast<int>(y);
      s.hsi = hsi.pixel(x, y);
      s.als = als.pixel(x, y);
      s.label = labels.labels[i];
      s.polygon_id = labels.polygon_ids[i];
      s.split = splits.of(s.polygon_id);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<float> Standardizer::apply(std::span<const float> v) const {
  std::vector<float> out(v.begin(), v.end());
  apply_inplace(out);
  return out;
}

void Standardizer::apply_inplace(std::span<float> v) const {
  if (v.size() != mean.size())
    fail(ErrorKind::Validation, "standardizer expects " + std::to_string(mean.size()) +
                                    " bands, got " + std::to_string(v.size()));
  for (std::size_t b = 0; b < v.size(); ++b)
    v[b] = stddev[b] == 0.0 ? 0.0f : static_cast<float>((v[b] - mean[b]) / stddev[b]);
}

Standardizer fit_standardizer(std::span<const LabeledSample> samples, Stream which) {
  if (samples.empty()) fail(ErrorKind::Validation, "cannot fit a standardizer on no samples");
  auto features = [which](const LabeledSample& s) -> const std::vector<float>& {
    return which == Stream::Hsi ? s.hsi : s.als;
  };
  const std::size_t bands = features(samples.front()).size();
  Standardizer st;
  st.mean.assign(bands, 0.0);
  st.stddev.assign(bands, 0.0);
  for (const auto& s : samples) {
    const auto& f = features(s);
    if (f.size() != bands) fail(ErrorKind::Validation, "inconsistent feature length in samples");
    for (std::size_t b = 0; b < bands; ++b) st.mean[b] += f[b];
  }
  const double n = static_cast<double>(samples.size());
  for (auto& m : st.mean) m /= n;
  for (const auto& s : samples) {
    const auto& f = features(s);
    for (std::size_t b = 0; b < bands; ++b) {
      const double d = f[b] - st.mean[b];
      st.stddev[b] += d * d;
    }
  }
  for (auto& sd : st.stddev) {
    sd = std::sqrt(sd / n);
    if (sd < 1e-12) sd = 0.0;
  }
  return st;
}

std::vector<std::string> read_class_list(const fs::path& path) {
  auto text = csv::read_file(path);
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = csv::trim(std::string_view(text).substr(pos, nl == std::string::npos ? text.size() - pos : nl - pos));
    if (!line.empty()) out.push_back(line);
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  if (out.empty()) fail(ErrorKind::Validation, path.string() + ": empty class list");
  return out;
}

void write_class_list(std::span<const std::string> classes, const fs::path& path) {
  std::string s;
  for (const auto& c : classes) s += c + "\n";
  csv::write_file(path, s);
}

SampleStore::SampleStore(std::vector<LabeledSample> samples) : samples_(std::move(samples)) {}

std::vector<LabeledSample> SampleStore::get(Split split, std::string_view stage) {
  log_.push_back({std::string(stage), split, evaluating_});
  std::vector<LabeledSample> out;
  for (const auto& s : samples_)
    if (s.split == split) out.push_back(s);
  return out;
}

std::size_t SampleStore::count(Split split) const noexcept {
  return static_cast<std::size_t>(std::count_if(
      samples_.begin(), samples_.end(), [split](const auto& s) { return s.split == split; }));
}

std::size_t SampleStore::premature_test_reads() const noexcept {
  return static_cast<std::size_t>(std::count_if(log_.begin(), log_.end(), [](const Access& a) {
    return a.split == Split::Test && !a.during_evaluation;
  }));
}

}  // namespace canopy::geodata
