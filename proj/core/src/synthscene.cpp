#include "canopy/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "canopy/error.hpp"
#include "csv.hpp"

namespace canopy::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kMaxAlsFeatures = 8;

struct Rng {
  std::mt19937_64 engine;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  double normal(double mean, double sd) {
    return sd > 0 ? std::normal_distribution<double>(mean, sd)(engine) : mean;
  }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine); }
};

// Smooth random reflectance curve: a base level plus a few broad bumps.
std::vector<double> random_signature(Rng& rng, int bands) {
  const double base = rng.uniform(0.12, 0.35);
  struct Bump { double centre, width, amp; };
  std::vector<Bump> bumps(3);
  for (auto& b : bumps)
    b = {rng.uniform(0, bands - 1), rng.uniform(bands / 6.0 + 0.5, bands / 3.0 + 1.0),
         rng.uniform(-0.08, 0.2)};
  std::vector<double> sig(bands);
  for (int i = 0; i < bands; ++i) {
    double v = base;
    for (const auto& b : bumps) v += b.amp * std::exp(-0.5 * std::pow((i - b.centre) / b.width, 2));
    sig[i] = std::clamp(v, 0.01, 1.0);
  }
  return sig;
}

double crown_shape(double d2, double radius) {
  const double s = radius / 2.0;
  return std::exp(-d2 / (2 * s * s));
}

double coverage(double d2, double radius) {
  if (d2 > 2.25 * radius * radius) return 0.0;
  const double s = 0.6 * radius;
  return std::exp(-d2 / (2 * s * s));
}

struct Window {
  long x0, x1, y0, y1;
};

Window bbox(const Tree& t, double reach, std::size_t w, std::size_t h) {
  return {std::max(0L, static_cast<long>(std::floor(t.x - reach))),
          std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(t.x + reach))),
          std::max(0L, static_cast<long>(std::floor(t.y - reach))),
          std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(t.y + reach)))};
}

// chm, mean3, std3, max3, min3, mean5, std5, max5
std::vector<double> structural_features(const std::vector<double>& chm, std::size_t w,
                                        std::size_t h, std::size_t x, std::size_t y) {
  auto stats = [&](int half) {
    double sum = 0, sq = 0, mx = -1e300, mn = 1e300;
    int n = 0;
    for (long yy = static_cast<long>(y) - half; yy <= static_cast<long>(y) + half; ++yy)
      for (long xx = static_cast<long>(x) - half; xx <= static_cast<long>(x) + half; ++xx) {
        if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h)) continue;
        const double v = chm[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
        sum += v;
        sq += v * v;
        mx = std::max(mx, v);
        mn = std::min(mn, v);
        ++n;
      }
    const double mean = sum / n;
    return std::array<double, 4>{mean, std::sqrt(std::max(0.0, sq / n - mean * mean)), mx, mn};
  };
  const auto s3 = stats(1);
  const auto s5 = stats(2);
  return {chm[y * w + x], s3[0], s3[1], s3[2], s3[3], s5[0], s5[1], s5[2]};
}

}  // namespace

void SceneConfig::validate() const {
  if (width < 8 || height < 8) fail(ErrorKind::Validation, "scene must be at least 8x8 pixels");
  if (n_trees < 1) fail(ErrorKind::Validation, "n_trees must be positive");
  if (species.empty()) fail(ErrorKind::Validation, "scene needs at least one species");
  if (!(crown_radius_min > 0 && crown_radius_min <= crown_radius_max))
    fail(ErrorKind::Validation, "crown radius range is empty or non-positive");
  if (!(height_min >= kGroundHeight && height_min <= height_max && height_max <= 40.0))
    fail(ErrorKind::Validation, "height range must be non-empty and lie within [5,40]");
  if (2 * crown_radius_max >= static_cast<double>(std::min(width, height)))
    fail(ErrorKind::Validation, "crowns do not fit inside the scene");
  if (spectral_bands < 1) fail(ErrorKind::Validation, "spectral_bands must be positive");
  if (als_bands < 1 || als_bands > kMaxAlsFeatures)
    fail(ErrorKind::Validation, "als_bands must lie in [1," + std::to_string(kMaxAlsFeatures) + "]");
  if (!(noise_sigma >= 0 && als_noise_sigma >= 0 && brightness_sigma >= 0))
    fail(ErrorKind::Validation, "noise levels must be non-negative");
  if (!(label_fraction > 0 && label_fraction <= 1))
    fail(ErrorKind::Validation, "label_fraction must lie in (0,1]");
  if (!(polygon_radius_scale > 0 && polygon_radius_scale <= 1.5))
    fail(ErrorKind::Validation, "polygon_radius_scale must lie in (0,1.5]");
  if (!(min_spacing >= 0) || !(neighbor_radius > 0) || max_attempts < 1)
    fail(ErrorKind::Validation, "invalid placement parameters");
  if (gt_cohab.species != species)
    fail(ErrorKind::Validation, "gt_cohab species must match the scene species in order");
  gt_cohab.validate();
  if (gt_cohab.has_missing())
    fail(ErrorKind::Validation, "gt_cohab must not contain -1 sentinels");
}

Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng{std::mt19937_64(cfg.seed)};
  const std::size_t W = cfg.width, H = cfg.height, K = cfg.species.size();
  const int B = cfg.spectral_bands;

  std::vector<double> species_radius(K), species_height(K);
  for (std::size_t s = 0; s < K; ++s) {
    species_radius[s] = rng.uniform(cfg.crown_radius_min, cfg.crown_radius_max);
    species_height[s] = rng.uniform(cfg.height_min, cfg.height_max);
  }
  std::vector<std::vector<double>> signature(K);
  for (auto& sig : signature) sig = random_signature(rng, B);
  const auto ground = random_signature(rng, B);

  Scene scene;
  auto& gt = scene.truth;
  gt.classes = cfg.species;
  gt.classes.emplace_back(kBackgroundClass);
  const int background = static_cast<int>(K);

  // Sequential placement.
  const double margin = cfg.crown_radius_max;
  const double spacing2 = cfg.min_spacing * cfg.min_spacing;
  const double nb2 = cfg.neighbor_radius * cfg.neighbor_radius;
  std::vector<double> weights(K);
  for (int i = 0; i < cfg.n_trees; ++i) {
    Tree t;
    bool placed = false;
    for (int a = 0; a < cfg.max_attempts && !placed; ++a) {
      t.x = rng.uniform(margin, static_cast<double>(W - 1) - margin);
      t.y = rng.uniform(margin, static_cast<double>(H - 1) - margin);
      placed = std::none_of(gt.trees.begin(), gt.trees.end(), [&](const Tree& o) {
        return (o.x - t.x) * (o.x - t.x) + (o.y - t.y) * (o.y - t.y) < spacing2;
      });
    }
    if (!placed)
      fail(ErrorKind::Validation, "placed only " + std::to_string(i) + " of " +
                                      std::to_string(cfg.n_trees) + " trees with min_spacing " +
                                      csv::format_double(cfg.min_spacing) + " after " +
                                      std::to_string(cfg.max_attempts) + " attempts");
    std::fill(weights.begin(), weights.end(), 0.0);
    for (const auto& o : gt.trees)
      if ((o.x - t.x) * (o.x - t.x) + (o.y - t.y) * (o.y - t.y) <= nb2)
        for (std::size_t s = 0; s < K; ++s)
          weights[s] += cfg.gt_cohab.at(static_cast<std::size_t>(o.species), s);
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0)) {
      std::fill(weights.begin(), weights.end(), 1.0);
      total = static_cast<double>(K);
    }
    double u = rng.uniform(0, total);
    t.species = static_cast<int>(K) - 1;
    for (std::size_t s = 0; s < K; ++s) {
      if (u < weights[s]) {
        t.species = static_cast<int>(s);
        break;
      }
      u -= weights[s];
    }
    const auto s = static_cast<std::size_t>(t.species);
    t.radius = std::clamp(rng.normal(species_radius[s], 0.1 * (cfg.crown_radius_max - cfg.crown_radius_min)),
                          cfg.crown_radius_min, cfg.crown_radius_max);
    t.height = std::clamp(rng.normal(species_height[s], 0.1 * (cfg.height_max - cfg.height_min)),
                          cfg.height_min, cfg.height_max);
    gt.trees.push_back(t);
  }

  struct Look { double brightness, tilt; };
  std::vector<Look> look(gt.trees.size());
  for (auto& l : look) l = {rng.normal(1.0, cfg.brightness_sigma), rng.normal(0.0, cfg.brightness_sigma)};

  // Canopy height and dominant cover.
  std::vector<double> chm(W * H, kGroundHeight);
  std::vector<double> best_shape(W * H, 0.0);
  gt.class_map.width = W;
  gt.class_map.height = H;
  gt.class_map.labels.assign(W * H, background);
  gt.class_map.polygon_ids.assign(W * H, -1);
  for (const auto& t : gt.trees) {
    const auto box = bbox(t, 3 * t.radius, W, H);
    for (long y = box.y0; y <= box.y1; ++y)
      for (long x = box.x0; x <= box.x1; ++x) {
        const double d2 = (x - t.x) * (x - t.x) + (y - t.y) * (y - t.y);
        const double g = crown_shape(d2, t.radius);
        const std::size_t p = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
        chm[p] = std::max(chm[p], kGroundHeight + (t.height - kGroundHeight) * g);
        if (d2 <= t.radius * t.radius && g > best_shape[p]) {
          best_shape[p] = g;
          gt.class_map.labels[p] = t.species;
        }
      }
  }

  // Spectra: coverage-weighted mix of crowns and ground.
  std::vector<double> mix(W * H * static_cast<std::size_t>(B), 0.0);
  std::vector<double> cover(W * H, 0.0);
  for (std::size_t i = 0; i < gt.trees.size(); ++i) {
    const auto& t = gt.trees[i];
    const auto& sig = signature[static_cast<std::size_t>(t.species)];
    const auto box = bbox(t, 1.5 * t.radius, W, H);
    for (long y = box.y0; y <= box.y1; ++y)
      for (long x = box.x0; x <= box.x1; ++x) {
        const double c = coverage((x - t.x) * (x - t.x) + (y - t.y) * (y - t.y), t.radius);
        if (c <= 0) continue;
        const std::size_t p = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
        cover[p] += c;
        for (int b = 0; b < B; ++b) {
          const double shape = 1.0 + look[i].tilt * (B > 1 ? b / (B - 1.0) - 0.5 : 0.0);
          mix[p * B + b] += c * sig[b] * look[i].brightness * shape;
        }
      }
  }
  scene.hsi = geodata::RasterCube::filled(W, H, static_cast<std::size_t>(B));
  scene.hsi.name = "hsi";
  for (std::size_t p = 0; p < W * H; ++p) {
    const double scale = cover[p] > 1.0 ? 1.0 / cover[p] : 1.0;
    const double ground_w = std::max(0.0, 1.0 - cover[p]);
    for (int b = 0; b < B; ++b) {
      const double v = mix[p * B + b] * scale + ground_w * ground[b] + rng.normal(0, cfg.noise_sigma);
      scene.hsi.values[static_cast<std::size_t>(b) * W * H + p] = static_cast<float>(v);
    }
  }

  scene.chm = geodata::RasterCube::filled(W, H, 1);
  scene.chm.name = "chm";
  for (std::size_t p = 0; p < W * H; ++p) scene.chm.values[p] = static_cast<float>(chm[p]);

  scene.als = geodata::RasterCube::filled(W, H, static_cast<std::size_t>(cfg.als_bands));
  scene.als.name = "als";
  static const char* kAlsNames[kMaxAlsFeatures] = {"chm",  "mean3", "std3", "max3",
                                                   "min3", "mean5", "std5", "max5"};
  scene.als.band_names.assign(kAlsNames, kAlsNames + cfg.als_bands);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto f = structural_features(chm, W, H, x, y);
      for (int b = 0; b < cfg.als_bands; ++b)
        scene.als.at(x, y, static_cast<std::size_t>(b)) =
            static_cast<float>(f[static_cast<std::size_t>(b)] + rng.normal(0, cfg.als_noise_sigma));
    }

  // Labelled subset: circle polygons on a random selection of trees.
  const auto n_label = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(cfg.label_fraction * static_cast<double>(gt.trees.size()))));
  std::vector<std::size_t> order(gt.trees.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine);
  order.resize(std::min(n_label, order.size()));
  std::sort(order.begin(), order.end());
  std::int64_t next_id = 1;
  for (auto i : order) {
    auto& t = gt.trees[i];
    t.polygon_id = next_id++;
    gt.polygons.push_back({t.x, t.y, cfg.polygon_radius_scale * t.radius, t.species, t.polygon_id});
  }

  // Background polygons in canopy gaps.
  const int n_bg = cfg.background_polygons >= 0
                       ? cfg.background_polygons
                       : static_cast<int>(std::lround(static_cast<double>(n_label) / K));
  const double bg_radius = cfg.polygon_radius_scale * cfg.crown_radius_min;
  std::vector<std::pair<double, double>> bg_centres;
  for (int a = 0; a < cfg.max_attempts && static_cast<int>(bg_centres.size()) < n_bg; ++a) {
    const double cx = rng.uniform(bg_radius, static_cast<double>(W - 1) - bg_radius);
    const double cy = rng.uniform(bg_radius, static_cast<double>(H - 1) - bg_radius);
    bool clear = std::none_of(bg_centres.begin(), bg_centres.end(), [&](const auto& c) {
      return std::hypot(c.first - cx, c.second - cy) < 2 * bg_radius + 1;
    });
    const long reach = static_cast<long>(std::ceil(bg_radius + 1));
    for (long y = std::lround(cy) - reach; clear && y <= std::lround(cy) + reach; ++y)
      for (long x = std::lround(cx) - reach; clear && x <= std::lround(cx) + reach; ++x) {
        if (x < 0 || y < 0 || x >= static_cast<long>(W) || y >= static_cast<long>(H)) continue;
        if (std::hypot(x - cx, y - cy) > bg_radius + 1) continue;
        clear = gt.class_map.labels[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] ==
                background;
      }
    if (!clear) continue;
    bg_centres.emplace_back(cx, cy);
    gt.polygons.push_back({cx, cy, bg_radius, background, next_id++});
  }

  gt.splits = geodata::split_by_polygon(gt.polygons, cfg.split, cfg.seed);
  return scene;
}

EmpiricalCohabitation measure_empirical_cohabitation(const GroundTruth& gt, double radius) {
  const std::size_t K = gt.classes.empty() ? 0 : gt.classes.size() - 1;
  EmpiricalCohabitation e;
  e.species.assign(gt.classes.begin(), gt.classes.begin() + static_cast<long>(K));
  e.values.assign(K * K, 0.0);
  if (gt.trees.size() < 2) fail(ErrorKind::Validation, "need at least two trees");
  std::vector<double> observed(K * K, 0.0);
  std::vector<double> freq(K, 0.0);
  for (const auto& t : gt.trees) freq[static_cast<std::size_t>(t.species)] += 1;
  for (auto& f : freq) f /= static_cast<double>(gt.trees.size());
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < gt.trees.size(); ++i)
    for (std::size_t j = i + 1; j < gt.trees.size(); ++j) {
      const auto& a = gt.trees[i];
      const auto& b = gt.trees[j];
      if ((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) > r2) continue;
      const auto sa = static_cast<std::size_t>(a.species), sb = static_cast<std::size_t>(b.species);
      observed[std::min(sa, sb) * K + std::max(sa, sb)] += 1;
      ++e.pairs;
    }
  if (e.pairs == 0) return e;
  const double P = static_cast<double>(e.pairs);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = a; b < K; ++b) {
      const double expected = P * (a == b ? freq[a] * freq[a] : 2 * freq[a] * freq[b]);
      const double v = expected > 0 ? observed[a * K + b] / expected : 0.0;
      e.values[a * K + b] = v;
      e.values[b * K + a] = v;
    }
  return e;
}

SceneConfig benchmark_scene_config(std::uint64_t seed) {
  SceneConfig c;
  c.species = {"Pinus", "Picea", "Betula", "Alnus", "Quercus", "Tilia"};
  c.gt_cohab.species = c.species;
  c.gt_cohab.values = {
      1.00, 0.85, 0.20, 0.05, 0.30, 0.10,  //
      0.85, 1.00, 0.25, 0.10, 0.15, 0.20,  //
      0.20, 0.25, 1.00, 0.80, 0.20, 0.10,  //
      0.05, 0.10, 0.80, 1.00, 0.05, 0.15,  //
      0.30, 0.15, 0.20, 0.05, 1.00, 0.75,  //
      0.10, 0.20, 0.10, 0.15, 0.75, 1.00,
  };
  // Noisier than the defaults so a single labelled crown per class is not
  // enough and extra pseudo-labelled crowns have something to add.
  c.noise_sigma = 0.03;
  c.brightness_sigma = 0.3;
  c.als_noise_sigma = 1.0;
  c.seed = seed;
  return c;
}

void write_scene(const Scene& scene, const SceneConfig& cfg, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  geodata::save_cube(scene.hsi, dir / "hsi");
  geodata::save_cube(scene.als, dir / "als");
  geodata::save_cube(scene.chm, dir / "chm");
  geodata::save_cube(geodata::label_raster_to_cube(scene.truth.class_map), dir / "class_map");
  geodata::write_polygons_csv(scene.truth.polygons, dir / "polygons.csv");
  geodata::write_splits_csv(scene.truth.splits, dir / "splits.csv");
  geodata::write_class_list(scene.truth.classes, dir / "classes.txt");
  csv::write_file(dir / "cohabitation.csv", cohab::serialize_matrix_csv(cfg.gt_cohab));

  nlohmann::ordered_json j;
  j["schema"] = "canopy.ground_truth/1";
  j["seed"] = cfg.seed;
  j["width"] = cfg.width;
  j["height"] = cfg.height;
  j["classes"] = scene.truth.classes;
  nlohmann::ordered_json trees = nlohmann::ordered_json::array();
  for (const auto& t : scene.truth.trees)
    trees.push_back({{"x", t.x},
                     {"y", t.y},
                     {"species", scene.truth.classes[static_cast<std::size_t>(t.species)]},
                     {"radius", t.radius},
                     {"height", t.height},
                     {"polygon_id", t.polygon_id}});
  j["trees"] = trees;
  j["polygons"] = scene.truth.polygons.size();
  j["split_warnings"] = scene.truth.splits.warnings;
  csv::write_file(dir / "ground_truth.json", j.dump(2) + "\n");
}

}  // namespace canopy::synth
