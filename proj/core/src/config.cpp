#include "canopy/config.hpp"

#include <set>

#include <toml.hpp>

#include "canopy/error.hpp"
#include "csv.hpp"

namespace canopy {

namespace fs = std::filesystem;

namespace {

toml::table parse_toml(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "config file not found: " + path.string());
  try {
    return toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    fail(ErrorKind::Validation, path.string() + ": " + std::string(e.description()));
  }
}

// Reads keys from one table and rejects any key it was not asked about, so
// typos surface instead of silently falling back to defaults.
class Section {
public:
  Section(const toml::table* tbl, std::string name, const fs::path& file)
      : tbl_(tbl), name_(std::move(name)), file_(file) {}

  ~Section() noexcept(false) {
    if (!tbl_ || std::uncaught_exceptions()) return;
    for (const auto& [k, v] : *tbl_) {
      const std::string key(k.str());
      if (!seen_.count(key) && !v.is_table())
        fail(ErrorKind::Validation, file_.string() + ": unknown key [" + name_ + "]." + key);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!tbl_) return;
    const auto* node = tbl_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!v) bad(key, "a boolean");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value<std::int64_t>();
      if (!v) bad(key, "an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (*v < 0) bad(key, "a non-negative integer");
      out = static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) bad(key, "a number");
      out = static_cast<T>(*v);
    } else {
      auto v = node->value<std::string>();
      if (!v) bad(key, "a string");
      out = *v;
    }
  }

  void path(const char* key, fs::path& out) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = resolve(s);
  }

  fs::path resolve(const std::string& s) const {
    fs::path p(s);
    return p.is_absolute() ? p : file_.parent_path() / p;
  }

  std::vector<std::string> strings(const char* key) {
    seen_.insert(key);
    std::vector<std::string> out;
    if (!tbl_) return out;
    const auto* arr = tbl_->get_as<toml::array>(key);
    if (!arr) {
      if (tbl_->get(key)) bad(key, "an array of strings");
      return out;
    }
    for (const auto& e : *arr) {
      auto v = e.value<std::string>();
      if (!v) bad(key, "an array of strings");
      out.push_back(*v);
    }
    return out;
  }

  std::vector<double> numbers(const char* key) {
    seen_.insert(key);
    std::vector<double> out;
    if (!tbl_) return out;
    const auto* arr = tbl_->get_as<toml::array>(key);
    if (!arr) {
      if (tbl_->get(key)) bad(key, "an array of numbers");
      return out;
    }
    for (const auto& e : *arr) {
      auto v = e.value<double>();
      if (!v) bad(key, "an array of numbers");
      out.push_back(*v);
    }
    return out;
  }

  const toml::array* array(const char* key) {
    seen_.insert(key);
    return tbl_ ? tbl_->get_as<toml::array>(key) : nullptr;
  }

  [[noreturn]] void bad(const char* key, const char* what) const {
    fail(ErrorKind::Validation, file_.string() + ": [" + name_ + "]." + key + " must be " + what);
  }

private:
  const toml::table* tbl_;
  std::string name_;
  const fs::path& file_;
  std::set<std::string> seen_;
};

void reject_unknown_sections(const toml::table& tbl, std::initializer_list<const char*> known,
                             const fs::path& file) {
  for (const auto& [k, v] : tbl) {
    const std::string key(k.str());
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return key == n; }))
      fail(ErrorKind::Validation, file.string() + ": unknown section or key '" + key + "'");
  }
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) fail(ErrorKind::Validation, std::string("[data].") + what + " is required");
  if (!fs::exists(p) && !fs::exists(geodata::cube_paths(p).data))
    fail(ErrorKind::Io, std::string("[data].") + what + " not found: " + p.string());
}

}  // namespace

void ExperimentConfig::validate(bool check_files) const {
  treetops.validate();
  fusion.validate();
  if (n_runs < 1) fail(ErrorKind::Validation, "n_runs must be at least 1");
  if (threads < 1) fail(ErrorKind::Validation, "threads must be at least 1");
  if (!(missing_as >= 0 && missing_as <= 1))
    fail(ErrorKind::Validation, "missing_as must lie in [0,1]");
  if (!(unlisted_affinity >= 0 && unlisted_affinity <= 1))
    fail(ErrorKind::Validation, "unlisted_affinity must lie in [0,1]");
  if (!(network.dropout >= 0 && network.dropout < 1) || network.batch_size < 1 ||
      network.epochs < 1 || !(network.lr > 0) || !(network.weight_decay >= 0))
    fail(ErrorKind::Validation, "invalid [network] hyperparameters");
  if (!check_files) return;
  require_file(data.hsi, "hsi");
  require_file(data.als, "als");
  require_file(data.chm, "chm");
  require_file(data.polygons, "polygons");
  require_file(data.classes, "classes");
  if (!data.splits.empty()) require_file(data.splits, "splits");
  if (!data.cohabitation.empty()) require_file(data.cohabitation, "cohabitation");
  if (!data.truth_map.empty()) require_file(data.truth_map, "truth_map");
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const auto tbl = parse_toml(path);
  reject_unknown_sections(tbl, {"data", "network", "treetops", "fusion", "experiment"}, path);
  ExperimentConfig c;
  {
    Section s(tbl["data"].as_table(), "data", path);
    s.path("hsi", c.data.hsi);
    s.path("als", c.data.als);
    s.path("chm", c.data.chm);
    s.path("polygons", c.data.polygons);
    s.path("splits", c.data.splits);
    s.path("classes", c.data.classes);
    s.path("cohabitation", c.data.cohabitation);
    s.path("truth_map", c.data.truth_map);
  }
  {
    Section s(tbl["network"].as_table(), "network", path);
    s.get("dropout", c.network.dropout);
    s.get("batch_size", c.network.batch_size);
    s.get("epochs", c.network.epochs);
    s.get("lr", c.network.lr);
    s.get("weight_decay", c.network.weight_decay);
  }
  {
    Section s(tbl["treetops"].as_table(), "treetops", path);
    s.get("clip_lo", c.treetops.clip_lo);
    s.get("clip_hi", c.treetops.clip_hi);
    s.get("sigma", c.treetops.sigma);
    s.get("window", c.treetops.window);
    s.get("h_min", c.treetops.h_min);
  }
  {
    Section s(tbl["fusion"].as_table(), "fusion", path);
    s.get("r_min", c.fusion.r_min);
    s.get("r_max", c.fusion.r_max);
    s.get("epsilon", c.fusion.epsilon);
    s.get("tau", c.fusion.tau);
    s.get("expand_n", c.fusion.expand_n);
    s.get("delta_scale", c.fusion.delta_scale);
    s.get("gsd", c.fusion.gsd);
    s.get("missing_as", c.missing_as);
    s.get("unlisted_affinity", c.unlisted_affinity);
  }
  {
    Section s(tbl["experiment"].as_table(), "experiment", path);
    s.get("n_runs", c.n_runs);
    s.get("base_seed", c.base_seed);
    s.get("threads", c.threads);
    s.get("render_maps", c.render_maps);
  }
  c.validate(false);
  return c;
}

synth::SceneConfig load_scene_config(const fs::path& path) {
  const auto tbl = parse_toml(path);
  reject_unknown_sections(tbl, {"scene"}, path);
  const auto* scene = tbl["scene"].as_table();
  if (!scene) fail(ErrorKind::Validation, path.string() + ": missing [scene] table");

  synth::SceneConfig c;
  Section s(scene, "scene", path);
  std::string preset;
  s.get("preset", preset);
  if (preset == "benchmark") {
    c = synth::benchmark_scene_config();
  } else if (!preset.empty()) {
    fail(ErrorKind::Validation, path.string() + ": unknown preset '" + preset + "'");
  }
  s.get("width", c.width);
  s.get("height", c.height);
  s.get("n_trees", c.n_trees);
  if (auto sp = s.strings("species"); !sp.empty()) c.species = sp;
  if (auto r = s.numbers("crown_radius"); !r.empty()) {
    if (r.size() != 2) s.bad("crown_radius", "a [min, max] pair");
    c.crown_radius_min = r[0];
    c.crown_radius_max = r[1];
  }
  if (auto r = s.numbers("height_range"); !r.empty()) {
    if (r.size() != 2) s.bad("height_range", "a [min, max] pair");
    c.height_min = r[0];
    c.height_max = r[1];
  }
  s.get("spectral_bands", c.spectral_bands);
  s.get("als_bands", c.als_bands);
  s.get("noise_sigma", c.noise_sigma);
  s.get("als_noise_sigma", c.als_noise_sigma);
  s.get("brightness_sigma", c.brightness_sigma);
  s.get("label_fraction", c.label_fraction);
  s.get("polygon_radius_scale", c.polygon_radius_scale);
  s.get("background_polygons", c.background_polygons);
  s.get("min_spacing", c.min_spacing);
  s.get("neighbor_radius", c.neighbor_radius);
  s.get("max_attempts", c.max_attempts);
  s.get("seed", c.seed);

  fs::path cohab_file;
  s.path("cohabitation", cohab_file);
  const auto* inline_matrix = s.array("cohabitation_matrix");
  if (!cohab_file.empty() && inline_matrix)
    fail(ErrorKind::Validation, path.string() + ": give either cohabitation or cohabitation_matrix");
  if (!cohab_file.empty()) {
    c.gt_cohab = cohab::parse_matrix_csv(csv::read_file(cohab_file));
  } else if (inline_matrix) {
    c.gt_cohab.species = c.species;
    c.gt_cohab.values.clear();
    for (const auto& row : *inline_matrix) {
      const auto* r = row.as_array();
      if (!r || r->size() != c.species.size())
        s.bad("cohabitation_matrix", "a square array matching the species list");
      for (const auto& v : *r) {
        auto d = v.value<double>();
        if (!d) s.bad("cohabitation_matrix", "numeric");
        c.gt_cohab.values.push_back(*d);
      }
    }
    if (c.gt_cohab.values.size() != c.species.size() * c.species.size())
      s.bad("cohabitation_matrix", "a square array matching the species list");
  } else if (c.gt_cohab.species != c.species) {
    c.gt_cohab = cohab::CohabitationMatrix::identity(c.species);
  }

  if (const auto* split = (*scene)["split"].as_table()) {
    Section sp(split, "scene.split", path);
    sp.get("train", c.split.train);
    sp.get("validation", c.split.validation);
    sp.get("test", c.split.test);
  }
  c.validate();
  return c;
}

}  // namespace canopy
