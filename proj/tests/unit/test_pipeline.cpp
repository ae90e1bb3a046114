#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "canopy/config.hpp"
#include "canopy/error.hpp"
#include "canopy/pipeline.hpp"
#include "canopy/render.hpp"
#include "canopy/synthscene.hpp"
#include "support/scratch.hpp"

using namespace canopy;
using namespace canopy::pipeline;
using canopy::testing::ScratchDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Validation;
}

// Small scene on disk plus an experiment config pointing at it.
ExperimentConfig small_experiment(const fs::path& dir) {
  auto sc = synth::benchmark_scene_config(3);
  sc.width = sc.height = 48;
  sc.n_trees = 90;
  sc.min_spacing = 3.5;
  sc.label_fraction = 0.3;
  synth::write_scene(synth::generate_scene(sc), sc, dir);
  ExperimentConfig c;
  c.data.hsi = dir / "hsi";
  c.data.als = dir / "als";
  c.data.chm = dir / "chm";
  c.data.polygons = dir / "polygons.csv";
  c.data.splits = dir / "splits.csv";
  c.data.classes = dir / "classes.txt";
  c.data.cohabitation = dir / "cohabitation.csv";
  c.data.truth_map = dir / "class_map";
  c.network.epochs = 3;
  c.network.batch_size = 32;
  c.network.lr = 1e-3;
  c.fusion.tau = 0.5;
  c.n_runs = 2;
  return c;
}

json manifest_with(double macro_mean, const std::string& map_rel) {
  json ag{{"macro_f1", {{"mean", macro_mean}, {"std", 0.01}}},
          {"accuracy", {{"mean", 0.8}, {"std", 0.0}}},
          {"balanced_accuracy", {{"mean", 0.8}, {"std", 0.0}}},
          {"per_class_f1", {{"mean", {macro_mean, macro_mean}}, {"std", {0.0, 0.0}}}}};
  json m;
  m["classes"] = {"a", "b"};
  m["aggregate"] = {{kMethodBase, ag}, {kMethodPseudo, ag}};
  m["runs"] = json::array({{{"methods", {{kMethodBase, {{"macro_f1", macro_mean}}},
                                         {kMethodPseudo, {{"macro_f1", macro_mean}}}}}}});
  if (!map_rel.empty()) m["methods"] = {{kMethodBase, {{"map", map_rel}}}, {kMethodPseudo, {{"map", map_rel}}}};
  return m;
}

}  // namespace

TEST_CASE("experiment config parsing") {
  ScratchDir dir("cfg");
  write_text(dir / "exp.toml",
             "[data]\nhsi = \"scene/hsi\"\nals = \"scene/als\"\nchm = \"scene/chm\"\n"
             "polygons = \"scene/p.csv\"\nclasses = \"scene/c.txt\"\n"
             "[network]\nepochs = 7\nlr = 0.01\n[fusion]\ntau = 0.95\nexpand_n = 2\n"
             "[experiment]\nn_runs = 3\nbase_seed = 10\nthreads = 2\nrender_maps = false\n");
  const auto c = load_experiment_config(dir / "exp.toml");
  CHECK(c.data.hsi == dir / "scene/hsi");
  CHECK(c.data.splits.empty());
  CHECK(c.network.epochs == 7);
  CHECK(c.network.lr == 0.01);
  CHECK(c.network.batch_size == dsnn::NetworkConfig{}.batch_size);
  CHECK(c.fusion.tau == 0.95);
  CHECK(c.fusion.expand_n == 2);
  CHECK(c.n_runs == 3);
  CHECK(c.base_seed == 10);
  CHECK_FALSE(c.render_maps);
  c.validate(false);
  CHECK(kind_of([&] { c.validate(true); }) == ErrorKind::Io);

  write_text(dir / "typo.toml", "[network]\nepoch = 7\n");
  try {
    load_experiment_config(dir / "typo.toml");
    FAIL("expected an unknown-key error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
  write_text(dir / "section.toml", "[netwrok]\nepochs = 7\n");
  CHECK(kind_of([&] { load_experiment_config(dir / "section.toml"); }) == ErrorKind::Validation);
  write_text(dir / "type.toml", "[network]\nepochs = \"many\"\n");
  CHECK(kind_of([&] { load_experiment_config(dir / "type.toml"); }) == ErrorKind::Validation);
  write_text(dir / "syntax.toml", "[network\n");
  CHECK(kind_of([&] { load_experiment_config(dir / "syntax.toml"); }) == ErrorKind::Validation);
  CHECK(kind_of([&] { load_experiment_config(dir / "absent.toml"); }) == ErrorKind::Io);

  ExperimentConfig bad;
  bad.n_runs = 0;
  CHECK_THROWS_AS(bad.validate(false), Error);
}

TEST_CASE("scene config parsing") {
  ScratchDir dir("scfg");
  write_text(dir / "s.toml", "[scene]\npreset = \"benchmark\"\nseed = 11\nn_trees = 50\n");
  const auto c = load_scene_config(dir / "s.toml");
  CHECK(c.seed == 11);
  CHECK(c.n_trees == 50);
  CHECK(c.species == synth::benchmark_scene_config().species);

  write_text(dir / "m.toml",
             "[scene]\nspecies = [\"a\", \"b\"]\ncohabitation_matrix = [[1, 0.3], [0.3, 1]]\n"
             "crown_radius = [2.0, 3.0]\n");
  const auto m = load_scene_config(dir / "m.toml");
  CHECK(m.gt_cohab.at(0, 1) == 0.3);
  CHECK(m.crown_radius_max == 3.0);
  write_text(dir / "bad.toml", "[scene]\npreset = \"jungle\"\n");
  CHECK_THROWS_AS(load_scene_config(dir / "bad.toml"), Error);
}

TEST_CASE("build_prior") {
  auto m = cohab::CohabitationMatrix::identity({"a", "b"});
  m.at(0, 1) = m.at(1, 0) = 0.8;
  const std::vector<std::string> classes{"a", "b", "Background"};
  const auto p = build_prior(m, classes, 0.75, 0.0, 0.5);
  CHECK(p.species == classes);
  CHECK(p.at(0, 1) == doctest::Approx(0.6 / 1.975));
  CHECK(p.at(0, 2) == doctest::Approx(0.375 / 1.975));
  CHECK(p.at(2, 2) == doctest::Approx(1 / 1.75));
  p.validate();

  m.at(0, 1) = m.at(1, 0) = cohab::kMissing;
  const auto q = build_prior(m, {"a", "b"}, 1.0, 0.25, 0.5);
  CHECK(q.at(0, 1) == doctest::Approx(0.25 / 1.25));

  const auto u = build_prior(std::nullopt, classes, 0.75, 0, 0.5);
  CHECK(u.at(1, 2) == doctest::Approx(1.0 / 3));
}

TEST_CASE("class map rendering") {
  geodata::LabelRaster map;
  map.width = 4;
  map.height = 3;
  map.labels = {0, 0, 1, -1, 2, 2, 1, -1, 0, 1, 2, -1};
  map.polygon_ids.assign(12, -1);
  const auto pal = render::default_palette();
  CHECK(pal.size() == 16);
  const auto img = render::render_class_map(map, 3);
  CHECK(img.width >= 4);
  CHECK(img.height > 3);
  CHECK(img.at(0, 0) == pal[0]);
  CHECK(img.at(2, 0) == pal[1]);
  CHECK(img.at(3, 0).a == 0);

  ScratchDir dir("png");
  render::write_png(img, dir / "m.png");
  const auto back = render::read_png(dir / "m.png");
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);

  CHECK_THROWS_AS(render::render_class_map(map, 2), Error);
  CHECK_THROWS_AS(render::render_class_map(map, 17), Error);
  write_text(dir / "fake.png", "not a png");
  CHECK_THROWS_AS(render::read_png(dir / "fake.png"), Error);
}

TEST_CASE("aggregation helpers") {
  const std::vector<double> v{1, 2, 3, 4};
  const auto [m, s] = mean_std(v);
  CHECK(m == 2.5);
  CHECK(s == doctest::Approx(1.2909944487));
  const std::vector<double> one{0.7};
  CHECK(mean_std(one) == std::pair{0.7, 0.0});

  ScratchDir dir("sha");
  write_text(dir / "abc", "abc");
  CHECK(sha256_file(dir / "abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  geodata::LabelRaster truth;
  truth.width = 3;
  truth.height = 1;
  truth.labels = {0, 1, 2};
  std::vector<pseudolabel::PseudoLabel> pl{{0, 0, 0, 1, 0, false}, {1, 0, 0, 1, 0, true}};
  CHECK(pseudo_label_precision(pl, truth) == 0.5);
}

TEST_CASE("compare_runs") {
  ScratchDir dir("cmp");
  geodata::LabelRaster map;
  map.width = 2;
  map.height = 2;
  map.labels = {0, 1, 1, -1};
  map.polygon_ids.assign(4, -1);
  geodata::save_cube(geodata::label_raster_to_cube(map), dir / "map");
  write_text(dir / "a.json", manifest_with(0.7742, "map").dump());
  write_text(dir / "b.json", manifest_with(0.7938, "map").dump());

  const auto j = json::parse(compare_runs(dir / "a.json", kMethodBase, dir / "b.json", kMethodPseudo));
  CHECK(j["macro_f1"]["delta_points"].get<double>() == doctest::Approx(1.96));
  CHECK(j["per_class_f1_delta"][0].get<double>() == doctest::Approx(0.0196));
  CHECK(j["jaccard"].get<double>() == 1.0);

  const auto self = json::parse(compare_runs(dir / "a.json", kMethodBase, dir / "a.json", kMethodBase));
  CHECK(self["macro_f1"]["delta"].get<double>() == 0.0);
  CHECK(self["jaccard"].get<double>() == 1.0);
  for (const auto& d : self["class_area_delta_points"]) CHECK(d.get<double>() == 0.0);

  CHECK_THROWS_AS(compare_runs(dir / "a.json", "SVM", dir / "b.json", kMethodBase), Error);
  write_text(dir / "broken.json", "{\"classes\": [\"a\", \"b\"]}");
  CHECK_THROWS_AS(compare_runs(dir / "a.json", kMethodBase, dir / "broken.json", kMethodBase), Error);
  auto other = manifest_with(0.5, "");
  other["classes"] = {"x", "y"};
  write_text(dir / "c.json", other.dump());
  CHECK_THROWS_AS(compare_runs(dir / "a.json", kMethodBase, dir / "c.json", kMethodBase), Error);
}

TEST_CASE("two-pass run on a small scene") {
  ScratchDir dir("run");
  auto cfg = small_experiment(dir / "scene");
  const auto result = run_two_pass(cfg, dir / "out");
  REQUIRE(result.runs.size() == 2);
  for (const char* f : {"metrics.json", "manifest.json", "candidates.csv", "runs/run_0/augmented.csv",
                        "runs/run_1/dsnn_p.ckpt", "maps/dsnn.png", "maps/dsnn_p.f32"})
    CHECK_MESSAGE(fs::exists(dir / "out" / f), f);
  CHECK(slurp(dir / "out" / "metrics.json") == result.metrics_json);

  const auto manifest = json::parse(result.manifest_json);
  CHECK(manifest["seeds"]["runs"] == json::array({0, 1}));
  for (const auto& r : manifest["runs"]) {
    CHECK(r["premature_test_reads"] == 0);
    bool saw_test = false;
    for (const auto& a : r["audit"])
      if (a["split"] == "test") {
        saw_test = true;
        CHECK(a["during_evaluation"] == true);
      }
    CHECK(saw_test);
  }
  CHECK(manifest["artifacts"]["outputs"].contains("metrics.json"));
  CHECK(manifest["artifacts"]["inputs"]["hsi"]["sha256"].get<std::string>().size() == 64);

  for (const auto& run : result.runs) {
    CHECK_FALSE(run.candidates.empty());
    for (const auto& p : run.augmented) {
      CHECK(run.excluded.count({p.x, p.y}) == 0);
      CHECK(p.confidence > cfg.fusion.tau);
    }
    REQUIRE(run.pseudo_precision.has_value());
    CHECK(*run.pseudo_precision >= 0);
  }

  // same config, same bytes
  const auto again = run_two_pass(cfg, {});
  CHECK(again.metrics_json == result.metrics_json);

  // nothing clears tau = 1, so the second pass repeats the first
  cfg.fusion.tau = 1.0;
  cfg.n_runs = 1;
  const auto none = run_two_pass(cfg, {});
  CHECK(none.runs[0].augmented.empty());
  CHECK(none.runs[0].pseudo.confusion.counts == none.runs[0].base.confusion.counts);
}

TEST_CASE("a failing stage names itself") {
  ScratchDir dir("fail");
  auto cfg = small_experiment(dir / "scene");
  cfg.data.hsi = dir / "scene" / "missing";
  CHECK(kind_of([&] { run_two_pass(cfg, dir / "out"); }) == ErrorKind::Io);

  cfg = small_experiment(dir / "scene");
  cfg.data.classes = dir / "classes_short.txt";
  write_text(cfg.data.classes, "Pinus\nPicea\n");
  try {
    run_two_pass(cfg, dir / "out2");
    FAIL("expected a failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("stage load") != std::string::npos);
  }
}
