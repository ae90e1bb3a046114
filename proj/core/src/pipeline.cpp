#include "canopy/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include <json.hpp>

#include "canopy/error.hpp"
#include "canopy/render.hpp"
#include "csv.hpp"
#include "metrics_json.hpp"

namespace canopy::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using pseudolabel::Coord;

namespace {

constexpr const char* kMetricsSchema = "canopy.metrics/1";
constexpr const char* kManifestSchema = "canopy.manifest/1";
constexpr const char* kComparisonSchema = "canopy.comparison/1";

template <typename Fn>
auto stage(int run, const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string where = run >= 0 ? "run " + std::to_string(run) + ", stage " : "stage ";
    throw Error(e.kind(), where + name + ": " + e.what());
  }
}

std::vector<int> argmax_rows(const std::vector<float>& probs, std::size_t classes) {
  std::vector<int> out(probs.size() / classes);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* row = probs.data() + i * classes;
    out[i] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

MethodResult evaluate(const dsnn::ModelState<float>& model, const dsnn::TrainingData& test,
                      const std::vector<std::string>& classes, int threads) {
  const auto probs = dsnn::predict_proba(model, test.features, threads);
  const auto pred = argmax_rows(probs, classes.size());
  MethodResult m;
  m.confusion = metrics::confusion(test.labels, pred, classes.size());
  m.confusion.labels = classes;
  m.report = metrics::report(m.confusion);
  return m;
}

dsnn::TrainingData concat(const dsnn::TrainingData& a, const dsnn::TrainingData& b) {
  dsnn::TrainingData out = a;
  if (b.size() == 0) return out;
  auto append = [](dsnn::Features<float>& dst, const dsnn::Features<float>& src) {
    dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
    dst.rows += src.rows;
  };
  append(out.features.hsi, b.features.hsi);
  append(out.features.als, b.features.als);
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

json aggregate_json(const std::vector<RunDetail>& runs, bool pseudo, std::size_t classes) {
  std::vector<double> macro, acc, bal;
  std::vector<std::vector<double>> f1(classes);
  for (const auto& r : runs) {
    const auto& rep = (pseudo ? r.pseudo : r.base).report;
    macro.push_back(rep.macro_f1);
    acc.push_back(rep.accuracy);
    bal.push_back(rep.balanced_accuracy);
    for (std::size_t k = 0; k < classes; ++k) f1[k].push_back(rep.per_class[k].f1);
  }
  auto ms = [](const std::vector<double>& v) {
    auto [m, s] = mean_std(v);
    return json{{"mean", m}, {"std", s}};
  };
  std::vector<double> f1_mean, f1_std;
  for (const auto& v : f1) {
    auto [m, s] = mean_std(v);
    f1_mean.push_back(m);
    f1_std.push_back(s);
  }
  return json{{"macro_f1", ms(macro)},
              {"accuracy", ms(acc)},
              {"balanced_accuracy", ms(bal)},
              {"per_class_f1", json{{"mean", f1_mean}, {"std", f1_std}}}};
}

json run_json(const RunDetail& r, const std::vector<std::string>& classes) {
  json j;
  j["run"] = r.run;
  j["seed"] = r.seed;
  j["augmented_pixels"] = r.augmented.size();
  j["pseudo_label_precision"] =
      r.pseudo_precision ? json(*r.pseudo_precision) : json(nullptr);
  j["methods"] = json{
      {kMethodBase, metrics::report_to_json(r.base.confusion, r.base.report, classes)},
      {kMethodPseudo, metrics::report_to_json(r.pseudo.confusion, r.pseudo.report, classes)}};
  return j;
}

json config_json(const ExperimentConfig& c) {
  const auto& n = c.network;
  return json{
      {"data",
       {{"hsi", c.data.hsi.string()},
        {"als", c.data.als.string()},
        {"chm", c.data.chm.string()},
        {"polygons", c.data.polygons.string()},
        {"splits", c.data.splits.string()},
        {"classes", c.data.classes.string()},
        {"cohabitation", c.data.cohabitation.string()},
        {"truth_map", c.data.truth_map.string()}}},
      {"network",
       {{"dropout", n.dropout},
        {"batch_size", n.batch_size},
        {"epochs", n.epochs},
        {"lr", n.lr},
        {"weight_decay", n.weight_decay}}},
      {"treetops",
       {{"clip_lo", c.treetops.clip_lo},
        {"clip_hi", c.treetops.clip_hi},
        {"sigma", c.treetops.sigma},
        {"window", c.treetops.window},
        {"h_min", c.treetops.h_min}}},
      {"fusion",
       {{"r_min", c.fusion.r_min},
        {"r_max", c.fusion.r_max},
        {"epsilon", c.fusion.epsilon},
        {"tau", c.fusion.tau},
        {"expand_n", c.fusion.expand_n},
        {"delta_scale", c.fusion.delta_scale},
        {"gsd", c.fusion.gsd},
        {"missing_as", c.missing_as},
        {"unlisted_affinity", c.unlisted_affinity}}},
      {"experiment",
       {{"n_runs", c.n_runs},
        {"base_seed", c.base_seed},
        {"threads", c.threads},
        {"render_maps", c.render_maps}}}};
}

json epoch_json(const dsnn::TrainResult& t) {
  if (t.history.empty()) return nullptr;
  const auto& e = t.history.back();
  return json{{"epochs", t.history.size()},
              {"final_train_loss", e.train_loss},
              {"final_val_loss", e.val_loss ? json(*e.val_loss) : json(nullptr)},
              {"final_val_macro_f1", e.val_macro_f1 ? json(*e.val_macro_f1) : json(nullptr)}};
}

void write_text(const fs::path& p, const std::string& s) { csv::write_file(p, s); }

json read_json(const fs::path& p) {
  try {
    return json::parse(csv::read_file(p));
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, p.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot hash " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::Io, "SHA-256 initialisation failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  d.hsi = geodata::load_cube(cfg.data.hsi);
  d.als = geodata::load_cube(cfg.data.als);
  d.chm = geodata::load_cube(cfg.data.chm);
  if (d.chm.bands != 1) fail(ErrorKind::Validation, "CHM must have exactly one band");
  for (const auto* c : {&d.als, &d.chm})
    if (c->width != d.hsi.width || c->height != d.hsi.height)
      fail(ErrorKind::Validation, "cubes are not co-registered: " + std::to_string(c->width) + "x" +
                                      std::to_string(c->height) + " vs " +
                                      std::to_string(d.hsi.width) + "x" +
                                      std::to_string(d.hsi.height));
  d.classes = geodata::read_class_list(cfg.data.classes);
  d.polygons = geodata::read_polygons_csv(cfg.data.polygons);
  for (const auto& p : d.polygons)
    if (p.label < 0 || static_cast<std::size_t>(p.label) >= d.classes.size())
      fail(ErrorKind::Validation, "polygon " + std::to_string(p.polygon_id) + " has label " +
                                      std::to_string(p.label) + " outside the class list");
  d.splits = cfg.data.splits.empty()
                 ? geodata::split_by_polygon(d.polygons, {}, cfg.base_seed)
                 : geodata::read_splits_csv(cfg.data.splits);
  for (const auto& p : d.polygons) d.splits.of(p.polygon_id);
  d.labels = geodata::rasterize_polygons(d.polygons, d.hsi.width, d.hsi.height);
  if (!cfg.data.truth_map.empty()) {
    d.truth = geodata::label_raster_from_cube(geodata::load_cube(cfg.data.truth_map));
    if (d.truth->width != d.hsi.width || d.truth->height != d.hsi.height)
      fail(ErrorKind::Validation, "truth map is not co-registered with the cubes");
  }
  return d;
}

cohab::ScaledPrior build_prior(const std::optional<cohab::CohabitationMatrix>& matrix,
                               const std::vector<std::string>& classes, double delta_scale,
                               double missing_as, double unlisted_affinity) {
  if (!matrix) return cohab::ScaledPrior::uniform(classes);
  matrix->validate();
  const auto resolved = cohab::resolve_missing(*matrix, missing_as);
  auto lookup = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < resolved.size(); ++i)
      if (resolved.species[i] == name) return i;
    return std::nullopt;
  };
  cohab::CohabitationMatrix full = cohab::CohabitationMatrix::identity(classes);
  const std::size_t n = classes.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto a = lookup(classes[i]), b = lookup(classes[j]);
      full.at(i, j) = a && b ? resolved.at(*a, *b) : unlisted_affinity;
    }
  full.validate();
  return cohab::row_normalize(cohab::scale_offdiagonal(full, delta_scale));
}

dsnn::Batch<float> pixel_features(const Dataset& data, std::span<const Coord> pixels,
                                  const geodata::Standardizer& hsi_std,
                                  const geodata::Standardizer& als_std) {
  dsnn::Batch<float> b;
  b.hsi.rows = b.als.rows = pixels.size();
  b.hsi.cols = data.hsi.bands;
  b.als.cols = data.als.bands;
  b.hsi.data.reserve(pixels.size() * b.hsi.cols);
  b.als.data.reserve(pixels.size() * b.als.cols);
  for (const auto& c : pixels) {
    const auto x = static_cast<std::size_t>(c.x), y = static_cast<std::size_t>(c.y);
    if (c.x < 0 || c.y < 0 || x >= data.hsi.width || y >= data.hsi.height)
      fail(ErrorKind::Validation, "pixel (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                                      ") is outside the raster");
    if (data.hsi.pixel_is_nodata(x, y) || data.als.pixel_is_nodata(x, y))
      fail(ErrorKind::Validation, "pixel (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                                      ") is nodata");
    const auto h = hsi_std.apply(data.hsi.pixel(x, y));
    const auto a = als_std.apply(data.als.pixel(x, y));
    b.hsi.data.insert(b.hsi.data.end(), h.begin(), h.end());
    b.als.data.insert(b.als.data.end(), a.begin(), a.end());
  }
  return b;
}

geodata::LabelRaster predict_map(const dsnn::ModelState<float>& model, const Dataset& data,
                                 const geodata::Standardizer& hsi_std,
                                 const geodata::Standardizer& als_std, int threads) {
  geodata::LabelRaster map;
  map.width = data.hsi.width;
  map.height = data.hsi.height;
  map.labels.assign(map.width * map.height, geodata::LabelRaster::kUnlabeled);
  map.polygon_ids.assign(map.labels.size(), -1);
  std::vector<Coord> valid;
  for (std::size_t y = 0; y < map.height; ++y)
    for (std::size_t x = 0; x < map.width; ++x)
      if (!data.hsi.pixel_is_nodata(x, y) && !data.als.pixel_is_nodata(x, y))
        valid.push_back({static_cast<int>(x), static_cast<int>(y)});
  if (valid.empty()) return map;
  const auto probs = dsnn::predict_proba(model, pixel_features(data, valid, hsi_std, als_std), threads);
  const auto pred = argmax_rows(probs, static_cast<std::size_t>(model.config.classes()));
  for (std::size_t i = 0; i < valid.size(); ++i)
    map.labels[static_cast<std::size_t>(valid[i].y) * map.width + static_cast<std::size_t>(valid[i].x)] =
        pred[i];
  return map;
}

double pseudo_label_precision(std::span<const pseudolabel::PseudoLabel> labels,
                              const geodata::LabelRaster& truth) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& l : labels)
    if (truth.at(static_cast<std::size_t>(l.x), static_cast<std::size_t>(l.y)) == l.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ExperimentResult run_two_pass(const ExperimentConfig& cfg, const fs::path& out_dir) {
  stage(-1, "config", [&] { cfg.validate(true); });
  const Dataset data = stage(-1, "load", [&] { return load_dataset(cfg); });
  const std::size_t C = data.classes.size();

  ExperimentResult result;
  result.prior = stage(-1, "prior", [&] {
    std::optional<cohab::CohabitationMatrix> m;
    if (!cfg.data.cohabitation.empty())
      m = cohab::parse_matrix_csv(csv::read_file(cfg.data.cohabitation));
    return build_prior(m, data.classes, cfg.fusion.delta_scale, cfg.missing_as,
                       cfg.unlisted_affinity);
  });

  const auto samples = stage(-1, "samples", [&] {
    return geodata::extract_samples(data.hsi, data.als, data.labels, data.splits);
  });

  const auto treetops = stage(-1, "treetops", [&] {
    return treetop::detect_treetops(treetop::preprocess_chm(data.chm, cfg.treetops), cfg.treetops);
  });
  std::vector<Coord> candidate_px;
  for (const auto& t : treetops)
    if (!data.hsi.pixel_is_nodata(t.x, t.y) && !data.als.pixel_is_nodata(t.x, t.y))
      candidate_px.push_back({t.x, t.y});

  std::set<Coord> excluded;
  for (std::size_t y = 0; y < data.labels.height; ++y)
    for (std::size_t x = 0; x < data.labels.width; ++x)
      if (data.labels.at(x, y) != geodata::LabelRaster::kUnlabeled)
        excluded.insert({static_cast<int>(x), static_cast<int>(y)});

  dsnn::NetworkConfig net = dsnn::NetworkConfig::standard(
      static_cast<int>(data.hsi.bands), static_cast<int>(data.als.bands), static_cast<int>(C));
  net.dropout = cfg.network.dropout;
  net.batch_size = cfg.network.batch_size;
  net.epochs = cfg.network.epochs;
  net.lr = cfg.network.lr;
  net.weight_decay = cfg.network.weight_decay;

  const bool write = !out_dir.empty();
  if (write) {
    std::error_code ec;
    fs::create_directories(out_dir / "runs", ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
    treetop::write_candidates_csv(treetops, out_dir / "candidates.csv");
  }

  json runs_json = json::array();
  json manifest_runs = json::array();
  json methods = json::object();
  std::vector<std::string> outputs;
  if (write) outputs.push_back("candidates.csv");

  auto assemble = [&](const std::optional<std::string>& failure) {
    json metrics;
    metrics["schema"] = kMetricsSchema;
    metrics["classes"] = data.classes;
    metrics["runs"] = runs_json;
    if (!result.runs.empty())
      metrics["aggregate"] = json{{kMethodBase, aggregate_json(result.runs, false, C)},
                                  {kMethodPseudo, aggregate_json(result.runs, true, C)}};
    result.metrics_json = metrics.dump(2) + "\n";
    if (write) {
      write_text(out_dir / "metrics.json", result.metrics_json);
      if (std::find(outputs.begin(), outputs.end(), "metrics.json") == outputs.end())
        outputs.push_back("metrics.json");
    }

    json m;
    m["schema"] = kManifestSchema;
    m["config"] = config_json(cfg);
    m["classes"] = data.classes;
    std::vector<std::uint64_t> seeds;
    for (int r = 0; r < cfg.n_runs; ++r) seeds.push_back(cfg.base_seed + static_cast<std::uint64_t>(r));
    m["seeds"] = json{{"base", cfg.base_seed}, {"runs", seeds}};
    m["threads"] = cfg.threads;
    m["treetop_candidates"] = treetops.size();
    m["prior"] = json{{"classes", result.prior.species}, {"pi", result.prior.pi}};
    m["runs"] = manifest_runs;
    m["aggregate"] = metrics.contains("aggregate") ? metrics["aggregate"] : json(nullptr);
    m["methods"] = methods;
    json inputs = json::object();
    auto add_input = [&](const char* key, const fs::path& p) {
      if (p.empty()) return;
      const auto file = fs::exists(p) ? p : geodata::cube_paths(p).data;
      inputs[key] = json{{"path", file.string()}, {"sha256", sha256_file(file)}};
    };
    add_input("hsi", cfg.data.hsi);
    add_input("als", cfg.data.als);
    add_input("chm", cfg.data.chm);
    add_input("polygons", cfg.data.polygons);
    add_input("splits", cfg.data.splits);
    add_input("classes", cfg.data.classes);
    add_input("cohabitation", cfg.data.cohabitation);
    add_input("truth_map", cfg.data.truth_map);
    json outs = json::object();
    if (write)
      for (const auto& rel : outputs) outs[rel] = sha256_file(out_dir / rel);
    m["artifacts"] = json{{"inputs", inputs}, {"outputs", outs}};
    if (failure) m["failure"] = *failure;
    result.manifest_json = m.dump(2) + "\n";
    if (write) write_text(out_dir / "manifest.json", result.manifest_json);
  };

  try {
    for (int r = 0; r < cfg.n_runs; ++r) {
      RunDetail run;
      run.run = r;
      run.seed = cfg.base_seed + static_cast<std::uint64_t>(r);
      run.excluded = excluded;
      geodata::SampleStore store(samples);

      const auto train_s = store.get(geodata::Split::Train, "train");
      const auto val_s = store.get(geodata::Split::Validation, "train");
      if (train_s.empty()) fail(ErrorKind::Validation, "training split is empty");
      const auto hsi_std = geodata::fit_standardizer(train_s, geodata::Stream::Hsi);
      const auto als_std = geodata::fit_standardizer(train_s, geodata::Stream::Als);
      const auto train_data = dsnn::make_training_data(train_s, hsi_std, als_std);
      const auto val_data = dsnn::make_training_data(val_s, hsi_std, als_std);
      const auto* val_ptr = val_data.size() ? &val_data : nullptr;

      auto base = dsnn::init_model<float>(net, run.seed);
      const auto base_hist = stage(r, "train", [&] { return dsnn::train(base, train_data, val_ptr); });

      stage(r, "predict", [&] {
        if (candidate_px.empty()) return;
        const auto probs = dsnn::predict_proba(
            base, pixel_features(data, candidate_px, hsi_std, als_std), cfg.threads);
        for (std::size_t i = 0; i < candidate_px.size(); ++i)
          run.candidates.push_back({candidate_px[i].x, candidate_px[i].y,
                                    std::vector<double>(probs.begin() + static_cast<long>(i * C),
                                                        probs.begin() + static_cast<long>((i + 1) * C))});
      });

      for (const auto& s : train_s) run.parents.push_back({s.x, s.y, s.label});
      run.augmented = stage(r, "pseudolabel", [&] {
        pseudolabel::AugmentOptions opt;
        opt.width = data.hsi.width;
        opt.height = data.hsi.height;
        opt.shuffle_seed = run.seed;
        opt.threads = cfg.threads;
        return pseudolabel::build_augmented_set(run.candidates, run.parents, result.prior,
                                                cfg.fusion, excluded, opt);
      });
      if (data.truth) run.pseudo_precision = pseudo_label_precision(run.augmented, *data.truth);

      dsnn::TrainingData aug_data;
      {
        std::vector<Coord> px;
        for (const auto& p : run.augmented) {
          if (data.hsi.pixel_is_nodata(p.x, p.y) || data.als.pixel_is_nodata(p.x, p.y)) continue;
          px.push_back({p.x, p.y});
          aug_data.labels.push_back(p.label);
        }
        aug_data.features = pixel_features(data, px, hsi_std, als_std);
      }
      const auto combined = concat(train_data, aug_data);
      auto pseudo = dsnn::init_model<float>(net, run.seed);
      const auto pseudo_hist =
          stage(r, "retrain", [&] { return dsnn::train(pseudo, combined, val_ptr); });

      store.begin_evaluation();
      const auto test_s = store.get(geodata::Split::Test, "evaluate");
      stage(r, "evaluate", [&] {
        if (test_s.empty()) fail(ErrorKind::Validation, "test split is empty");
        const auto test = dsnn::make_training_data(test_s, hsi_std, als_std);
        run.base = evaluate(base, test, data.classes, cfg.threads);
        run.pseudo = evaluate(pseudo, test, data.classes, cfg.threads);
      });

      json extra;
      if (write) {
        const fs::path rel = fs::path("runs") / ("run_" + std::to_string(r));
        fs::create_directories(out_dir / rel);
        pseudolabel::write_augmented_csv(run.augmented, out_dir / rel / "augmented.csv");
        dsnn::save_checkpoint({base, hsi_std, als_std, data.classes}, out_dir / rel / "dsnn.ckpt");
        dsnn::save_checkpoint({pseudo, hsi_std, als_std, data.classes}, out_dir / rel / "dsnn_p.ckpt");
        for (const char* f : {"augmented.csv", "dsnn.ckpt", "dsnn_p.ckpt"})
          outputs.push_back((rel / f).generic_string());

        if (r == 0 && cfg.render_maps) {
          stage(r, "render", [&] {
            fs::create_directories(out_dir / "maps");
            for (auto [name, model, stem] :
                 {std::tuple{kMethodBase, &base, "dsnn"}, std::tuple{kMethodPseudo, &pseudo, "dsnn_p"}}) {
              const auto map = predict_map(*model, data, hsi_std, als_std, cfg.threads);
              const fs::path cube_rel = fs::path("maps") / (std::string(stem) + ".f32");
              const fs::path png_rel = fs::path("maps") / (std::string(stem) + ".png");
              geodata::save_cube(geodata::label_raster_to_cube(map), out_dir / cube_rel);
              render::write_png(render::render_class_map(map, C), out_dir / png_rel);
              outputs.push_back(cube_rel.generic_string());
              outputs.push_back((fs::path("maps") / (std::string(stem) + ".json")).generic_string());
              outputs.push_back(png_rel.generic_string());
              methods[name] = json{{"map", cube_rel.generic_string()},
                                   {"png", png_rel.generic_string()},
                                   {"class_area_fractions", metrics::class_area_fractions(map, C)}};
            }
          });
        }
      }

      runs_json.push_back(run_json(run, data.classes));
      json mr = run_json(run, data.classes);
      mr["training"] = json{{kMethodBase, epoch_json(base_hist)}, {kMethodPseudo, epoch_json(pseudo_hist)}};
      json audit = json::array();
      for (const auto& a : store.audit_log())
        audit.push_back(json{{"stage", a.stage},
                             {"split", std::string(geodata::to_string(a.split))},
                             {"during_evaluation", a.during_evaluation}});
      mr["audit"] = audit;
      mr["premature_test_reads"] = store.premature_test_reads();
      manifest_runs.push_back(mr);
      result.runs.push_back(std::move(run));
    }
  } catch (const Error& e) {
    if (write) assemble(std::string(e.what()));
    throw;
  }
  assemble(std::nullopt);
  return result;
}

std::string compare_runs(const fs::path& manifest_a, const std::string& method_a,
                         const fs::path& manifest_b, const std::string& method_b) {
  const auto a = read_json(manifest_a);
  const auto b = read_json(manifest_b);
  try {
    if (a.at("classes") != b.at("classes"))
      fail(ErrorKind::Validation, "manifests have different class lists");
    const auto classes = a.at("classes").get<std::vector<std::string>>();
    auto agg = [](const json& m, const std::string& method, const fs::path& p) -> const json& {
      const auto& ag = m.at("aggregate");
      if (ag.is_null() || !ag.contains(method))
        fail(ErrorKind::Validation, p.string() + " has no aggregate for method '" + method + "'");
      return ag.at(method);
    };
    const auto& ga = agg(a, method_a, manifest_a);
    const auto& gb = agg(b, method_b, manifest_b);

    json out;
    out["schema"] = kComparisonSchema;
    out["a"] = json{{"manifest", manifest_a.string()}, {"method", method_a}};
    out["b"] = json{{"manifest", manifest_b.string()}, {"method", method_b}};
    out["classes"] = classes;
    const auto fa = ga.at("per_class_f1").at("mean").get<std::vector<double>>();
    const auto fb = gb.at("per_class_f1").at("mean").get<std::vector<double>>();
    std::vector<double> f1_delta(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) f1_delta[k] = fb.at(k) - fa.at(k);
    out["per_class_f1_delta"] = f1_delta;

    const double ma = ga.at("macro_f1").at("mean"), mb = gb.at("macro_f1").at("mean");
    json macro{{"a", ga.at("macro_f1")}, {"b", gb.at("macro_f1")}, {"delta", mb - ma},
               {"delta_points", 100.0 * (mb - ma)}};
    const auto& ra = a.at("runs");
    const auto& rb = b.at("runs");
    if (ra.size() == rb.size() && !ra.empty()) {
      std::vector<double> diffs;
      for (std::size_t i = 0; i < ra.size(); ++i)
        diffs.push_back(rb[i].at("methods").at(method_b).at("macro_f1").get<double>() -
                        ra[i].at("methods").at(method_a).at("macro_f1").get<double>());
      macro["paired_delta_std"] = mean_std(diffs).second;
    } else {
      macro["paired_delta_std"] = nullptr;
    }
    out["macro_f1"] = macro;

    const json* ma_info = a.contains("methods") && a["methods"].contains(method_a) ? &a["methods"][method_a] : nullptr;
    const json* mb_info = b.contains("methods") && b["methods"].contains(method_b) ? &b["methods"][method_b] : nullptr;
    if (ma_info && mb_info) {
      const auto map_a = geodata::label_raster_from_cube(
          geodata::load_cube(manifest_a.parent_path() / ma_info->at("map").get<std::string>()));
      const auto map_b = geodata::label_raster_from_cube(
          geodata::load_cube(manifest_b.parent_path() / mb_info->at("map").get<std::string>()));
      out["jaccard"] = metrics::jaccard_maps(map_a, map_b);
      const auto ca = metrics::class_area_fractions(map_a, classes.size());
      const auto cb = metrics::class_area_fractions(map_b, classes.size());
      std::vector<double> d(classes.size());
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = cb[k] - ca[k];
      out["class_area_delta_points"] = d;
    } else {
      out["jaccard"] = nullptr;
      out["class_area_delta_points"] = nullptr;
    }
    return out.dump(2) + "\n";
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace canopy::pipeline
