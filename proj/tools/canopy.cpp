// canopy: command line front end for the tree species pipeline.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "canopy/cohabitation.hpp"
#include "canopy/config.hpp"
#include "canopy/dsnn.hpp"
#include "canopy/error.hpp"
#include "canopy/geodata.hpp"
#include "canopy/llm_client.hpp"
#include "canopy/metrics.hpp"
#include "canopy/pipeline.hpp"
#include "canopy/pseudolabel.hpp"
#include "canopy/render.hpp"
#include "canopy/synthscene.hpp"
#include "canopy/treetop.hpp"

namespace fs = std::filesystem;
using namespace canopy;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing " + p.string());
}

// Output path: explicit flag, else a default name under --out-dir.
fs::path output(const std::string& flag, const Globals& g, const char* fallback) {
  if (!flag.empty()) return flag;
  if (g.out_dir.empty()) fail(ErrorKind::Validation, "give --out or --out-dir");
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / fallback;
}

// A scene directory as written by `synth`; fills whatever [data] left empty.
void use_data_dir(DataPaths& d, const fs::path& dir) {
  auto fill = [&](fs::path& p, const char* name, bool optional) {
    if (!p.empty()) return;
    const auto candidate = dir / name;
    if (!optional || fs::exists(candidate) || fs::exists(geodata::cube_paths(candidate).data))
      p = candidate;
  };
  fill(d.hsi, "hsi", false);
  fill(d.als, "als", false);
  fill(d.chm, "chm", false);
  fill(d.polygons, "polygons.csv", false);
  fill(d.classes, "classes.txt", false);
  fill(d.splits, "splits.csv", true);
  fill(d.cohabitation, "cohabitation.csv", true);
  fill(d.truth_map, "class_map", true);
}

ExperimentConfig experiment_config(const Globals& g, const std::string& data_dir = {}) {
  if (g.config.empty() && data_dir.empty())
    fail(ErrorKind::Validation, "give --config or --data");
  auto cfg = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (!data_dir.empty()) {
    cfg.data = {};
    use_data_dir(cfg.data, data_dir);
  }
  if (g.seed) cfg.base_seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  return cfg;
}

std::vector<std::string> species_arg(const std::vector<std::string>& list, const std::string& file) {
  if (!file.empty()) return geodata::read_class_list(file);
  if (list.empty()) fail(ErrorKind::Validation, "give --species or --species-file");
  return list;
}

void add_fusion_flags(CLI::App* c, pseudolabel::FusionConfig& f) {
  c->add_option("--r-min,--rmin", f.r_min, "Full-weight radius (m)");
  c->add_option("--r-max,--rmax", f.r_max, "Parent reach (m)");
  c->add_option("--epsilon,--eps", f.epsilon, "Weight floor");
  c->add_option("--tau", f.tau, "Confidence threshold");
  c->add_option("--expand-n,--expand", f.expand_n, "Block half-width (px)");
  c->add_option("--gsd", f.gsd, "Metres per pixel");
}

void add_treetop_flags(CLI::App* c, treetop::TreetopConfig& t) {
  c->add_option("--clip-lo", t.clip_lo, "Lower clamp (m)");
  c->add_option("--clip-hi", t.clip_hi, "Upper clamp (m)");
  c->add_option("--sigma", t.sigma, "Gaussian sigma (px)");
  c->add_option("--window", t.window, "Local maximum window (px, odd)");
  c->add_option("--h-min,--hmin", t.h_min, "Minimum treetop height (m)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"canopy: cohabitation-aware tree species mapping"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "TOML configuration file");
  app.add_option("--seed", g.seed, "Base seed override");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  std::string synth_out;
  bool synth_benchmark = false;
  synth->add_option("--out", synth_out, "Scene directory");
  synth->add_flag("--benchmark", synth_benchmark, "Use the benchmark scene without a config");
  synth->callback([&] {
    auto cfg = synth_benchmark || g.config.empty() ? synth::benchmark_scene_config()
                                                   : load_scene_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    const fs::path dir = synth_out.empty() ? fs::path(g.out_dir) : fs::path(synth_out);
    if (dir.empty()) fail(ErrorKind::Validation, "give --out or --out-dir");
    const auto scene = synth::generate_scene(cfg);
    synth::write_scene(scene, cfg, dir);
    std::cout << "wrote " << scene.truth.trees.size() << " trees, " << scene.truth.polygons.size()
              << " polygons to " << dir.string() << "\n";
  });

  // treetops
  auto* tt = app.add_subcommand("treetops", "Detect treetop candidates in a CHM");
  std::string tt_chm, tt_out;
  treetop::TreetopConfig tt_cfg;
  tt->add_option("--chm", tt_chm, "CHM cube")->required();
  tt->add_option("--out", tt_out, "Candidates CSV");
  add_treetop_flags(tt, tt_cfg);
  tt->callback([&] {
    auto cfg = tt_cfg;
    if (!g.config.empty()) {
      auto base = load_experiment_config(g.config).treetops;
      // explicit flags win over the file
      for (auto [flag, dst, src] :
           {std::tuple{"--clip-lo", &base.clip_lo, tt_cfg.clip_lo},
            std::tuple{"--clip-hi", &base.clip_hi, tt_cfg.clip_hi},
            std::tuple{"--sigma", &base.sigma, tt_cfg.sigma},
            std::tuple{"--h-min", &base.h_min, tt_cfg.h_min}})
        if (tt->count(flag)) *dst = src;
      if (tt->count("--window")) base.window = tt_cfg.window;
      cfg = base;
    }
    const auto chm = geodata::load_cube(tt_chm);
    const auto found = treetop::detect_treetops(treetop::preprocess_chm(chm, cfg), cfg);
    const auto out = output(tt_out, g, "candidates.csv");
    treetop::write_candidates_csv(found, out);
    std::cout << found.size() << " candidates -> " << out.string() << "\n";
  });

  // cohab
  auto* cohab_cmd = app.add_subcommand("cohab", "Cohabitation matrix tools");
  cohab_cmd->require_subcommand(1);
  cohab::PromptParams prompt;
  std::vector<std::string> species_list;
  std::string species_file;
  auto add_prompt_flags = [&](CLI::App* c) {
    c->add_option("--species", species_list, "Species names");
    c->add_option("--species-file", species_file, "One species per line");
    c->add_option("--min-sources", prompt.min_sources_per_pair, "Minimum sources per pair");
    c->add_option("--max-sources", prompt.max_sources_per_pair, "Maximum sources per pair");
    c->add_option("--distance", prompt.distance_m, "Cohabitation distance (m)");
    c->add_option("--region", prompt.region, "Geographic region");
    c->add_option("--info", prompt.additional_info, "Additional information");
  };
  auto* rp = cohab_cmd->add_subcommand("render-prompt", "Print the LLM prompt");
  std::string rp_out;
  add_prompt_flags(rp);
  rp->add_option("--out", rp_out, "Write the prompt here instead of stdout");
  rp->callback([&] {
    prompt.species = species_arg(species_list, species_file);
    prompt.validate();
    const auto text = cohab::render_prompt(prompt);
    if (rp_out.empty())
      std::cout << text;
    else
      spill(rp_out, text);
  });

  auto* fetch = cohab_cmd->add_subcommand("fetch", "Query the LLM for a cohabitation matrix");
  std::string fetch_llm, fetch_out, fetch_raw;
  add_prompt_flags(fetch);
  fetch->add_option("--llm-config", fetch_llm, "TOML with an [llm] table")->required();
  fetch->add_option("--out", fetch_out, "Matrix CSV");
  fetch->add_option("--raw-out", fetch_raw, "Raw reply");
  fetch->callback([&] {
    prompt.species = species_arg(species_list, species_file);
    prompt.validate();
    const auto ep = cohab::load_endpoint_config(fetch_llm);
    const auto out = output(fetch_out, g, "cohabitation.csv");
    const fs::path raw = fetch_raw.empty() ? fs::path(out).replace_extension(".reply.txt") : fs::path(fetch_raw);
    const auto res = cohab::fetch_matrix(prompt, ep, raw);
    for (const auto& line : res.retry_log) std::cerr << "retry: " << line << "\n";
    spill(out, cohab::serialize_matrix_csv(res.matrix));
    std::cout << "matrix for " << res.matrix.size() << " species -> " << out.string() << "\n";
  });

  auto* val = cohab_cmd->add_subcommand("validate", "Check a cohabitation matrix");
  std::string val_matrix;
  val->add_option("--matrix", val_matrix, "Matrix CSV")->required();
  val->callback([&] {
    const auto m = cohab::parse_matrix_csv(slurp(val_matrix));
    std::cout << "ok: " << m.size() << " species" << (m.has_missing() ? ", has -1 entries" : "")
              << "\n";
  });

  auto* ad = cohab_cmd->add_subcommand("apply-deltas", "Apply expert corrections");
  std::string ad_matrix, ad_deltas, ad_out;
  ad->add_option("--matrix", ad_matrix, "Matrix CSV")->required();
  ad->add_option("--deltas", ad_deltas, "species_i,species_j,delta CSV")->required();
  ad->add_option("--out", ad_out, "Corrected matrix CSV");
  ad->callback([&] {
    const auto m = cohab::parse_matrix_csv(slurp(ad_matrix));
    const auto d = cohab::parse_deltas_csv(slurp(ad_deltas));
    spill(output(ad_out, g, "cohabitation_corrected.csv"),
          cohab::serialize_matrix_csv(cohab::apply_expert_deltas(m, d)));
  });

  auto* pr = cohab_cmd->add_subcommand("prior", "Scale and row-normalize into a prior");
  std::string pr_matrix, pr_out, pr_classes;
  double pr_delta = 0.75, pr_missing = 0.0, pr_unlisted = 0.5;
  pr->add_option("--matrix", pr_matrix, "Matrix CSV")->required();
  pr->add_option("--classes", pr_classes, "Class list; extends the prior to every class");
  pr->add_option("--delta-scale", pr_delta, "Off-diagonal scale");
  pr->add_option("--missing-as", pr_missing, "Replacement for -1 entries");
  pr->add_option("--unlisted-affinity", pr_unlisted, "Entry for classes absent from the matrix");
  pr->add_option("--out", pr_out, "Prior CSV");
  pr->callback([&] {
    const auto m = cohab::parse_matrix_csv(slurp(pr_matrix));
    const auto classes = pr_classes.empty() ? m.species : geodata::read_class_list(pr_classes);
    const auto prior = pipeline::build_prior(m, classes, pr_delta, pr_missing, pr_unlisted);
    spill(output(pr_out, g, "prior.csv"), cohab::serialize_prior_csv(prior));
  });

  // train
  auto* tr = app.add_subcommand("train", "Train the classifier on the training split");
  std::string tr_out, tr_data;
  tr->add_option("--data", tr_data, "Scene directory (overrides [data])");
  tr->add_option("--out", tr_out, "Checkpoint path");
  tr->callback([&] {
    const auto cfg = experiment_config(g, tr_data);
    cfg.validate(true);
    const auto data = pipeline::load_dataset(cfg);
    geodata::SampleStore store(geodata::extract_samples(data.hsi, data.als, data.labels, data.splits));
    const auto train_s = store.get(geodata::Split::Train, "train");
    const auto val_s = store.get(geodata::Split::Validation, "train");
    if (train_s.empty()) fail(ErrorKind::Validation, "training split is empty");
    const auto hs = geodata::fit_standardizer(train_s, geodata::Stream::Hsi);
    const auto as = geodata::fit_standardizer(train_s, geodata::Stream::Als);
    const auto train_d = dsnn::make_training_data(train_s, hs, as);
    const auto val_d = dsnn::make_training_data(val_s, hs, as);
    auto net = dsnn::NetworkConfig::standard(static_cast<int>(data.hsi.bands),
                                             static_cast<int>(data.als.bands),
                                             static_cast<int>(data.classes.size()));
    net.dropout = cfg.network.dropout;
    net.batch_size = cfg.network.batch_size;
    net.epochs = cfg.network.epochs;
    net.lr = cfg.network.lr;
    net.weight_decay = cfg.network.weight_decay;
    auto model = dsnn::init_model<float>(net, cfg.base_seed);
    const auto hist = dsnn::train(model, train_d, val_d.size() ? &val_d : nullptr);
    const auto out = output(tr_out, g, "model.ckpt");
    dsnn::save_checkpoint({model, hs, as, data.classes}, out);
    const auto& last = hist.history.back();
    std::cout << "epochs " << hist.history.size() << ", train loss " << last.train_loss;
    if (last.val_macro_f1) std::cout << ", val macro F1 " << *last.val_macro_f1;
    std::cout << " -> " << out.string() << "\n";
  });

  // predict
  auto* pd = app.add_subcommand("predict", "Class probabilities or a class map");
  std::string pd_model, pd_hsi, pd_als, pd_pixels, pd_out;
  pd->add_option("--model", pd_model, "Checkpoint")->required();
  pd->add_option("--hsi", pd_hsi, "HSI cube")->required();
  pd->add_option("--als", pd_als, "ALS cube")->required();
  pd->add_option("--pixels", pd_pixels, "x,y CSV; probabilities for these pixels only");
  pd->add_option("--out", pd_out, "Output cube");
  pd->callback([&] {
    const auto ck = dsnn::load_checkpoint(pd_model);
    if (!ck.hsi_standardizer || !ck.als_standardizer)
      fail(ErrorKind::Validation, "checkpoint carries no standardizers");
    pipeline::Dataset data;
    data.hsi = geodata::load_cube(pd_hsi);
    data.als = geodata::load_cube(pd_als);
    const int threads = g.threads.value_or(1);
    if (pd_pixels.empty()) {
      const auto map = pipeline::predict_map(ck.state, data, *ck.hsi_standardizer,
                                             *ck.als_standardizer, threads);
      const auto out = output(pd_out, g, "class_map.f32");
      geodata::save_cube(geodata::label_raster_to_cube(map), out);
      std::cout << "class map -> " << out.string() << "\n";
      return;
    }
    std::vector<pseudolabel::Coord> px;
    for (const auto& t : treetop::read_candidates_csv(pd_pixels)) px.push_back({t.x, t.y});
    const auto probs = dsnn::predict_proba(
        ck.state, pipeline::pixel_features(data, px, *ck.hsi_standardizer, *ck.als_standardizer),
        threads);
    auto cube = geodata::RasterCube::filled(static_cast<std::size_t>(ck.state.config.classes()),
                                            px.size(), 1);
    cube.values = probs;
    cube.name = "probabilities";
    const auto out = output(pd_out, g, "probabilities.f32");
    geodata::save_cube(cube, out);
    std::cout << px.size() << " rows x " << ck.state.config.classes() << " classes -> "
              << out.string() << "\n";
  });

  // pseudolabel
  auto* pl = app.add_subcommand("pseudolabel", "Build the augmented training set");
  std::string pl_cand, pl_probs, pl_parents, pl_prior, pl_polygons, pl_out;
  std::size_t pl_w = 0, pl_h = 0;
  pseudolabel::FusionConfig pl_fusion;
  pl->add_option("--candidates", pl_cand, "Candidates CSV (x,y)")->required();
  pl->add_option("--probs", pl_probs, "Probability cube from predict --pixels")->required();
  pl->add_option("--parents", pl_parents, "Parents CSV (x,y,label)")->required();
  pl->add_option("--prior", pl_prior, "Prior CSV");
  pl->add_option("--exclude-polygons", pl_polygons, "Polygons whose pixels are never pseudo-labelled");
  pl->add_option("--width", pl_w, "Raster width")->required();
  pl->add_option("--height", pl_h, "Raster height")->required();
  pl->add_option("--out", pl_out, "Augmented set CSV");
  add_fusion_flags(pl, pl_fusion);
  pl->callback([&] {
    auto fusion = pl_fusion;
    if (!g.config.empty()) {
      auto base = load_experiment_config(g.config).fusion;
      for (auto [flag, dst, src] :
           {std::tuple{"--r-min", &base.r_min, pl_fusion.r_min},
            std::tuple{"--r-max", &base.r_max, pl_fusion.r_max},
            std::tuple{"--epsilon", &base.epsilon, pl_fusion.epsilon},
            std::tuple{"--tau", &base.tau, pl_fusion.tau},
            std::tuple{"--gsd", &base.gsd, pl_fusion.gsd}})
        if (pl->count(flag)) *dst = src;
      if (pl->count("--expand-n")) base.expand_n = pl_fusion.expand_n;
      fusion = base;
    }
    const auto cands = treetop::read_candidates_csv(pl_cand);
    const auto probs = geodata::load_cube(pl_probs);
    if (probs.height != cands.size())
      fail(ErrorKind::Validation, "probability rows (" + std::to_string(probs.height) +
                                      ") do not match candidates (" + std::to_string(cands.size()) + ")");
    const auto parents = pseudolabel::read_parents_csv(pl_parents);
    const auto K = probs.width;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < K; ++k) names.push_back(std::to_string(k));
    auto prior = pl_prior.empty() ? cohab::ScaledPrior::uniform(names) : cohab::parse_prior_csv(slurp(pl_prior));
    if (prior.size() != K) fail(ErrorKind::Validation, "prior size does not match the class count");
    std::vector<pseudolabel::Candidate> candidates;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      pseudolabel::Candidate c{cands[i].x, cands[i].y, {}};
      for (std::size_t k = 0; k < K; ++k) c.probs.push_back(probs.at(k, i));
      candidates.push_back(std::move(c));
    }
    std::set<pseudolabel::Coord> excluded;
    for (const auto& p : parents) excluded.insert({p.x, p.y});
    if (!pl_polygons.empty()) {
      const auto raster = geodata::rasterize_polygons(geodata::read_polygons_csv(pl_polygons), pl_w, pl_h);
      for (std::size_t y = 0; y < pl_h; ++y)
        for (std::size_t x = 0; x < pl_w; ++x)
          if (raster.at(x, y) != geodata::LabelRaster::kUnlabeled)
            excluded.insert({static_cast<int>(x), static_cast<int>(y)});
    }
    pseudolabel::AugmentOptions opt;
    opt.width = pl_w;
    opt.height = pl_h;
    opt.threads = g.threads.value_or(1);
    if (g.seed) opt.shuffle_seed = *g.seed;
    const auto aug = pseudolabel::build_augmented_set(candidates, parents, prior, fusion, excluded, opt);
    const auto out = output(pl_out, g, "augmented.csv");
    pseudolabel::write_augmented_csv(aug, out);
    std::cout << aug.size() << " pseudo-labelled pixels -> " << out.string() << "\n";
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a predicted map against reference labels");
  std::string ev_pred, ev_truth, ev_classes, ev_out;
  double ev_threshold = 0.01;
  ev->add_option("--pred", ev_pred, "Predicted class cube")->required();
  ev->add_option("--truth", ev_truth, "Reference class cube")->required();
  ev->add_option("--classes", ev_classes, "Class list")->required();
  ev->add_option("--attractor-threshold", ev_threshold, "NC threshold");
  ev->add_option("--out", ev_out, "Report JSON");
  ev->callback([&] {
    const auto pred = geodata::label_raster_from_cube(geodata::load_cube(ev_pred));
    const auto truth = geodata::label_raster_from_cube(geodata::load_cube(ev_truth));
    const auto classes = geodata::read_class_list(ev_classes);
    if (pred.width != truth.width || pred.height != truth.height)
      fail(ErrorKind::Validation, "prediction and reference differ in shape");
    std::vector<int> t, p;
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
      if (truth.labels[i] == geodata::LabelRaster::kUnlabeled) continue;
      if (pred.labels[i] == geodata::LabelRaster::kUnlabeled) {
        ++skipped;
        continue;
      }
      t.push_back(truth.labels[i]);
      p.push_back(pred.labels[i]);
    }
    auto cm = metrics::confusion(t, p, classes.size());
    cm.labels = classes;
    auto rep = metrics::report(cm, ev_threshold);
    if (skipped) rep.notes.push_back(std::to_string(skipped) + " reference pixels have no prediction");
    const auto text = metrics::report_json(cm, rep, classes);
    spill(output(ev_out, g, "report.json"), text);
    std::cout << "macro F1 " << rep.macro_f1 << ", accuracy " << rep.accuracy
              << ", balanced accuracy " << rep.balanced_accuracy << "\n";
  });

  // render
  auto* rd = app.add_subcommand("render", "Render a class map to PNG");
  std::string rd_map, rd_classes, rd_out;
  rd->add_option("--map", rd_map, "Class cube")->required();
  rd->add_option("--classes", rd_classes, "Class list")->required();
  rd->add_option("--out", rd_out, "PNG path");
  rd->callback([&] {
    const auto map = geodata::label_raster_from_cube(geodata::load_cube(rd_map));
    const auto classes = geodata::read_class_list(rd_classes);
    const auto out = output(rd_out, g, "map.png");
    render::write_png(render::render_class_map(map, classes.size()), out);
    std::cout << "map -> " << out.string() << "\n";
  });

  // experiment
  auto* ex = app.add_subcommand("experiment", "Two-pass DSNN / DSNN+P experiment");
  std::optional<int> ex_runs;
  std::string ex_data;
  ex->add_option("--runs", ex_runs, "Number of runs")->check(CLI::PositiveNumber);
  ex->add_option("--data", ex_data, "Scene directory (overrides [data])");
  ex->callback([&] {
    auto cfg = experiment_config(g, ex_data);
    if (ex_runs) cfg.n_runs = *ex_runs;
    if (g.out_dir.empty()) fail(ErrorKind::Validation, "--out-dir is required");
    const auto res = pipeline::run_two_pass(cfg, g.out_dir);
    std::vector<double> a, b;
    for (const auto& r : res.runs) {
      a.push_back(r.base.report.macro_f1);
      b.push_back(r.pseudo.report.macro_f1);
    }
    const auto [ma, sa] = pipeline::mean_std(a);
    const auto [mb, sb] = pipeline::mean_std(b);
    std::cout << std::fixed << std::setprecision(4) << pipeline::kMethodBase << " macro F1 " << ma
              << " +- " << sa << "\n"
              << pipeline::kMethodPseudo << " macro F1 " << mb << " +- " << sb << "\n"
              << "results in " << g.out_dir << "\n";
  });

  // compare
  auto* cmp = app.add_subcommand("compare", "Compare two experiment manifests");
  std::string cmp_a, cmp_b, cmp_out;
  std::string cmp_ma = pipeline::kMethodBase, cmp_mb = pipeline::kMethodPseudo;
  cmp->add_option("--a", cmp_a, "First manifest")->required();
  cmp->add_option("--b", cmp_b, "Second manifest")->required();
  cmp->add_option("--method-a", cmp_ma, "Method in the first manifest");
  cmp->add_option("--method-b", cmp_mb, "Method in the second manifest");
  cmp->add_option("--out", cmp_out, "Comparison JSON (stdout when omitted)");
  cmp->callback([&] {
    const auto text = pipeline::compare_runs(cmp_a, cmp_ma, cmp_b, cmp_mb);
    if (cmp_out.empty() && g.out_dir.empty())
      std::cout << text;
    else
      spill(output(cmp_out, g, "comparison.json"), text);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::Validation);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::Io);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
