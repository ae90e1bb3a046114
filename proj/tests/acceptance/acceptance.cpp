// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "canopy/cohabitation.hpp"
#include "canopy/config.hpp"
#include "canopy/dsnn.hpp"
#include "canopy/error.hpp"
#include "canopy/metrics.hpp"
#include "canopy/pipeline.hpp"
#include "canopy/pseudolabel.hpp"
#include "canopy/synthscene.hpp"
#include "canopy/treetop.hpp"
#include "oracles/oracles.hpp"
#include "support/scratch.hpp"

using namespace canopy;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- 1

Verdict gradient_check() {
  const auto t0 = Clock::now();
  dsnn::NetworkConfig c;
  c.hsi_dims = {6, 8, 4};
  c.als_dims = {3, 5, 3};
  c.decoder_dims = {7, 6, 4};
  c.dropout = 0.25;
  auto s = dsnn::init_model<double>(c, 17);
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* layers : {&s.encoder_hsi, &s.encoder_als, &s.decoder})
    for (auto& l : *layers) {
      for (auto& v : l.bias) v = u(rng);
      for (auto& v : l.gamma) v = 1 + u(rng);
      for (auto& v : l.beta) v = u(rng);
    }
  const std::size_t n = 9;
  dsnn::Batch<double> b;
  b.hsi = {n, 6, {}};
  b.als = {n, 3, {}};
  std::normal_distribution<double> g(0, 1);
  for (std::size_t i = 0; i < n * 6; ++i) b.hsi.data.push_back(g(rng));
  for (std::size_t i = 0; i < n * 3; ++i) b.als.data.push_back(g(rng));
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % 4));

  const std::mt19937_64 mask_rng(5);
  dsnn::Gradients<double> grads;
  auto r0 = mask_rng;
  dsnn::loss_and_gradients(s, b, labels, grads, r0);
  auto params = s.parameters();
  double worst = 0, worst_abs = 0;
  std::size_t near_zero = 0;
  const double h = 1e-5;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].values.size(); ++i) {
      auto eval = [&] {
        dsnn::Gradients<double> scratch;
        auto r = mask_rng;
        return dsnn::loss_and_gradients(s, b, labels, scratch, r);
      };
      const double keep = params[t].values[i];
      params[t].values[i] = keep + h;
      const double up = eval();
      params[t].values[i] = keep - h;
      const double down = eval();
      params[t].values[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double an = grads[t][i];
      const double scale = std::max(std::abs(fd), std::abs(an));
      // pre-batchnorm biases have an exact zero gradient; judge those absolutely
      if (scale > 1e-6) {
        worst = std::max(worst, std::abs(fd - an) / scale);
      } else {
        worst_abs = std::max(worst_abs, std::abs(fd - an));
        ++near_zero;
      }
    }
  const double secs = seconds_since(t0);
  const auto count = s.parameter_count();
  std::ostringstream detail;
  detail << count << " parameters, max relative error " << std::scientific << std::setprecision(2) << worst
         << ", " << near_zero << " near-zero entries within " << worst_abs << " absolute, " << std::fixed
         << secs << " s";
  return {count <= 300 && worst < 1e-4 && worst_abs < 1e-9 && secs < 10, detail.str()};
}

// ---------------------------------------------------------------- 2, 3, 10

struct Benchmark {
  pipeline::ExperimentResult result;
  ExperimentConfig cfg;
  double seconds = 0;
};

Benchmark run_benchmark(const fs::path& scene_dir) {
  const auto scene_cfg = synth::benchmark_scene_config();
  synth::write_scene(synth::generate_scene(scene_cfg), scene_cfg, scene_dir);
  auto cfg = load_experiment_config(fs::path(CANOPY_SOURCE_DIR) / "configs" / "benchmark_experiment.toml");
  cfg.data.hsi = scene_dir / "hsi";
  cfg.data.als = scene_dir / "als";
  cfg.data.chm = scene_dir / "chm";
  cfg.data.polygons = scene_dir / "polygons.csv";
  cfg.data.splits = scene_dir / "splits.csv";
  cfg.data.classes = scene_dir / "classes.txt";
  cfg.data.cohabitation = scene_dir / "cohabitation.csv";
  cfg.data.truth_map = scene_dir / "class_map";
  const auto t0 = Clock::now();
  Benchmark b{pipeline::run_two_pass(cfg, {}), cfg, 0};
  b.seconds = seconds_since(t0);
  return b;
}

Verdict pseudo_label_gain(const Benchmark& b) {
  std::vector<double> base, pseudo;
  std::string per_run;
  for (const auto& r : b.result.runs) {
    base.push_back(r.base.report.macro_f1);
    pseudo.push_back(r.pseudo.report.macro_f1);
    per_run += " " + fmt(100 * (r.pseudo.report.macro_f1 - r.base.report.macro_f1), 2);
  }
  const auto [mb, sb] = pipeline::mean_std(base);
  const auto [mp, sp] = pipeline::mean_std(pseudo);
  const double gain = 100 * (mp - mb);
  return {b.result.runs.size() == 5 && mp > mb && gain >= 0.5 && b.seconds < 300,
          "DSNN " + fmt(mb) + "+-" + fmt(sb) + ", DSNN+P " + fmt(mp) + "+-" + fmt(sp) + ", gain " +
              fmt(gain, 2) + " points (per run:" + per_run + "), " + fmt(b.seconds, 1) + " s"};
}

pseudolabel::AugmentOptions options_for(const Benchmark& b, const pipeline::RunDetail& r) {
  pseudolabel::AugmentOptions opt;
  const auto hsi = geodata::load_cube(b.cfg.data.hsi);
  opt.width = hsi.width;
  opt.height = hsi.height;
  opt.shuffle_seed = r.seed;
  opt.threads = b.cfg.threads;
  return opt;
}

Verdict prior_sanity(const Benchmark& b) {
  const auto truth = geodata::label_raster_from_cube(geodata::load_cube(b.cfg.data.truth_map));
  const auto uniform = cohab::ScaledPrior::uniform(b.result.prior.species);
  bool ok = b.result.runs.size() == 5;
  std::string detail;
  double sum_true = 0, sum_uniform = 0;
  for (const auto& r : b.result.runs) {
    const auto opt = options_for(b, r);
    const auto with_uniform =
        pseudolabel::build_augmented_set(r.candidates, r.parents, uniform, b.cfg.fusion, r.excluded, opt);
    const double p_true = r.augmented.empty() ? 0.0 : pipeline::pseudo_label_precision(r.augmented, truth);
    const double p_uni = with_uniform.empty() ? 0.0 : pipeline::pseudo_label_precision(with_uniform, truth);
    ok = ok && !r.augmented.empty() && p_true >= p_uni;
    sum_true += p_true;
    sum_uniform += p_uni;
    detail += " seed " + std::to_string(r.seed) + ": " + fmt(p_true, 3) + " (" +
              std::to_string(r.augmented.size()) + " px) vs " + fmt(p_uni, 3) + " (" +
              std::to_string(with_uniform.size()) + " px);";
  }
  const double n = static_cast<double>(b.result.runs.size());
  return {ok, "precision true prior " + fmt(sum_true / n, 3) + " vs uniform " + fmt(sum_uniform / n, 3) + ";" +
                  detail};
}

Verdict tau_monotonicity(const Benchmark& b) {
  bool ok = !b.result.runs.empty();
  std::string detail;
  for (const auto& r : b.result.runs) {
    const auto opt = options_for(b, r);
    std::size_t prev = SIZE_MAX;
    detail += " seed " + std::to_string(r.seed) + ":";
    for (double tau : {0.5, 0.9, 0.99, 0.999}) {
      auto f = b.cfg.fusion;
      f.tau = tau;
      const auto n = pseudolabel::build_augmented_set(r.candidates, r.parents, b.result.prior, f, r.excluded, opt).size();
      ok = ok && n <= prev;
      prev = n;
      detail += " " + std::to_string(n);
    }
    detail += ";";
  }
  return {ok, "augmented sizes for tau 0.5/0.9/0.99/0.999;" + detail};
}

// ---------------------------------------------------------------- 4

struct Recovery {
  std::size_t eligible = 0, found = 0, below = 0;
  double recall() const { return static_cast<double>(found) / static_cast<double>(eligible); }
};

Recovery recover(const synth::SceneConfig& cfg) {
  treetop::TreetopConfig tc;
  const auto scene = synth::generate_scene(cfg);
  const auto cands = treetop::detect_treetops(treetop::preprocess_chm(scene.chm, tc), tc);
  Recovery r;
  for (const auto& c : cands) r.below += c.height < tc.h_min;
  for (const auto& t : scene.truth.trees) {
    if (t.height < tc.h_min) continue;
    ++r.eligible;
    const long tx = std::lround(t.x), ty = std::lround(t.y);
    r.found += std::any_of(cands.begin(), cands.end(), [&](const auto& c) {
      return std::abs(c.x - tx) <= 1 && std::abs(c.y - ty) <= 1;
    });
  }
  return r;
}

Verdict treetop_recovery() {
  // Crowns 6 m apart stay separate under the default 5x5 window and sigma 1.
  Recovery sparse, dense;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = synth::benchmark_scene_config(seed);
    const auto d = recover(cfg);
    dense.eligible += d.eligible;
    dense.found += d.found;
    cfg.width = cfg.height = 128;
    cfg.n_trees = 250;
    cfg.min_spacing = 6.0;
    const auto r = recover(cfg);
    sparse.eligible += r.eligible;
    sparse.found += r.found;
    sparse.below += r.below + d.below;
  }
  const double recall = sparse.recall();
  const auto found = sparse.found, eligible = sparse.eligible, below = sparse.below;

  std::mt19937_64 rng(404);
  int agree = 0;
  for (int t = 0; t < 100; ++t) {
    const int w = 1 + static_cast<int>(rng() % 64), h = 1 + static_cast<int>(rng() % 64);
    treetop::TreetopConfig cfg;
    cfg.window = 3 + 2 * static_cast<int>(rng() % 3);
    cfg.h_min = 5 + static_cast<double>(rng() % 6);
    auto chm = geodata::RasterCube::filled(w, h, 1);
    for (auto& v : chm.values) v = static_cast<float>(t % 2 ? 5 + rng() % 8 : (rng() % 40000) / 1000.0);
    const auto got = treetop::detect_treetops(chm, cfg);
    const auto want = oracle::window_maxima(chm.values, w, h, cfg.window, cfg.h_min);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].x == want[i].x && got[i].y == want[i].y && got[i].height == want[i].h;
    agree += same;
  }
  return {recall >= 0.95 && below == 0 && agree == 100,
          "recall " + fmt(recall, 4) + " (" + std::to_string(found) + "/" + std::to_string(eligible) +
              ") on 6 m spaced scenes, below h_min " + std::to_string(below) + ", oracle agreement " +
              std::to_string(agree) + "/100 (benchmark density recall " + fmt(dense.recall(), 3) + ", not scored)"};
}

// ---------------------------------------------------------------- 5

Verdict weight_function() {
  pseudolabel::FusionConfig cfg;
  const double w0 = pseudolabel::distance_weight(0, cfg);
  const double wmax = pseudolabel::distance_weight(cfg.r_max, cfg);
  const double w125 = pseudolabel::distance_weight(12.5, cfg);
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0, 1);
  int violations = 0;
  for (int t = 0; t < 10000; ++t) {
    pseudolabel::FusionConfig c;
    c.r_min = 25 * u(rng);
    c.r_max = c.r_min + 1e-3 + 25 * u(rng);
    c.epsilon = 1e-3 + 0.998 * u(rng);
    double prev = pseudolabel::distance_weight(0, c);
    for (int k = 1; k <= 200; ++k) {
      const double w = pseudolabel::distance_weight((c.r_max * 1.2) * k / 200.0, c);
      violations += w > prev;
      prev = w;
    }
  }
  const bool ok = w0 == 1.0 && wmax == cfg.epsilon && std::abs(w125 - 0.8727) <= 1e-4 && violations == 0;
  return {ok, "w(0)=" + fmt(w0, 6) + " w(r_max)=" + fmt(wmax, 6) + " w(12.5)=" + fmt(w125, 6) +
                  ", monotonicity violations " + std::to_string(violations) + " over 10000 configs"};
}

// ---------------------------------------------------------------- 6

Verdict fusion_oracle() {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> coord(-20, 20);
  std::exponential_distribution<double> e(1.0);
  int match = 0, with_pick = 0;
  const int n = 1000;
  for (int t = 0; t < n; ++t) {
    const std::size_t k = 1 + rng() % 8;
    auto simplex = [&](bool sparse) {
      std::vector<double> v(k);
      double s = 0;
      for (auto& x : v) s += (x = sparse && rng() % 3 == 0 ? 0.0 : e(rng));
      if (s == 0) v[0] = s = 1;
      for (auto& x : v) x /= s;
      return v;
    };
    cohab::ScaledPrior prior;
    oracle::FusionCase fc;
    for (std::size_t i = 0; i < k; ++i) {
      prior.species.push_back("s" + std::to_string(i));
      auto row = simplex(true);
      prior.pi.insert(prior.pi.end(), row.begin(), row.end());
      fc.pi.push_back(row);
    }
    pseudolabel::FusionConfig cfg;
    pseudolabel::Candidate c{coord(rng), coord(rng), simplex(t % 2 == 0)};
    fc.probs = c.probs;
    fc.cx = c.x;
    fc.cy = c.y;
    fc.r_min = cfg.r_min;
    fc.r_max = cfg.r_max;
    fc.eps = cfg.epsilon;
    fc.gsd = cfg.gsd;
    std::vector<pseudolabel::Parent> parents;
    const int np = static_cast<int>(rng() % 11);
    for (int j = 0; j < np; ++j) {
      parents.push_back({coord(rng), coord(rng), static_cast<int>(rng() % k)});
      fc.parents.push_back({parents.back().x, parents.back().y, parents.back().label});
    }
    const auto got = pseudolabel::select_best_parent(c, parents, prior, cfg);
    const auto want = oracle::best_parent(fc);
    bool same = got.has_value() == want.has_value();
    if (same && want) {
      ++with_pick;
      same = got->label == want->label && got->parent_index == static_cast<std::int64_t>(want->parent) &&
             got->confidence == want->confidence;
    }
    match += same;
  }
  return {match == n, std::to_string(match) + "/" + std::to_string(n) + " identical (" +
                          std::to_string(with_pick) + " with a parent in reach)"};
}

// ---------------------------------------------------------------- 7

Verdict cohabitation_invariants() {
  std::mt19937_64 rng(707);
  bool ok = true;
  double worst_row = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 17;
    std::vector<double> v(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = v[j * n + i] = (rng() % 101) / 100.0;
    std::ostringstream csv;
    for (std::size_t j = 0; j < n; ++j) csv << ",sp" << j;
    csv << "\n";
    for (std::size_t i = 0; i < n; ++i) {
      csv << "sp" << i;
      for (std::size_t j = 0; j < n; ++j) csv << "," << v[i * n + j];
      csv << "\n";
    }
    const auto m = cohab::parse_matrix_csv(csv.str());
    m.validate();
    for (std::size_t i = 0; i < n; ++i) {
      ok = ok && m.at(i, i) == 1.0;
      for (std::size_t j = 0; j < n; ++j) ok = ok && m.at(i, j) == m.at(j, i);
    }
    const auto scaled = cohab::scale_offdiagonal(m, 0.75);
    const auto pi = cohab::row_normalize(scaled);
    for (std::size_t i = 0; i < n; ++i) {
      ok = ok && scaled.at(i, i) == 1.0;
      double s = 0;
      for (double x : pi.row(i)) s += x;
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
    ok = ok && cohab::row_normalize(cohab::scale_offdiagonal(m, 1.0)).pi == cohab::row_normalize(m).pi;
  }
  auto base = cohab::CohabitationMatrix::identity({"Picea abies", "Alnus glutinosa"});
  base.at(0, 1) = base.at(1, 0) = 0.55;
  const std::vector<cohab::ExpertDelta> d{{"Picea abies", "Alnus glutinosa", 0.15}};
  const auto fixed = cohab::apply_expert_deltas(base, d);
  const bool delta_ok = std::abs(fixed.at(0, 1) - 0.70) < 1e-12 && fixed.at(1, 0) == fixed.at(0, 1);
  return {ok && worst_row <= 1e-9 && delta_ok,
          "200 random matrices, max row-sum error " + std::to_string(worst_row) + ", delta example " +
              fmt(fixed.at(0, 1), 2)};
}

// ---------------------------------------------------------------- 8

Verdict metrics_oracle() {
  metrics::ConfusionMatrix cm;
  cm.classes = 2;
  cm.counts = {8, 2, 4, 6};
  const auto r = metrics::report(cm);
  bool ok = std::abs(r.macro_f1 - 0.6970) <= 1e-4 && std::abs(r.balanced_accuracy - 0.70) <= 1e-4;

  // class 1 attracts 10% of class 0 and 30% of class 2; class 2 gets 0.5% of class 0
  metrics::ConfusionMatrix three;
  three.classes = 3;
  three.counts = {895, 100, 5, 0, 50, 0, 20, 30, 50};
  const auto r3 = metrics::report(three);
  ok = ok && std::abs(r3.per_class[1].age - 0.40) < 1e-12 && r3.per_class[1].nc == 2 &&
       std::abs(r3.per_class[2].age - 0.005) < 1e-12 && r3.per_class[2].nc == 0 &&
       std::abs(r3.per_class[0].age - 0.20) < 1e-12 && r3.per_class[0].nc == 1;

  geodata::LabelRaster a, b;
  a.width = b.width = 2;
  a.height = b.height = 1;
  a.labels = {0, 1};
  b.labels = {0, 0};
  const double j = metrics::jaccard_maps(a, b);
  ok = ok && j == 0.5;
  return {ok, "macro F1 " + fmt(r.macro_f1) + ", balanced accuracy " + fmt(r.balanced_accuracy) +
                  ", AGE " + fmt(r3.per_class[1].age, 3) + " NC " + std::to_string(r3.per_class[1].nc) +
                  ", jaccard " + fmt(j, 2)};
}

// ---------------------------------------------------------------- 9

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + CANOPY_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict reproducibility(const fs::path& scene_dir, const fs::path& work) {
  if (std::string(CANOPY_CLI_PATH).empty()) return {false, "canopy CLI was not built"};
  const auto cfg = work / "repro.toml";
  std::ofstream(cfg) << "[network]\nepochs = 10\nbatch_size = 32\nlr = 1e-3\n"
                        "[fusion]\ntau = 0.9\n"
                        "[experiment]\nn_runs = 2\nbase_seed = 0\nthreads = 2\n";
  std::string texts[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = work / ("repro_" + std::to_string(i));
    const int code = run_cli("--config \"" + cfg.string() + "\" --out-dir \"" + out.string() +
                                 "\" experiment --data \"" + scene_dir.string() + "\"",
                             work / "repro.log");
    if (code != 0) return {false, "experiment exited with " + std::to_string(code) + ": " + slurp(work / "repro.log")};
    texts[i] = slurp(out / "metrics.json");
  }
  return {!texts[0].empty() && texts[0] == texts[1],
          "metrics.json " + std::to_string(texts[0].size()) + " bytes, " +
              (texts[0] == texts[1] ? "identical" : "different") + " across two executions (2 threads)"};
}

}  // namespace

int main() {
  canopy::testing::ScratchDir work("acceptance");
  const auto scene_dir = work / "benchmark";
  std::vector<std::pair<int, std::function<Verdict()>>> checks;

  std::optional<Benchmark> bench;
  auto benchmark = [&]() -> const Benchmark& {
    if (!bench) bench = run_benchmark(scene_dir);
    return *bench;
  };

  checks.emplace_back(1, gradient_check);
  checks.emplace_back(2, [&] { return pseudo_label_gain(benchmark()); });
  checks.emplace_back(3, [&] { return prior_sanity(benchmark()); });
  checks.emplace_back(4, treetop_recovery);
  checks.emplace_back(5, weight_function);
  checks.emplace_back(6, fusion_oracle);
  checks.emplace_back(7, cohabitation_invariants);
  checks.emplace_back(8, metrics_oracle);
  checks.emplace_back(9, [&] {
    benchmark();
    return reproducibility(scene_dir, work.path());
  });
  checks.emplace_back(10, [&] { return tau_monotonicity(benchmark()); });

  int failures = 0;
  for (auto& [id, fn] : checks) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << v.detail << std::endl;
  }
  std::cout << (10 - failures) << "/10 criteria passed" << std::endl;
  return failures ? 1 : 0;
}
