#include "canopy/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "canopy/error.hpp"
#include "csv.hpp"

namespace canopy::pseudolabel {

void FusionConfig::validate() const {
  if (!(r_min >= 0 && r_min < r_max)) fail(ErrorKind::Validation, "need 0 <= r_min < r_max");
  if (!(epsilon > 0 && epsilon < 1)) fail(ErrorKind::Validation, "epsilon must lie in (0,1)");
  if (!(tau > 0 && tau <= 1)) fail(ErrorKind::Validation, "tau must lie in (0,1]");
  if (expand_n < 0) fail(ErrorKind::Validation, "expand_n must be non-negative");
  if (!(delta_scale > 0 && delta_scale <= 1))
    fail(ErrorKind::Validation, "delta_scale must lie in (0,1]");
  if (!(gsd > 0)) fail(ErrorKind::Validation, "gsd must be positive");
}

double distance_weight(double d, const FusionConfig& cfg) {
  if (d <= cfg.r_min) return 1.0;
  if (d >= cfg.r_max) return cfg.epsilon;
  const double t = (d - cfg.r_min) / (cfg.r_max - cfg.r_min);
  return cfg.epsilon + (1.0 - cfg.epsilon) * std::sqrt(1.0 - t * t);
}

std::optional<std::vector<double>> fuse_scores(const Candidate& candidate, const Parent& parent,
                                               const cohab::ScaledPrior& prior, double d,
                                               const FusionConfig& cfg) {
  const std::size_t k = prior.size();
  if (candidate.probs.size() != k)
    fail(ErrorKind::Validation, "candidate has " + std::to_string(candidate.probs.size()) +
                                    " probabilities for " + std::to_string(k) + " classes");
  if (parent.label < 0 || static_cast<std::size_t>(parent.label) >= k)
    fail(ErrorKind::Validation, "parent label " + std::to_string(parent.label) + " out of range");
  const auto row = prior.row(static_cast<std::size_t>(parent.label));
  const double w = distance_weight(d, cfg);
  std::vector<double> s(k);
  double sum = 0;
  for (std::size_t c = 0; c < k; ++c) {
    s[c] = candidate.probs[c] * row[c] * (static_cast<int>(c) == parent.label ? w : 1.0);
    sum += s[c];
  }
  if (!(sum > 0)) return std::nullopt;
  for (auto& v : s) v /= sum;
  return s;
}

namespace {

double pixel_distance(const Candidate& c, const Parent& p, double gsd) {
  const double dx = c.x - p.x, dy = c.y - p.y;
  return gsd * std::sqrt(dx * dx + dy * dy);
}

struct Best {
  std::size_t parent = 0;
  int label = -1;
  double confidence = -1;
};

void consider(Best& best, const Candidate& candidate, const Parent& parent, std::size_t index,
              const cohab::ScaledPrior& prior, const FusionConfig& cfg) {
  const double d = pixel_distance(candidate, parent, cfg.gsd);
  if (d > cfg.r_max) return;
  auto fused = fuse_scores(candidate, parent, prior, d, cfg);
  if (!fused) return;
  const auto it = std::max_element(fused->begin(), fused->end());
  const double conf = *it;
  if (conf > best.confidence || (conf == best.confidence && index < best.parent)) {
    best.parent = index;
    best.confidence = conf;
    best.label = static_cast<int>(it - fused->begin());
  }
}

std::optional<PseudoLabel> finish(const Candidate& c, const Best& best) {
  if (best.label < 0) return std::nullopt;
  return PseudoLabel{c.x, c.y, best.label, best.confidence,
                     static_cast<std::int64_t>(best.parent), false};
}

}  // namespace

std::optional<PseudoLabel> select_best_parent(const Candidate& candidate,
                                              std::span<const Parent> parents,
                                              const cohab::ScaledPrior& prior,
                                              const FusionConfig& cfg) {
  Best best;
  for (std::size_t j = 0; j < parents.size(); ++j)
    consider(best, candidate, parents[j], j, prior, cfg);
  return finish(candidate, best);
}

ParentIndex::ParentIndex(std::span<const Parent> parents, double reach_pixels)
    : parents_(parents), reach_(reach_pixels * (1.0 + 1e-9) + 1e-9),
      cell_(std::max(1, static_cast<int>(std::ceil(reach_pixels)))) {
  if (parents.empty()) return;
  auto cell_of = [this](int v) {
    return static_cast<int>(std::floor(static_cast<double>(v) / cell_));
  };
  int max_cx = cell_of(parents[0].x), max_cy = cell_of(parents[0].y);
  min_cx_ = max_cx;
  min_cy_ = max_cy;
  for (const auto& p : parents) {
    min_cx_ = std::min(min_cx_, cell_of(p.x));
    min_cy_ = std::min(min_cy_, cell_of(p.y));
    max_cx = std::max(max_cx, cell_of(p.x));
    max_cy = std::max(max_cy, cell_of(p.y));
  }
  ncx_ = max_cx - min_cx_ + 1;
  ncy_ = max_cy - min_cy_ + 1;
  buckets_.resize(static_cast<std::size_t>(ncx_) * static_cast<std::size_t>(ncy_));
  for (std::size_t j = 0; j < parents.size(); ++j) {
    const int cx = cell_of(parents[j].x) - min_cx_, cy = cell_of(parents[j].y) - min_cy_;
    buckets_[static_cast<std::size_t>(cy) * ncx_ + cx].push_back(j);
  }
}

std::vector<std::size_t> ParentIndex::near(int x, int y) const {
  std::vector<std::size_t> out;
  if (buckets_.empty()) return out;
  const int cx = static_cast<int>(std::floor(static_cast<double>(x) / cell_)) - min_cx_;
  const int cy = static_cast<int>(std::floor(static_cast<double>(y) / cell_)) - min_cy_;
  for (int by = std::max(0, cy - 1); by <= std::min(ncy_ - 1, cy + 1); ++by)
    for (int bx = std::max(0, cx - 1); bx <= std::min(ncx_ - 1, cx + 1); ++bx)
      for (auto j : buckets_[static_cast<std::size_t>(by) * ncx_ + bx]) {
        const double dx = parents_[j].x - x, dy = parents_[j].y - y;
        if (dx * dx + dy * dy <= reach_ * reach_) out.push_back(j);
      }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<PseudoLabel> select_best_parent(const Candidate& candidate,
                                              std::span<const Parent> parents,
                                              const ParentIndex& index,
                                              const cohab::ScaledPrior& prior,
                                              const FusionConfig& cfg) {
  Best best;
  for (auto j : index.near(candidate.x, candidate.y))
    consider(best, candidate, parents[j], j, prior, cfg);
  return finish(candidate, best);
}

std::vector<PseudoLabel> build_augmented_set(std::span<const Candidate> candidates,
                                             std::span<const Parent> parents,
                                             const cohab::ScaledPrior& prior,
                                             const FusionConfig& cfg,
                                             const std::set<Coord>& training_coords,
                                             const AugmentOptions& options) {
  cfg.validate();
  prior.validate();
  for (const auto& c : candidates) {
    double sum = 0;
    for (double p : c.probs) {
      if (!(p >= 0)) fail(ErrorKind::Validation, "candidate probability is negative or NaN");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      fail(ErrorKind::Validation, "candidate (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                                      ") probabilities sum to " + csv::format_double(sum));
  }

  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (options.shuffle_seed) {
    std::mt19937_64 rng(*options.shuffle_seed);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
  }

  // Scoring is independent per candidate.
  const ParentIndex index(parents, cfg.r_max / cfg.gsd);
  std::vector<std::optional<PseudoLabel>> scored(candidates.size());
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(candidates.size())));
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      scored[i] = select_best_parent(candidates[i], parents, index, prior, cfg);
  };
  if (threads <= 1) {
    work(0, candidates.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (candidates.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(candidates.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }

  // Collision resolution is serial and follows the (possibly shuffled) order.
  std::vector<PseudoLabel> out;
  std::set<Coord> taken;
  const int n = cfg.expand_n;
  const int w = static_cast<int>(options.width), h = static_cast<int>(options.height);
  for (auto i : order) {
    const auto& pl = scored[i];
    if (!pl || !(pl->confidence > cfg.tau)) continue;
    if (training_coords.count({pl->x, pl->y})) continue;
    for (int dy = -n; dy <= n; ++dy) {
      for (int dx = -n; dx <= n; ++dx) {
        const int x = pl->x + dx, y = pl->y + dy;
        if (x < 0 || y < 0 || x >= w || y >= h) continue;
        const Coord c{x, y};
        if (training_coords.count(c) || !taken.insert(c).second) continue;
        PseudoLabel e = *pl;
        e.x = x;
        e.y = y;
        e.expanded = dx != 0 || dy != 0;
        out.push_back(e);
      }
    }
  }
  return out;
}

void write_augmented_csv(std::span<const PseudoLabel> labels, const std::filesystem::path& path) {
  std::string s = "x,y,label,confidence,parent_index,expanded\n";
  for (const auto& l : labels)
    s += std::to_string(l.x) + "," + std::to_string(l.y) + "," + std::to_string(l.label) + "," +
         csv::format_double(l.confidence) + "," + std::to_string(l.parent_index) + "," +
         (l.expanded ? "1" : "0") + "\n";
  csv::write_file(path, s);
}

std::vector<PseudoLabel> read_augmented_csv(const std::filesystem::path& path) {
  auto t = csv::read_table(path);
  const auto src = path.string();
  auto cx = t.column("x", src), cy = t.column("y", src), cl = t.column("label", src),
       cc = t.column("confidence", src), cp = t.column("parent_index", src),
       ce = t.column("expanded", src);
  std::vector<PseudoLabel> out;
  for (const auto& r : t.rows)
    out.push_back({static_cast<int>(csv::to_int(r[cx], src)),
                   static_cast<int>(csv::to_int(r[cy], src)),
                   static_cast<int>(csv::to_int(r[cl], src)), csv::to_double(r[cc], src),
                   csv::to_int(r[cp], src), csv::to_int(r[ce], src) != 0});
  return out;
}

std::vector<Parent> read_parents_csv(const std::filesystem::path& path) {
  auto t = csv::read_table(path);
  const auto src = path.string();
  auto cx = t.column("x", src), cy = t.column("y", src), cl = t.column("label", src);
  std::vector<Parent> out;
  for (const auto& r : t.rows)
    out.push_back({static_cast<int>(csv::to_int(r[cx], src)),
                   static_cast<int>(csv::to_int(r[cy], src)),
                   static_cast<int>(csv::to_int(r[cl], src))});
  return out;
}

void write_parents_csv(std::span<const Parent> parents, const std::filesystem::path& path) {
  std::string s = "x,y,label\n";
  for (const auto& p : parents)
    s += std::to_string(p.x) + "," + std::to_string(p.y) + "," + std::to_string(p.label) + "\n";
  csv::write_file(path, s);
}

}  // namespace canopy::pseudolabel
