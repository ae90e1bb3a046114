#include "canopy/treetop.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "canopy/error.hpp"
#include "csv.hpp"

namespace canopy::treetop {

using geodata::RasterCube;

void TreetopConfig::validate() const {
  if (!(clip_lo < clip_hi)) fail(ErrorKind::Validation, "clip_lo must be below clip_hi");
  if (!(sigma > 0)) fail(ErrorKind::Validation, "sigma must be positive");
  if (window < 3 || window % 2 == 0)
    fail(ErrorKind::Validation, "window must be odd and at least 3");
}

std::vector<double> gaussian_kernel_1d(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + r];
  }
  for (auto& v : k) v /= sum;
  return k;
}

long reflect_index(long i, long n) noexcept {
  if (n == 1) return 0;
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

RasterCube preprocess_chm(const RasterCube& chm, const TreetopConfig& cfg) {
  cfg.validate();
  if (chm.bands != 1)
    fail(ErrorKind::Validation, "CHM must have exactly one band, got " + std::to_string(chm.bands));
  const long w = static_cast<long>(chm.width), h = static_cast<long>(chm.height);

  std::vector<double> clamped(chm.values.size());
  for (std::size_t i = 0; i < clamped.size(); ++i) {
    const double v = chm.values[i];
    clamped[i] = std::isnan(v) || chm.is_nodata(chm.values[i])
                     ? cfg.clip_lo
                     : std::clamp(v, cfg.clip_lo, cfg.clip_hi);
  }

  const auto k = gaussian_kernel_1d(cfg.sigma);
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(clamped.size());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (long o = -r; o <= r; ++o) acc += k[o + r] * clamped[y * w + reflect_index(x + o, w)];
      tmp[y * w + x] = acc;
    }

  RasterCube out = RasterCube::filled(chm.width, chm.height, 1);
  out.name = chm.name.empty() ? "chm_smoothed" : chm.name + "_smoothed";
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (long o = -r; o <= r; ++o) acc += k[o + r] * tmp[reflect_index(y + o, h) * w + x];
      out.values[y * w + x] = static_cast<float>(acc);
    }
  return out;
}

namespace {

// Sliding maximum over a clipped window of half-width r along one axis.
void running_max(const float* in, float* out, long n, long stride, long r) {
  std::deque<long> dq;
  long next = 0;
  for (long i = 0; i < n; ++i) {
    const long hi = std::min(n - 1, i + r);
    while (next <= hi) {
      while (!dq.empty() && in[dq.back() * stride] <= in[next * stride]) dq.pop_back();
      dq.push_back(next++);
    }
    while (dq.front() < i - r) dq.pop_front();
    out[i * stride] = in[dq.front() * stride];
  }
}

}  // namespace

CandidateSet detect_treetops(const RasterCube& smoothed, const TreetopConfig& cfg) {
  cfg.validate();
  if (smoothed.bands != 1) fail(ErrorKind::Validation, "treetop detection needs a 1-band raster");
  const long w = static_cast<long>(smoothed.width), h = static_cast<long>(smoothed.height);
  const long r = cfg.window / 2;
  const float* z = smoothed.values.data();

  std::vector<float> row_max(smoothed.values.size()), win_max(smoothed.values.size());
  for (long y = 0; y < h; ++y) running_max(z + y * w, row_max.data() + y * w, w, 1, r);
  for (long x = 0; x < w; ++x) running_max(row_max.data() + x, win_max.data() + x, h, w, r);

  CandidateSet out;
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const float v = z[y * w + x];
      if (!(v >= cfg.h_min) || v < win_max[y * w + x]) continue;
      // Plateau rule: an equal pixel earlier in (y, x) order wins.
      bool first = true;
      for (long yy = std::max(0L, y - r); yy <= y && first; ++yy) {
        const long xe = yy < y ? std::min(w - 1, x + r) : x - 1;
        for (long xx = std::max(0L, x - r); xx <= xe; ++xx) {
          if (z[yy * w + xx] == v) {
            first = false;
            break;
          }
        }
      }
      if (first) out.push_back({static_cast<int>(x), static_cast<int>(y), v});
    }
  }
  return out;
}

void write_candidates_csv(std::span<const Treetop> candidates, const std::filesystem::path& path) {
  std::string s = "x,y,height\n";
  for (const auto& c : candidates)
    s += std::to_string(c.x) + "," + std::to_string(c.y) + "," + csv::format_float(c.height) + "\n";
  csv::write_file(path, s);
}

CandidateSet read_candidates_csv(const std::filesystem::path& path) {
  auto t = csv::read_table(path);
  const auto src = path.string();
  auto cx = t.column("x", src), cy = t.column("y", src);
  std::size_t ch = t.header.size();
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == "height") ch = i;
  CandidateSet out;
  for (const auto& row : t.rows) {
    Treetop c;
    c.x = static_cast<int>(csv::to_int(row[cx], src));
    c.y = static_cast<int>(csv::to_int(row[cy], src));
    c.height = ch < row.size() ? static_cast<float>(csv::to_double(row[ch], src)) : 0.0f;
    out.push_back(c);
  }
  return out;
}

}  // namespace canopy::treetop
