#include "canopy/cohabitation.hpp"

#include <algorithm>
#include <cmath>

#include "canopy/error.hpp"
#include "csv.hpp"

namespace canopy::cohab {

namespace {

constexpr double kSymmetryTol = 1e-9;

bool is_missing(double v) noexcept { return v == kMissing; }

std::string cell_name(const std::vector<std::string>& sp, std::size_t i, std::size_t j) {
  return "(" + sp[i] + "," + sp[j] + ")";
}

struct Grid {
  std::vector<std::string> species;
  std::vector<double> values;
};

Grid parse_grid(std::string_view text, std::string_view what) {
  auto rows = csv::parse(text);
  if (rows.empty()) fail(ErrorKind::Validation, std::string(what) + ": empty CSV");
  Grid g;
  g.species.assign(rows.front().begin() + 1, rows.front().end());
  const std::size_t n = g.species.size();
  if (n == 0) fail(ErrorKind::Validation, std::string(what) + ": header names no species");
  if (rows.size() - 1 != n)
    fail(ErrorKind::Validation, std::string(what) + ": " + std::to_string(n) +
                                    " header columns but " + std::to_string(rows.size() - 1) +
                                    " data rows");
  g.values.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[i + 1];
    if (r.size() != n + 1)
      fail(ErrorKind::Validation, std::string(what) + ": ragged row " + std::to_string(i + 2) +
                                      " (" + std::to_string(r.size()) + " fields, expected " +
                                      std::to_string(n + 1) + ")");
    if (r[0] != g.species[i])
      fail(ErrorKind::Validation, std::string(what) + ": row label '" + r[0] +
                                      "' does not match column '" + g.species[i] + "'");
    for (std::size_t j = 0; j < n; ++j)
      g.values[i * n + j] = csv::to_double(r[j + 1], std::string(what) + " cell " +
                                                         cell_name(g.species, i, j));
  }
  return g;
}

std::string grid_csv(const std::vector<std::string>& species, const std::vector<double>& values,
                     bool fixed6) {
  const std::size_t n = species.size();
  std::string s;
  for (const auto& sp : species) s += "," + sp;
  s += "\n";
  for (std::size_t i = 0; i < n; ++i) {
    s += species[i];
    for (std::size_t j = 0; j < n; ++j) {
      const double v = values[i * n + j];
      s += "," + (fixed6 ? csv::format_fixed(v, 6) : csv::format_double(v));
    }
    s += "\n";
  }
  return s;
}

}  // namespace

std::size_t CohabitationMatrix::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < species.size(); ++i)
    if (species[i] == name) return i;
  fail(ErrorKind::Validation, "unknown species '" + std::string(name) + "'");
}

bool CohabitationMatrix::has_missing() const noexcept {
  return std::any_of(values.begin(), values.end(), is_missing);
}

void CohabitationMatrix::validate() const {
  const std::size_t n = size();
  if (values.size() != n * n)
    fail(ErrorKind::Validation, "cohabitation matrix holds " + std::to_string(values.size()) +
                                    " values for " + std::to_string(n) + " species");
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < n; ++i) {
    if (at(i, i) != 1.0)
      problems.push_back("diagonal " + cell_name(species, i, i) + " = " +
                         csv::format_double(at(i, i)) + ", expected 1");
    for (std::size_t j = 0; j < n; ++j) {
      const double v = at(i, j);
      if (!std::isfinite(v) || (!is_missing(v) && (v < 0.0 || v > 1.0)))
        problems.push_back("value " + csv::format_double(v) + " at " + cell_name(species, i, j) +
                           " outside [0,1] and not the -1 sentinel");
      if (j > i && !(std::abs(v - at(j, i)) <= kSymmetryTol))
        problems.push_back("asymmetric pair " + cell_name(species, i, j) + ": " +
                           csv::format_double(v) + " vs " + csv::format_double(at(j, i)));
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid cohabitation matrix:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::Validation, msg);
  }
}

CohabitationMatrix CohabitationMatrix::identity(std::vector<std::string> species) {
  CohabitationMatrix m;
  m.species = std::move(species);
  const std::size_t n = m.size();
  m.values.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

void ScaledPrior::validate() const {
  const std::size_t n = size();
  if (pi.size() != n * n) fail(ErrorKind::Validation, "prior has wrong number of entries");
  for (std::size_t u = 0; u < n; ++u) {
    double sum = 0;
    for (std::size_t v = 0; v < n; ++v) {
      const double p = at(u, v);
      if (!(p >= 0.0) || !std::isfinite(p))
        fail(ErrorKind::Validation, "prior entry (" + species[u] + "," + species[v] + ") is " +
                                        csv::format_double(p));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      fail(ErrorKind::Validation, "prior row '" + species[u] + "' sums to " +
                                      csv::format_double(sum));
  }
}

ScaledPrior ScaledPrior::uniform(std::vector<std::string> species) {
  ScaledPrior p;
  p.species = std::move(species);
  const std::size_t n = p.size();
  p.pi.assign(n * n, n ? 1.0 / static_cast<double>(n) : 0.0);
  return p;
}

void PromptParams::validate() const {
  if (species.empty()) fail(ErrorKind::Validation, "prompt needs a non-empty species list");
  if (min_sources_per_pair < 0 || min_sources_per_pair > max_sources_per_pair)
    fail(ErrorKind::Validation, "min_sources_per_pair must not exceed max_sources_per_pair");
  if (!(distance_m > 0)) fail(ErrorKind::Validation, "distance_m must be positive");
}

CohabitationMatrix parse_matrix_csv(std::string_view text) {
  auto g = parse_grid(text, "cohabitation CSV");
  CohabitationMatrix m;
  m.species = std::move(g.species);
  m.values = std::move(g.values);
  m.validate();
  return m;
}

std::string serialize_matrix_csv(const CohabitationMatrix& m) {
  return grid_csv(m.species, m.values, true);
}

std::string extract_csv_section(std::string_view llm_reply) {
  std::string text;
  text.reserve(llm_reply.size());
  for (std::size_t i = 0; i < llm_reply.size(); ++i) {
    if (llm_reply[i] == '\r') {
      text.push_back('\n');
      if (i + 1 < llm_reply.size() && llm_reply[i + 1] == '\n') ++i;
    } else {
      text.push_back(llm_reply[i]);
    }
  }
  static constexpr std::string_view kCsv = "===CSV===";
  static constexpr std::string_view kLatex = "===LATEX===";
  auto excerpt = [&] {
    return text.size() > 200 ? text.substr(0, 200) + "..." : text;
  };
  const auto c = text.find(kCsv);
  if (c == std::string::npos)
    fail(ErrorKind::Validation, "LLM reply has no ===CSV=== marker; reply begins: " + excerpt());
  const auto l = text.find(kLatex, c + kCsv.size());
  if (l == std::string::npos) {
    if (text.find(kLatex) != std::string::npos)
      fail(ErrorKind::Validation,
           "LLM reply has ===LATEX=== before ===CSV===; reply begins: " + excerpt());
    fail(ErrorKind::Validation, "LLM reply has no ===LATEX=== marker; reply begins: " + excerpt());
  }
  return csv::trim(std::string_view(text).substr(c + kCsv.size(), l - c - kCsv.size()));
}

std::vector<ExpertDelta> parse_deltas_csv(std::string_view text) {
  auto rows = csv::parse(text);
  std::vector<ExpertDelta> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (i == 0 && !r.empty() && r[0] == "species_i") continue;
    if (r.size() != 3)
      fail(ErrorKind::Validation, "delta CSV row " + std::to_string(i + 1) + " needs 3 fields");
    ExpertDelta d{r[0], r[1], csv::to_double(r[2], "delta CSV")};
    if (!(d.delta >= -1.0 && d.delta <= 1.0))
      fail(ErrorKind::Validation, "delta for (" + d.species_i + "," + d.species_j +
                                      ") outside [-1,1]");
    out.push_back(std::move(d));
  }
  return out;
}

CohabitationMatrix apply_expert_deltas(const CohabitationMatrix& m,
                                       std::span<const ExpertDelta> deltas) {
  m.validate();
  CohabitationMatrix out = m;
  for (const auto& d : deltas) {
    const auto i = out.index_of(d.species_i);
    const auto j = out.index_of(d.species_j);
    if (i == j)
      fail(ErrorKind::Validation, "delta on diagonal cell (" + d.species_i + "," + d.species_j +
                                      ") is not allowed");
    if (is_missing(out.at(i, j)))
      fail(ErrorKind::Validation, "delta targets unresolved sentinel at (" + d.species_i + "," +
                                      d.species_j + ")");
    const double v = std::clamp(out.at(i, j) + d.delta, 0.0, 1.0);
    out.at(i, j) = v;
    out.at(j, i) = v;
  }
  out.validate();
  return out;
}

CohabitationMatrix resolve_missing(const CohabitationMatrix& m, double value) {
  if (!(value >= 0.0 && value <= 1.0))
    fail(ErrorKind::Validation, "sentinel replacement must lie in [0,1]");
  CohabitationMatrix out = m;
  for (auto& v : out.values)
    if (is_missing(v)) v = value;
  out.validate();
  return out;
}

CohabitationMatrix scale_offdiagonal(const CohabitationMatrix& m, double delta_scale) {
  if (!(delta_scale > 0.0 && delta_scale <= 1.0))
    fail(ErrorKind::Validation, "delta_scale must lie in (0,1]");
  if (m.has_missing())
    fail(ErrorKind::Validation,
         "matrix still contains -1 sentinels; resolve them (e.g. --missing-as 0) before scaling");
  CohabitationMatrix out = m;
  const std::size_t n = m.size();
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (u != v) out.at(u, v) = delta_scale * m.at(u, v);
  return out;
}

ScaledPrior row_normalize(const CohabitationMatrix& scaled) {
  const std::size_t n = scaled.size();
  ScaledPrior p;
  p.species = scaled.species;
  p.pi.resize(n * n);
  for (std::size_t u = 0; u < n; ++u) {
    double sum = 0;
    for (std::size_t k = 0; k < n; ++k) sum += scaled.at(u, k);
    if (!(sum > 0))
      fail(ErrorKind::Numerical, "row '" + scaled.species[u] + "' has non-positive sum");
    for (std::size_t v = 0; v < n; ++v) p.pi[u * n + v] = scaled.at(u, v) / sum;
  }
  return p;
}

std::string serialize_prior_csv(const ScaledPrior& prior) {
  return grid_csv(prior.species, prior.pi, false);
}

ScaledPrior parse_prior_csv(std::string_view text) {
  auto g = parse_grid(text, "prior CSV");
  ScaledPrior p{std::move(g.species), std::move(g.values)};
  p.validate();
  return p;
}

}  // namespace canopy::cohab
