#pragma once

// Species cohabitation prior: parsing and validation of the symmetric
// matrix, expert corrections, off-diagonal damping and row normalization
// into per-class conditional priors. Prompt rendering for the LLM that
// produces the matrix lives here too; the network client is in llm_client.hpp.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace canopy::cohab {

/// Marks a pair the LLM could not score.
inline constexpr double kMissing = -1.0;

struct CohabitationMatrix {
  std::vector<std::string> species;
  std::vector<double> values;  // row-major, size() x size()
  double radius_m = 20.0;

  std::size_t size() const noexcept { return species.size(); }
  double at(std::size_t i, std::size_t j) const noexcept { return values[i * size() + j]; }
  double& at(std::size_t i, std::size_t j) noexcept { return values[i * size() + j]; }

  std::size_t index_of(std::string_view name) const;
  bool has_missing() const noexcept;

  /// Unit diagonal, symmetry within 1e-9, entries in [0,1] or the sentinel.
  /// The error message lists every offending cell.
  void validate() const;

  static CohabitationMatrix identity(std::vector<std::string> species);
};

/// Row-stochastic conditional prior; row u is the distribution of a
/// neighbour's class given a parent of class u.
struct ScaledPrior {
  std::vector<std::string> species;
  std::vector<double> pi;

  std::size_t size() const noexcept { return species.size(); }
  double at(std::size_t u, std::size_t v) const noexcept { return pi[u * size() + v]; }
  std::span<const double> row(std::size_t u) const noexcept {
    return {pi.data() + u * size(), size()};
  }

  void validate() const;
  static ScaledPrior uniform(std::vector<std::string> species);
};

struct PromptParams {
  std::vector<std::string> species;
  int min_sources_per_pair = 2;
  int max_sources_per_pair = 4;
  double distance_m = 20.0;
  std::string region = "Central-Eastern Europe";
  std::string additional_info;

  void validate() const;
};

struct ExpertDelta {
  std::string species_i;
  std::string species_j;
  double delta = 0;
};

/// First row `,sp1,sp2,...`; each further row `spN,v1,v2,...` in header order.
CohabitationMatrix parse_matrix_csv(std::string_view text);
/// Same layout, six decimals.
std::string serialize_matrix_csv(const CohabitationMatrix& m);

/// Text strictly between the ===CSV=== and ===LATEX=== markers, trimmed,
/// with CRLF normalized to LF.
std::string extract_csv_section(std::string_view llm_reply);

/// Fills the cohabitation prompt template; the species list is appended
/// one name per line.
std::string render_prompt(const PromptParams& params);

std::vector<ExpertDelta> parse_deltas_csv(std::string_view text);

/// Adds each delta symmetrically and clamps to [0,1]. Diagonal targets,
/// unknown species and sentinel cells are rejected.
CohabitationMatrix apply_expert_deltas(const CohabitationMatrix& m,
                                       std::span<const ExpertDelta> deltas);

/// Replaces every sentinel with `value` (in [0,1]).
CohabitationMatrix resolve_missing(const CohabitationMatrix& m, double value = 0.0);

/// C'[u][u] = C[u][u]; C'[u][v] = delta_scale * C[u][v] otherwise.
CohabitationMatrix scale_offdiagonal(const CohabitationMatrix& m, double delta_scale = 0.75);

/// pi[u][v] = C'[u][v] / sum_k C'[u][k].
ScaledPrior row_normalize(const CohabitationMatrix& scaled);

std::string serialize_prior_csv(const ScaledPrior& prior);
ScaledPrior parse_prior_csv(std::string_view text);

}  // namespace canopy::cohab
