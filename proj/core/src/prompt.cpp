#include <string>

#include "canopy/cohabitation.hpp"
#include "csv.hpp"

namespace canopy::cohab {

namespace {

// Placeholders use {name}; every one must be substituted before sending.
constexpr const char* kTemplate = R"PROMPT(You are a meticulous forest ecology expert and digital librarian.
You perform careful web research and return clean, verifiable
outputs. If you have a claim you always provide the sources to
back it up

# TASK
1) Normalize species_list:
- Trim lines; drop empties/duplicates.
- Exclude non-species lines (e.g., "background", "inne", "lis_mar").
- If there is a ambiguity in understanding of the name (e.g. it can mean two different species)
use all options as distinct species.
- If a line contains "spp." mark flags.genus_level=true when used in pairs.
2) Generate ALL unordered species pairs (A,B), where A != B, A <= B alphabetically within the pair.
Consider neighbors at stand-scale (same stand or within {distance_m} m).
3) Divide those pairs into subgroups of 10-12. Prepare report for each subgroup
and in the end join them.
4) For EACH pair:
- Use web.search() to retrieve {min_sources_per_pair}-{max_sources_per_pair} authoritative,
verifiable sources that speak to stand-scale co-occurrence or shared habitat in the given
region. USING web.search() IS CRUCIAL DO NOT SKIP IT.
- For each species provide a source of its natural habitats. USE THEM in your reports, so
each pair has at least two sources - natural habitats of A and natural habitats of B - The
next sources if present should be about specific co-occurences.
- Take into consideration {region} and {additional_info}
- Prioritize:
a) EUNIS/JNCC/EEA official habitat pages,
b) Publisher DOI landing pages (via doi.org),
c) Government/NGO vegetation surveys or credible databases.
- If only weaker sources exist, BE SURE to include them (with working URLs), set
confidence="low" or "medium", and briefly explain in rationale why evidence is tentative.
- Those weaker sources may include university pages, or lesser known books, articles and
reports that are accessible.
- Be sure that if you find ANY source (be it prioritized sources or the weaker sources) for
given pair this pair MUST NOT be left without sources.
- If out-of-region (e.g., North American taxa with European species), set
flags.out_of_region=true and lower the score appropriately.
5) Scoring guidance:
- score in [0,1] is the likelihood of stand-scale adjacency in {region}.
- Provide score_low and score_high as a plausible range.
- High scores (>=0.7) only with strong, in-region, stand-scale evidence. 0.5 = plausible
but mixed evidence; 0.0-0.2 = unlikely or habitat mismatch.
- Keep rationale <= 240 chars; no newlines.
- If you have weaker sources set confidence to low.
6) If you cannot find sources, for neither cohabitation nor habitats do not include the pair.
7) Citations quality and formatting:
- DO NOT fabricate DOIs. If known, put bare DOI (e.g., "10.1000/xyz123") in "doi"; also include
the working URL in "url".
- Each source MUST have at least a working URL or a DOI landing page.
- Remove any bracket markers (no [...]), no smart quotes, no markdown.
- No newlines in any JSON string.
8) Output requirements:
- Output EXACTLY TWO sections in order, separated by these plain-text markers:

===CSV===

cohabitation symmetric matrix with rows and columns from all the tree_species with
cohabitation scores from the initial tree_species, -1.0 when score is unavailable and 1.0
on the diagonal (self-cohabitation), even if you did not find any cohabitation for them.

===LATEX=== <standalone .tex document>
- The LaTeX must:
* Use article class; packages: geometry, hyperref, longtable, booktabs, url, inputenc/fontenc.
* Include a longtable with columns: Species A, Species B, Score, Range, Confidence.
* Longtable rows must be separated with double "\\" char.
* After the table, include per-pair subsections with: italic Rationale, then bullet-style
paragraphs listing sources (Title - Authors; Year; DOI/URL). Escape LaTeX special chars.
* Show the score and the (low-high) range in each subsection header.
* For each pair you should have a subsection naming
- species A, species B
- Habitat A <citation> - Habitat B <citation>
- Other sources of co-occurence or lack of thereof (use citations)
- Rationale for your score based on Habitat A, Habitat B and other Sources - use bibliography
and citations instead of inline citing.

species_list:
{species_list})PROMPT";

void replace_all(std::string& s, std::string_view key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
}

std::string format_distance(double d) {
  // 20 renders as "20", 12.5 as "12.5".
  return csv::format_double(d);
}

}  // namespace

std::string render_prompt(const PromptParams& params) {
  params.validate();
  std::string species;
  for (const auto& sp : params.species) species += sp + "\n";
  std::string info = params.additional_info.empty() ? std::string("no additional information")
                                                    : params.additional_info;
  std::string out = kTemplate;
  replace_all(out, "{distance_m}", format_distance(params.distance_m));
  replace_all(out, "{min_sources_per_pair}", std::to_string(params.min_sources_per_pair));
  replace_all(out, "{max_sources_per_pair}", std::to_string(params.max_sources_per_pair));
  replace_all(out, "{region}", params.region);
  replace_all(out, "{additional_info}", info);
  replace_all(out, "{species_list}", species);
  return out;
}

}  // namespace canopy::cohab
