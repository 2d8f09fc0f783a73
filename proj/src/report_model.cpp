#include "selip/report_model.hpp"

#include <algorithm>
#include <set>

#include "selip/error.hpp"

namespace selip {

namespace {

constexpr std::array<std::string_view, 16> kSiteNames = {
    "basal ganglia",     "pons",           "thalamus",       "frontal lobe",
    "temporal lobe",     "parietal lobe",  "occipital lobe", "cerebellar hemisphere",
    "corona radiata",    "centrum semiovale", "periventricular white matter", "brainstem",
    "hippocampus",       "insula",         "corpus callosum", "ethmoid sinus"};

constexpr std::array<std::string_view, 12> kAppearanceNames = {
    "long T2 signal",     "long T1 signal",          "high signal",      "low signal",
    "restricted diffusion", "point-like long T2 signal", "patchy high signal", "mixed signal",
    "short T1 signal",    "flaky shadow",            "cystic change",    "nodular enhancement"};

bool valid_token(std::string_view token) {
  if (token.empty() || token.front() == ' ' || token.back() == ' ') return false;
  if (token.find_first_of(".,\n\t") != std::string_view::npos) return false;
  return token.find("  ") == std::string_view::npos;
}

std::string_view first_word(std::string_view token) {
  return token.substr(0, token.find(' '));
}

void check_tokens(const std::vector<std::string>& tokens, std::string_view what) {
  std::set<std::string_view> seen;
  for (const auto& token : tokens) {
    if (!valid_token(token)) {
      throw Error(ErrorCode::InvalidVocabulary, "malformed " + std::string(what) + " token '" + token + "'",
                  token);
    }
    if (!seen.insert(token).second) {
      throw Error(ErrorCode::InvalidVocabulary, "duplicate " + std::string(what) + " token '" + token + "'",
                  token);
    }
  }
}

}  // namespace

std::string_view to_string(Modality modality) {
  switch (modality) {
    case Modality::T1WI: return "T1WI";
    case Modality::T2WI: return "T2WI";
    case Modality::DWI: return "DWI";
    case Modality::ADC: return "ADC";
    case Modality::T2FLAIR: return "T2FLAIR";
  }
  return "?";
}

std::string_view to_string(Orientation orientation) {
  switch (orientation) {
    case Orientation::Left: return "left";
    case Orientation::Right: return "right";
    case Orientation::Bilateral: return "bilateral";
    case Orientation::None: return "none";
  }
  return "?";
}

std::optional<Modality> parse_modality(std::string_view text) {
  for (Modality m : kAllModalities) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

std::optional<Orientation> parse_orientation(std::string_view text) {
  for (Orientation o : kAllOrientations) {
    if (to_string(o) == text) return o;
  }
  return std::nullopt;
}

Vocabulary::Vocabulary(std::vector<std::string> sites, std::vector<std::string> appearances) {
  // The sentinel is moved to the front (or inserted) so both lists share one layout.
  std::erase(sites, std::string(kSentinelSite));
  std::erase(appearances, std::string(kSentinelAppearance));
  if (sites.empty()) throw Error(ErrorCode::InvalidVocabulary, "no anatomic sites", "sites");
  if (appearances.empty()) throw Error(ErrorCode::InvalidVocabulary, "no appearances", "appearances");
  check_tokens(sites, "site");
  check_tokens(appearances, "appearance");
  for (const auto& site : sites) {
    if (parse_orientation(first_word(site)).has_value()) {
      throw Error(ErrorCode::InvalidVocabulary, "site '" + site + "' starts with an orientation word",
                  site);
    }
  }
  sites_.reserve(sites.size() + 1);
  sites_.emplace_back(kSentinelSite);
  sites_.insert(sites_.end(), sites.begin(), sites.end());
  appearances_.reserve(appearances.size() + 1);
  appearances_.emplace_back(kSentinelAppearance);
  appearances_.insert(appearances_.end(), appearances.begin(), appearances.end());
}

std::vector<std::string> Vocabulary::finding_sites() const {
  return {sites_.begin() + 1, sites_.end()};
}

std::vector<std::string> Vocabulary::finding_appearances() const {
  return {appearances_.begin() + 1, appearances_.end()};
}

bool Vocabulary::has_site(std::string_view site) const {
  return std::find(sites_.begin(), sites_.end(), site) != sites_.end();
}

bool Vocabulary::has_appearance(std::string_view appearance) const {
  return std::find(appearances_.begin(), appearances_.end(), appearance) != appearances_.end();
}

Vocabulary default_vocabulary(std::size_t n_sites, std::size_t n_appearances) {
  std::vector<std::string> sites;
  for (std::size_t i = 0; i < n_sites; ++i) {
    sites.push_back(i < kSiteNames.size() ? std::string(kSiteNames[i])
                                          : "zone " + std::to_string(i + 1));
  }
  std::vector<std::string> appearances;
  for (std::size_t i = 0; i < n_appearances; ++i) {
    appearances.push_back(i < kAppearanceNames.size()
                              ? std::string(kAppearanceNames[i])
                              : "pattern " + std::to_string(i + 1) + " signal");
  }
  return Vocabulary(std::move(sites), std::move(appearances));
}

Finding validate_finding(const RawFinding& candidate, const Vocabulary& vocab) {
  const auto modality = parse_modality(candidate.modality);
  if (!modality) {
    throw Error(ErrorCode::UnknownModality, "unknown modality '" + candidate.modality + "'", "modality");
  }
  const auto orientation = parse_orientation(candidate.orientation);
  if (!orientation) {
    throw Error(ErrorCode::UnknownOrientation, "unknown orientation '" + candidate.orientation + "'",
                "orientation");
  }
  if (candidate.anatomic_site == kSentinelSite || !vocab.has_site(candidate.anatomic_site)) {
    throw Error(ErrorCode::OutOfVocabularySite,
                "anatomic site '" + candidate.anatomic_site + "' is not a finding site",
                "anatomic_site");
  }
  if (candidate.appearance == kSentinelAppearance || !vocab.has_appearance(candidate.appearance)) {
    throw Error(ErrorCode::OutOfVocabularyAppearance,
                "appearance '" + candidate.appearance + "' is not a finding appearance", "appearance");
  }
  return Finding{*modality, *orientation, candidate.anatomic_site, candidate.appearance};
}

std::string_view Clause::site() const {
  return finding ? std::string_view(finding->anatomic_site) : kSentinelSite;
}

std::string_view Clause::appearance() const {
  return finding ? std::string_view(finding->appearance) : kSentinelAppearance;
}

Orientation Clause::orientation() const {
  return finding ? finding->orientation : Orientation::None;
}

std::vector<Finding> Description::findings() const {
  std::vector<Finding> out;
  for (const auto& clause : clauses) {
    if (clause.finding) out.push_back(*clause.finding);
  }
  return out;
}

std::string render_clause(const Finding& finding) {
  std::string text = "In modal ";
  text += to_string(finding.modality);
  text += ", at ";
  if (finding.orientation != Orientation::None) {
    text += to_string(finding.orientation);
    text += ' ';
  }
  text += finding.anatomic_site;
  text += ", the appearance is ";
  text += finding.appearance;
  text += '.';
  return text;
}

Description normal_description() {
  return Description{std::string(kNormalExpression), {Clause{std::string(kNormalExpression), std::nullopt}}};
}

Description render_description(const std::vector<Finding>& findings) {
  if (findings.empty()) return normal_description();
  Description description;
  for (const auto& finding : findings) {
    Clause clause{render_clause(finding), finding};
    if (!description.text.empty()) description.text += kClauseSeparator;
    description.text += clause.text;
    description.clauses.push_back(std::move(clause));
  }
  return description;
}

}  // namespace selip
