#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace selip {

enum class Modality { T1WI, T2WI, DWI, ADC, T2FLAIR };
enum class Orientation { Left, Right, Bilateral, None };

inline constexpr std::array<Modality, 5> kAllModalities = {
    Modality::T1WI, Modality::T2WI, Modality::DWI, Modality::ADC, Modality::T2FLAIR};
inline constexpr std::array<Orientation, 4> kAllOrientations = {
    Orientation::Left, Orientation::Right, Orientation::Bilateral, Orientation::None};

std::string_view to_string(Modality modality);
std::string_view to_string(Orientation orientation);
std::optional<Modality> parse_modality(std::string_view text);
std::optional<Orientation> parse_orientation(std::string_view text);

inline constexpr std::string_view kSentinelSite = "global";
inline constexpr std::string_view kSentinelAppearance = "normal";

// The fixed expression used for every modality of a subject without findings.
inline constexpr std::string_view kNormalExpression =
    "The shape and size of the skull are normal. No abnormal signal is observed in the brain "
    "parenchyma. The morphology of the ventricles and sulci seen are without abnormal dilation "
    "or narrowing, and there is no midline shift.";

inline constexpr std::string_view kClauseSeparator = " ";

struct Finding {
  Modality modality = Modality::T1WI;
  Orientation orientation = Orientation::None;
  std::string anatomic_site;
  std::string appearance;

  auto operator<=>(const Finding&) const = default;
  bool operator==(const Finding&) const = default;
};

// Unvalidated finding as it arrives from a file or another process.
struct RawFinding {
  std::string modality;
  std::string orientation;
  std::string anatomic_site;
  std::string appearance;
};

// Ordered, duplicate-free site and appearance tokens. The sentinel pair
// (global, normal) is always present and reserved for normal descriptions.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> sites, std::vector<std::string> appearances);

  // All tokens, sentinel first.
  const std::vector<std::string>& sites() const { return sites_; }
  const std::vector<std::string>& appearances() const { return appearances_; }

  // Tokens usable in real findings (sentinel excluded).
  std::vector<std::string> finding_sites() const;
  std::vector<std::string> finding_appearances() const;

  bool has_site(std::string_view site) const;
  bool has_appearance(std::string_view appearance) const;

 private:
  std::vector<std::string> sites_;
  std::vector<std::string> appearances_;
};

// Synthetic English vocabulary with the requested number of non-sentinel tokens.
Vocabulary default_vocabulary(std::size_t n_sites = 12, std::size_t n_appearances = 8);

Finding validate_finding(const RawFinding& candidate, const Vocabulary& vocab);

// One rendered clause and the structure behind it. An empty `finding` marks
// the normal sentinel clause.
struct Clause {
  std::string text;
  std::optional<Finding> finding;

  bool is_sentinel() const { return !finding.has_value(); }
  std::string_view site() const;
  std::string_view appearance() const;
  Orientation orientation() const;

  bool operator==(const Clause&) const = default;
};

struct Description {
  std::string text;
  std::vector<Clause> clauses;

  bool is_normal() const { return clauses.size() == 1 && clauses.front().is_sentinel(); }
  std::vector<Finding> findings() const;

  bool operator==(const Description&) const = default;
};

std::string render_clause(const Finding& finding);
Description render_description(const std::vector<Finding>& findings);
Description normal_description();

}  // namespace selip
