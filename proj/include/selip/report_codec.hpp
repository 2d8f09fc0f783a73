#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "selip/report_model.hpp"

namespace selip {

enum class ClauseOrder { AsGiven, Shuffled };

// Writing-style knobs for pseudo report generation.
struct StyleConfig {
  ClauseOrder clause_order = ClauseOrder::AsGiven;
  // Phrases that may open the second and later sentences. The empty string
  // means "no connective". Every entry must be one of known_connectives().
  std::vector<std::string> connective_set = {""};
  bool merge_same_site = false;
  std::uint64_t seed = 0;
};

const std::vector<std::string>& known_connectives();
void validate_style(const StyleConfig& style);

// One representative of every combination of order, connective set and
// merge flag, seeded from `seed`.
std::vector<StyleConfig> style_grid(std::uint64_t seed);

// Fixed phrasings used for reports without findings.
const std::vector<std::string>& normal_paragraphs();

std::string generate_pseudo_report(const std::vector<Finding>& findings, const StyleConfig& style);

// Throws Error{ParseFailure} when the text is outside the generator language.
std::vector<Finding> parse_report(std::string_view text, const Vocabulary& vocab);

// nullopt marks a report whose parse failed.
using ParsedReport = std::optional<std::vector<Finding>>;

struct ExtractionReport {
  double parse_success_rate = 0.0;
  double accuracy = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t n_reports = 0;
  std::size_t n_parsed = 0;
};

ExtractionReport eval_extraction(const std::vector<ParsedReport>& predictions,
                                 const std::vector<std::vector<Finding>>& gold);

}  // namespace selip
