#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "selip/matrix.hpp"
#include "selip/report_model.hpp"

namespace selip {

enum class TokenMode { Word, Character };

struct TokenizerConfig {
  TokenMode mode = TokenMode::Word;
  bool lowercase = true;
  bool strip_punctuation = true;
};

// Word mode splits on whitespace; character mode yields one token per UTF-8
// code point (whitespace dropped). Punctuation stripping removes ASCII
// punctuation characters and drops tokens that become empty.
std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& cfg);

// Text Dice coefficient 2|a ∩ b| / (|a| + |b|) with multiset intersection.
double tdc(std::string_view a, std::string_view b, const TokenizerConfig& cfg);

// ½ · TDC · (w_loc + w_per). w_loc compares (orientation, site); w_per
// compares appearance. Sentinel clauses only match sentinel clauses.
double clause_similarity(const Clause& a, const Clause& b, const TokenizerConfig& cfg);

// Mean of clause similarities over all m·n clause pairs. The pair values are
// summed in ascending order, which makes the result bitwise symmetric.
double description_similarity(const Description& a, const Description& b, const TokenizerConfig& cfg);

struct SoftTargetMatrix {
  Matrix values;
  std::size_t n = 0;
};

SoftTargetMatrix batch_similarity_matrix(std::span<const Description> batch, const TokenizerConfig& cfg);

// Pre-tokenized form used on hot paths (the trainer builds S every
// iteration). Results are bit-identical to the string-based functions.
class TokenInterner {
 public:
  std::uint32_t id(const std::string& token);

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct PreparedClause {
  std::vector<std::uint32_t> sorted_tokens;
  Orientation orientation = Orientation::None;
  std::uint32_t site = 0;
  std::uint32_t appearance = 0;
};

struct PreparedDescription {
  std::vector<PreparedClause> clauses;
};

PreparedDescription prepare_description(const Description& description, const TokenizerConfig& cfg,
                                        TokenInterner& interner);
double description_similarity(const PreparedDescription& a, const PreparedDescription& b);
SoftTargetMatrix batch_similarity_matrix(std::span<const PreparedDescription* const> batch);

}  // namespace selip
