#include "selip/similarity.hpp"

#include <algorithm>
#include <cctype>

#include "selip/error.hpp"

namespace selip {

namespace {

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

std::string normalize_token(std::string token, const TokenizerConfig& cfg) {
  if (cfg.strip_punctuation) {
    std::erase_if(token, [](char c) { return is_ascii_punct(static_cast<unsigned char>(c)); });
  }
  if (cfg.lowercase) {
    for (char& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return token;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: treat as its own token
}

template <typename T>
std::size_t multiset_intersection_size(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t i = 0, j = 0, common = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++common;
      ++i;
      ++j;
    }
  }
  return common;
}

double dice(std::size_t common, std::size_t len_a, std::size_t len_b) {
  return 2.0 * static_cast<double>(common) / static_cast<double>(len_a + len_b);
}

// Sum in ascending order, then divide by the pair count.
double ordered_mean(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

std::vector<std::string> sorted_tokens(std::string_view text, const TokenizerConfig& cfg) {
  auto tokens = tokenize(text, cfg);
  if (tokens.empty()) {
    throw Error(ErrorCode::EmptyClause, "clause '" + std::string(text) + "' has no tokens");
  }
  std::sort(tokens.begin(), tokens.end());
  return tokens;
}

double semantic_weight(const Clause& a, const Clause& b) {
  const double w_loc = (a.orientation() == b.orientation() && a.site() == b.site()) ? 1.0 : 0.0;
  const double w_per = a.appearance() == b.appearance() ? 1.0 : 0.0;
  return w_loc + w_per;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& cfg) {
  std::vector<std::string> tokens;
  if (cfg.mode == TokenMode::Word) {
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      auto token = normalize_token(std::move(word), cfg);
      word.clear();
      if (!token.empty()) tokens.push_back(std::move(token));
    };
    for (char c : text) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        flush();
      } else {
        word.push_back(c);
      }
    }
    flush();
  } else {
    for (std::size_t i = 0; i < text.size();) {
      const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      std::string piece(text.substr(i, len));
      i += len;
      if (len == 1 && std::isspace(static_cast<unsigned char>(piece[0]))) continue;
      auto token = normalize_token(std::move(piece), cfg);
      if (!token.empty()) tokens.push_back(std::move(token));
    }
  }
  return tokens;
}

double tdc(std::string_view a, std::string_view b, const TokenizerConfig& cfg) {
  const auto ta = sorted_tokens(a, cfg);
  const auto tb = sorted_tokens(b, cfg);
  return dice(multiset_intersection_size(ta, tb), ta.size(), tb.size());
}

double clause_similarity(const Clause& a, const Clause& b, const TokenizerConfig& cfg) {
  const double syntax = tdc(a.text, b.text, cfg);
  return 0.5 * syntax * semantic_weight(a, b);
}

double description_similarity(const Description& a, const Description& b, const TokenizerConfig& cfg) {
  std::vector<double> values;
  values.reserve(a.clauses.size() * b.clauses.size());
  for (const auto& ca : a.clauses) {
    for (const auto& cb : b.clauses) values.push_back(clause_similarity(ca, cb, cfg));
  }
  return ordered_mean(values);
}

SoftTargetMatrix batch_similarity_matrix(std::span<const Description> batch, const TokenizerConfig& cfg) {
  if (batch.size() < 2) {
    throw Error(ErrorCode::BatchTooSmall, "similarity batch needs at least 2 descriptions");
  }
  TokenInterner interner;
  std::vector<PreparedDescription> prepared;
  prepared.reserve(batch.size());
  for (const auto& d : batch) prepared.push_back(prepare_description(d, cfg, interner));
  std::vector<const PreparedDescription*> pointers;
  for (const auto& p : prepared) pointers.push_back(&p);
  return batch_similarity_matrix(pointers);
}

std::uint32_t TokenInterner::id(const std::string& token) {
  const auto [it, inserted] = ids_.emplace(token, static_cast<std::uint32_t>(ids_.size()));
  return it->second;
}

PreparedDescription prepare_description(const Description& description, const TokenizerConfig& cfg,
                                        TokenInterner& interner) {
  PreparedDescription prepared;
  for (const auto& clause : description.clauses) {
    PreparedClause pc;
    for (const auto& token : tokenize(clause.text, cfg)) pc.sorted_tokens.push_back(interner.id("t:" + token));
    if (pc.sorted_tokens.empty()) {
      throw Error(ErrorCode::EmptyClause, "clause '" + clause.text + "' has no tokens");
    }
    std::sort(pc.sorted_tokens.begin(), pc.sorted_tokens.end());
    pc.orientation = clause.orientation();
    pc.site = interner.id("s:" + std::string(clause.site()));
    pc.appearance = interner.id("a:" + std::string(clause.appearance()));
    prepared.clauses.push_back(std::move(pc));
  }
  return prepared;
}

double description_similarity(const PreparedDescription& a, const PreparedDescription& b) {
  std::vector<double> values;
  values.reserve(a.clauses.size() * b.clauses.size());
  for (const auto& ca : a.clauses) {
    for (const auto& cb : b.clauses) {
      const double syntax = dice(multiset_intersection_size(ca.sorted_tokens, cb.sorted_tokens),
                                 ca.sorted_tokens.size(), cb.sorted_tokens.size());
      const double w_loc = (ca.orientation == cb.orientation && ca.site == cb.site) ? 1.0 : 0.0;
      const double w_per = ca.appearance == cb.appearance ? 1.0 : 0.0;
      values.push_back(0.5 * syntax * (w_loc + w_per));
    }
  }
  return ordered_mean(values);
}

SoftTargetMatrix batch_similarity_matrix(std::span<const PreparedDescription* const> batch) {
  if (batch.size() < 2) {
    throw Error(ErrorCode::BatchTooSmall, "similarity batch needs at least 2 descriptions");
  }
  SoftTargetMatrix s{Matrix(batch.size(), batch.size()), batch.size()};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch.size(); ++j) s.values(i, j) = description_similarity(*batch[i], *batch[j]);
  }
  return s;
}

}  // namespace selip
