#include "selip/report_codec.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <utility>

#include "selip/error.hpp"
#include "selip/rng.hpp"

namespace selip {

namespace {

// Sentences that carry no finding. Normal paragraphs are built only from
// these, and abnormal paragraphs may open or close with one of them.
const std::vector<std::string>& boilerplate_sentences() {
  static const std::vector<std::string> sentences = {
      "The shape and size of the skull are normal.",
      "No abnormal signal is observed in the brain parenchyma.",
      "The morphology of the ventricles and sulci seen are without abnormal dilation or "
      "narrowing, and there is no midline shift.",
      "Skull morphology and size show no abnormalities.",
      "No abnormal signal is seen in the brain parenchyma.",
      "The ventricles and sulci show no dilation or narrowing, and the midline is centered.",
      "No abnormal findings are seen in the brain parenchyma.",
      "The midline structures are centered.",
  };
  return sentences;
}

constexpr std::size_t kPreamble = 3;  // "Skull morphology and size ..."
constexpr std::size_t kClosing = 7;   // "The midline structures are centered."

std::string lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Words plus standalone "," and "." tokens.
std::vector<std::string> lex(std::string_view text) {
  std::vector<std::string> tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::exchange(word, {}));
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == ',' || c == '.') {
      flush();
      tokens.emplace_back(1, c);
    } else {
      word.push_back(c);
    }
  }
  flush();
  return tokens;
}

std::string location(const Finding& f) {
  if (f.orientation == Orientation::None) return f.anatomic_site;
  return std::string(to_string(f.orientation)) + " " + f.anatomic_site;
}

std::string join_items(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += (i + 1 == items.size()) ? " and " : ", ";
    out += items[i];
  }
  return out;
}

std::string single_sentence(const Finding& f, std::size_t variant) {
  const std::string mod(to_string(f.modality));
  switch (variant) {
    case 0: return "In the " + location(f) + ", " + f.appearance + " is seen on " + mod + ".";
    case 1: return mod + " shows " + f.appearance + " in the " + location(f) + ".";
    default: return "On " + mod + ", the " + location(f) + " demonstrates " + f.appearance + ".";
  }
}

std::string merged_sentence(const std::vector<Finding>& group, std::size_t variant) {
  std::vector<std::string> items;
  for (const auto& f : group) {
    const std::string mod(to_string(f.modality));
    items.push_back(variant == 0 ? f.appearance + " is seen on " + mod : f.appearance + " on " + mod);
  }
  if (variant == 0) return "In the " + location(group.front()) + ", " + join_items(items) + ".";
  return "The " + location(group.front()) + " shows " + join_items(items) + ".";
}

bool starts_with_modality(const std::string& sentence) {
  for (Modality m : kAllModalities) {
    const auto name = to_string(m);
    if (sentence.compare(0, name.size(), name) == 0 && sentence.size() > name.size() &&
        sentence[name.size()] == ' ') {
      return true;
    }
  }
  return false;
}

// Recursive-descent recognizer over lexed tokens. Vocabulary phrases may be
// prefixes of one another, so phrase matches are enumerated longest first and
// the grammar backtracks over them.
class ReportParser {
 public:
  ReportParser(std::vector<std::string> tokens, const Vocabulary& vocab)
      : tokens_(std::move(tokens)) {
    for (const auto& site : vocab.finding_sites()) sites_.push_back({lex(site), site});
    for (const auto& app : vocab.finding_appearances()) appearances_.push_back({lex(app), app});
    for (Modality m : kAllModalities) modalities_.push_back({{std::string(to_string(m))}, m});
    for (const auto& c : known_connectives()) {
      if (!c.empty()) connectives_.push_back(lex(lower(c)));
    }
    for (const auto& s : boilerplate_sentences()) boilerplate_.push_back(lex(lower(s)));
  }

  std::vector<Finding> parse() {
    if (tokens_.empty()) fail("empty text");
    std::vector<Finding> findings;
    while (pos_ < tokens_.size()) {
      if (skip_boilerplate()) continue;
      if (!sentence(findings)) fail("unrecognized sentence starting at token " + std::to_string(pos_));
    }
    return findings;
  }

 private:
  template <typename V>
  struct Phrase {
    std::vector<std::string> words;
    V value;
  };

  [[noreturn]] static void fail(const std::string& why) { throw Error(ErrorCode::ParseFailure, why); }

  bool keyword(std::string_view word) {
    if (pos_ < tokens_.size() && lower(tokens_[pos_]) == word) {
      ++pos_;
      return true;
    }
    return false;
  }

  bool keywords(std::initializer_list<std::string_view> words) {
    const std::size_t start = pos_;
    for (auto w : words) {
      if (!keyword(w)) {
        pos_ = start;
        return false;
      }
    }
    return true;
  }

  bool exact_words(const std::vector<std::string>& words, bool case_insensitive) {
    if (pos_ + words.size() > tokens_.size()) return false;
    for (std::size_t i = 0; i < words.size(); ++i) {
      const auto& tok = tokens_[pos_ + i];
      if (case_insensitive ? lower(tok) != words[i] : tok != words[i]) return false;
    }
    pos_ += words.size();
    return true;
  }

  // Matches at the current position, longest phrase first.
  template <typename V>
  std::vector<std::pair<V, std::size_t>> matches(const std::vector<Phrase<V>>& phrases) {
    std::vector<std::pair<V, std::size_t>> out;
    const std::size_t start = pos_;
    for (const auto& p : phrases) {
      if (exact_words(p.words, false)) out.emplace_back(p.value, pos_);
      pos_ = start;
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
  }

  bool skip_boilerplate() {
    for (const auto& words : boilerplate_) {
      if (exact_words(words, true)) return true;
    }
    return false;
  }

  bool sentence(std::vector<Finding>& out) {
    const std::size_t start = pos_;
    const std::size_t mark = out.size();
    for (const auto& words : connectives_) {
      if (exact_words(words, true)) {
        if (keyword(",") && body(out)) return true;
        pos_ = start;
        out.resize(mark);
      }
    }
    if (body(out)) return true;
    pos_ = start;
    out.resize(mark);
    return false;
  }

  using Rule = std::function<bool(std::vector<Finding>&)>;

  bool body(std::vector<Finding>& out) {
    const std::size_t start = pos_;
    const std::size_t mark = out.size();
    const Rule rules[] = {
        [this](auto& o) { return seen_in_list(o); },
        [this](auto& o) { return modality_shows(o); },
        [this](auto& o) { return on_modality(o); },
        [this](auto& o) { return location_shows_list(o); },
    };
    for (const auto& rule : rules) {
      if (rule(out)) return true;
      pos_ = start;
      out.resize(mark);
    }
    return false;
  }

  // Calls `next` for every way of matching a location here; stops at the first
  // continuation that succeeds.
  bool with_location(const std::function<bool(Orientation, const std::string&)>& next) {
    const std::size_t start = pos_;
    Orientation orientation = Orientation::None;
    for (Orientation o : {Orientation::Left, Orientation::Right, Orientation::Bilateral}) {
      if (keyword(to_string(o))) {
        orientation = o;
        break;
      }
    }
    const std::size_t after_orientation = pos_;
    for (const auto& [site, end] : matches(sites_)) {
      pos_ = end;
      if (next(orientation, site)) return true;
      pos_ = after_orientation;
    }
    pos_ = start;
    return false;
  }

  // item := APPEARANCE <infix words> MODALITY, items separated by "," or "and",
  // terminated by ".".
  bool item_list(Orientation orientation, const std::string& site,
                 std::initializer_list<std::string_view> infix, std::vector<Finding>& out) {
    const std::size_t start = pos_;
    const std::size_t mark = out.size();
    for (const auto& [appearance, app_end] : matches(appearances_)) {
      pos_ = app_end;
      if (!keywords(infix)) continue;
      for (const auto& [modality, mod_end] : matches(modalities_)) {
        pos_ = mod_end;
        out.push_back(Finding{modality, orientation, site, appearance});
        if (keyword(".")) return true;
        const std::size_t sep = pos_;
        if ((keyword(",") || keyword("and")) && item_list(orientation, site, infix, out)) return true;
        pos_ = sep;
        out.resize(mark);
      }
    }
    pos_ = start;
    out.resize(mark);
    return false;
  }

  // In the LOC, APP is seen on MOD[, APP is seen on MOD]* [and APP is seen on MOD].
  bool seen_in_list(std::vector<Finding>& out) {
    if (!keywords({"in", "the"})) return false;
    return with_location([&](Orientation o, const std::string& site) {
      const std::size_t here = pos_;
      if (keyword(",") && item_list(o, site, {"is", "seen", "on"}, out)) return true;
      pos_ = here;
      return false;
    });
  }

  // The LOC shows APP on MOD[, APP on MOD]* [and APP on MOD].
  bool location_shows_list(std::vector<Finding>& out) {
    if (!keyword("the")) return false;
    return with_location([&](Orientation o, const std::string& site) {
      const std::size_t here = pos_;
      if (keyword("shows") && item_list(o, site, {"on"}, out)) return true;
      pos_ = here;
      return false;
    });
  }

  // MOD shows APP in the LOC.
  bool modality_shows(std::vector<Finding>& out) {
    const std::size_t start = pos_;
    for (const auto& [modality, mod_end] : matches(modalities_)) {
      pos_ = mod_end;
      if (!keyword("shows")) continue;
      const std::size_t app_start = pos_;
      for (const auto& [appearance, app_end] : matches(appearances_)) {
        pos_ = app_end;
        if (!keywords({"in", "the"})) continue;
        const bool ok = with_location([&](Orientation o, const std::string& site) {
          if (!keyword(".")) return false;
          out.push_back(Finding{modality, o, site, appearance});
          return true;
        });
        if (ok) return true;
      }
      pos_ = app_start;
    }
    pos_ = start;
    return false;
  }

  // On MOD, the LOC demonstrates APP.
  bool on_modality(std::vector<Finding>& out) {
    if (!keyword("on")) return false;
    const std::size_t start = pos_;
    for (const auto& [modality, mod_end] : matches(modalities_)) {
      pos_ = mod_end;
      if (!keywords({",", "the"})) continue;
      const bool ok = with_location([&](Orientation o, const std::string& site) {
        const std::size_t here = pos_;
        if (!keyword("demonstrates")) return false;
        for (const auto& [appearance, app_end] : matches(appearances_)) {
          pos_ = app_end;
          if (keyword(".")) {
            out.push_back(Finding{modality, o, site, appearance});
            return true;
          }
        }
        pos_ = here;
        return false;
      });
      if (ok) return true;
    }
    pos_ = start;
    return false;
  }

  std::vector<std::string> tokens_;
  std::size_t pos_ = 0;
  std::vector<Phrase<std::string>> sites_;
  std::vector<Phrase<std::string>> appearances_;
  std::vector<Phrase<Modality>> modalities_;
  std::vector<std::vector<std::string>> connectives_;
  std::vector<std::vector<std::string>> boilerplate_;
};

}  // namespace

const std::vector<std::string>& known_connectives() {
  static const std::vector<std::string> connectives = {
      "", "Additionally", "In addition", "Also", "Furthermore", "Meanwhile", "Moreover"};
  return connectives;
}

void validate_style(const StyleConfig& style) {
  if (style.connective_set.empty()) {
    throw Error(ErrorCode::InvalidStyle, "connective set is empty", "connective_set");
  }
  const auto& known = known_connectives();
  for (const auto& c : style.connective_set) {
    if (std::find(known.begin(), known.end(), c) == known.end()) {
      throw Error(ErrorCode::InvalidStyle, "unrecognized connective '" + c + "'", "connective_set");
    }
  }
}

std::vector<StyleConfig> style_grid(std::uint64_t seed) {
  const std::vector<std::vector<std::string>> connective_sets = {
      {""}, {"Additionally", "Also"}, {"", "In addition", "Furthermore", "Meanwhile", "Moreover"}};
  std::vector<StyleConfig> grid;
  for (ClauseOrder order : {ClauseOrder::AsGiven, ClauseOrder::Shuffled}) {
    for (const auto& set : connective_sets) {
      for (bool merge : {false, true}) {
        grid.push_back(StyleConfig{order, set, merge, seed + grid.size()});
      }
    }
  }
  return grid;
}

const std::vector<std::string>& normal_paragraphs() {
  static const std::vector<std::string> paragraphs = [] {
    const auto& s = boilerplate_sentences();
    return std::vector<std::string>{
        s[0] + " " + s[1] + " " + s[2],
        s[3] + " " + s[4] + " " + s[5],
        s[6] + " " + s[7],
    };
  }();
  return paragraphs;
}

std::string generate_pseudo_report(const std::vector<Finding>& findings, const StyleConfig& style) {
  validate_style(style);
  Rng rng(style.seed);
  if (findings.empty()) return normal_paragraphs()[rng.uniform_index(normal_paragraphs().size())];

  std::vector<Finding> ordered = findings;
  if (style.clause_order == ClauseOrder::Shuffled) rng.shuffle(ordered);

  // Groups keep first-appearance order; without merging every finding is its own group.
  std::vector<std::vector<Finding>> groups;
  if (style.merge_same_site) {
    std::map<std::pair<Orientation, std::string>, std::size_t> index;
    for (const auto& f : ordered) {
      const auto key = std::make_pair(f.orientation, f.anatomic_site);
      const auto [it, inserted] = index.emplace(key, groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(f);
    }
  } else {
    for (const auto& f : ordered) groups.push_back({f});
  }

  std::vector<std::string> sentences;
  const auto& bp = boilerplate_sentences();
  if (rng.bernoulli(0.5)) sentences.push_back(bp[kPreamble]);
  for (const auto& group : groups) {
    std::string sentence = group.size() == 1 ? single_sentence(group.front(), rng.uniform_index(3))
                                             : merged_sentence(group, rng.uniform_index(2));
    const bool first_finding = sentences.empty() || (sentences.size() == 1 && sentences[0] == bp[kPreamble]);
    const auto& connective = style.connective_set[rng.uniform_index(style.connective_set.size())];
    if (!first_finding && !connective.empty()) {
      if (!starts_with_modality(sentence)) {
        sentence[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(sentence[0])));
      }
      sentence = connective + ", " + sentence;
    }
    sentences.push_back(std::move(sentence));
  }
  if (rng.bernoulli(0.25)) sentences.push_back(bp[kClosing]);

  std::string text;
  for (const auto& s : sentences) {
    if (!text.empty()) text += ' ';
    text += s;
  }
  return text;
}

std::vector<Finding> parse_report(std::string_view text, const Vocabulary& vocab) {
  ReportParser parser(lex(text), vocab);
  return parser.parse();
}

ExtractionReport eval_extraction(const std::vector<ParsedReport>& predictions,
                                 const std::vector<std::vector<Finding>>& gold) {
  if (predictions.size() != gold.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(predictions.size()) + " predictions for " + std::to_string(gold.size()) +
                    " gold reports");
  }
  ExtractionReport report;
  report.n_reports = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!predictions[i]) {
      report.fn += gold[i].size();
      continue;
    }
    ++report.n_parsed;
    auto predicted = *predictions[i];
    auto expected = gold[i];
    std::sort(predicted.begin(), predicted.end());
    std::sort(expected.begin(), expected.end());
    std::vector<Finding> common;
    std::set_intersection(predicted.begin(), predicted.end(), expected.begin(), expected.end(),
                          std::back_inserter(common));
    report.tp += common.size();
    report.fp += predicted.size() - common.size();
    report.fn += expected.size() - common.size();
  }
  if (report.n_reports > 0) {
    report.parse_success_rate =
        static_cast<double>(report.n_parsed) / static_cast<double>(report.n_reports);
  }
  const std::size_t denominator = report.tp + report.fp + report.fn;
  if (denominator > 0) {
    report.accuracy = static_cast<double>(report.tp) / static_cast<double>(denominator);
  }
  return report;
}

}  // namespace selip
