#include "selip/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "selip/error.hpp"

namespace selip {

namespace {

constexpr std::uint64_t kCodeSeedSalt = 0x9E3779B97F4A7C15ULL;
constexpr double kJointWeight = 0.5;

std::vector<std::vector<double>> gaussian_rows(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> rows(count, std::vector<double>(dim));
  for (auto& row : rows) {
    for (double& v : row) v = rng.normal();
  }
  return rows;
}

void accumulate(std::vector<double>& out, const std::vector<double>& row, double weight = 1.0) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += weight * row[i];
}

std::size_t index_of(const std::vector<std::string>& list, const std::string& token, ErrorCode code) {
  const auto it = std::find(list.begin(), list.end(), token);
  if (it == list.end()) throw Error(code, "'" + token + "' is not in the vocabulary", token);
  return static_cast<std::size_t>(it - list.begin());
}

}  // namespace

void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.n_subjects < 2) throw Error(ErrorCode::InvalidConfig, "n_subjects must be >= 2", "n_subjects");
  if (cfg.feature_dim < 4) throw Error(ErrorCode::InvalidConfig, "feature_dim must be >= 4", "feature_dim");
  if (cfg.max_findings < 1) throw Error(ErrorCode::InvalidConfig, "max_findings must be >= 1", "max_findings");
  if (!(cfg.noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "noise_sigma must be >= 0", "noise_sigma");
  auto rate = [](double r, const char* key) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::InvalidConfig, std::string(key) + " must lie in [0, 1]", key);
  };
  rate(cfg.near_duplicate_rate, "near_duplicate_rate");
  rate(cfg.normal_rate, "normal_rate");
}

GroundTruthCode::GroundTruthCode(const Vocabulary& vocab, std::size_t feature_dim, std::uint64_t seed)
    : feature_dim_(feature_dim), sites_(vocab.finding_sites()), appearances_(vocab.finding_appearances()) {
  Rng rng(seed ^ kCodeSeedSalt);
  modality_rows_ = gaussian_rows(kAllModalities.size(), feature_dim, rng);
  orientation_rows_ = gaussian_rows(kAllOrientations.size(), feature_dim, rng);
  site_rows_ = gaussian_rows(sites_.size(), feature_dim, rng);
  appearance_rows_ = gaussian_rows(appearances_.size(), feature_dim, rng);
  joint_rows_ = gaussian_rows(kAllOrientations.size() * sites_.size() * appearances_.size(), feature_dim, rng);
}

std::size_t GroundTruthCode::site_index(const std::string& site) const {
  return index_of(sites_, site, ErrorCode::OutOfVocabularySite);
}

std::size_t GroundTruthCode::appearance_index(const std::string& appearance) const {
  return index_of(appearances_, appearance, ErrorCode::OutOfVocabularyAppearance);
}

std::vector<double> GroundTruthCode::embed(std::span<const Finding> findings, Modality modality) const {
  std::vector<double> out(feature_dim_, 0.0);
  accumulate(out, modality_rows_[static_cast<std::size_t>(modality)]);
  // Fixed summation order so equal multisets give bit-equal vectors.
  std::vector<Finding> ordered(findings.begin(), findings.end());
  std::sort(ordered.begin(), ordered.end());
  for (const auto& f : ordered) {
    if (f.modality != modality) {
      throw Error(ErrorCode::UnknownModality, "finding on " + std::string(to_string(f.modality)) +
                                                  " embedded into a " + std::string(to_string(modality)) + " image");
    }
    const std::size_t o = static_cast<std::size_t>(f.orientation);
    const std::size_t s = site_index(f.anatomic_site);
    const std::size_t a = appearance_index(f.appearance);
    accumulate(out, orientation_rows_[o]);
    accumulate(out, site_rows_[s]);
    accumulate(out, appearance_rows_[a]);
    accumulate(out, joint_rows_[(o * sites_.size() + s) * appearances_.size() + a], kJointWeight);
  }
  return out;
}

std::vector<double> ground_truth_image(std::span<const Finding> findings, Modality modality,
                                       const GroundTruthCode& code, double noise_sigma, Rng& rng) {
  auto image = code.embed(findings, modality);
  if (noise_sigma > 0.0) {
    for (double& v : image) v += noise_sigma * rng.normal();
  }
  return image;
}

CorpusGenerator::CorpusGenerator(const SynthConfig& cfg)
    : cfg_(cfg),
      vocab_(default_vocabulary(cfg.n_sites, cfg.n_appearances)),
      code_(vocab_, cfg.feature_dim, cfg.seed) {
  validate_synth_config(cfg);
}

Finding CorpusGenerator::fresh_finding(Rng& rng) const {
  const auto sites = vocab_.finding_sites();
  const auto appearances = vocab_.finding_appearances();
  Finding f;
  f.modality = kAllModalities[rng.uniform_index(kAllModalities.size())];
  f.orientation = kAllOrientations[rng.uniform_index(kAllOrientations.size())];
  f.anatomic_site = sites[rng.uniform_index(sites.size())];
  f.appearance = appearances[rng.uniform_index(appearances.size())];
  return f;
}

Finding CorpusGenerator::perturbed_copy(const Finding& source, Rng& rng) const {
  // Replace one field with a different value from the same domain. A field
  // whose domain has a single value cannot change, so the copy stays exact.
  Finding f = source;
  auto pick_other = [&rng](const auto& domain, const auto& current) {
    std::vector<std::decay_t<decltype(current)>> others;
    for (const auto& v : domain) {
      if (!(v == current)) others.push_back(v);
    }
    return others.empty() ? current : others[rng.uniform_index(others.size())];
  };
  switch (rng.uniform_index(4)) {
    case 0: f.modality = pick_other(kAllModalities, f.modality); break;
    case 1: f.orientation = pick_other(kAllOrientations, f.orientation); break;
    case 2: f.anatomic_site = pick_other(vocab_.finding_sites(), f.anatomic_site); break;
    default: f.appearance = pick_other(vocab_.finding_appearances(), f.appearance); break;
  }
  return f;
}

SubjectRecord CorpusGenerator::build_subject(std::uint64_t subject_id, std::vector<Finding> findings,
                                             Rng& rng) const {
  SubjectRecord record;
  record.subject_id = subject_id;
  record.findings = std::move(findings);
  if (record.findings.empty()) {
    const auto normal = normal_description();
    for (Modality m : kAllModalities) {
      record.pairs.push_back({m, ground_truth_image({}, m, code_, cfg_.noise_sigma, rng), normal});
    }
    return record;
  }
  std::vector<Modality> modalities;
  for (const auto& f : record.findings) {
    if (std::find(modalities.begin(), modalities.end(), f.modality) == modalities.end()) {
      modalities.push_back(f.modality);
    }
  }
  for (Modality m : modalities) {
    std::vector<Finding> restricted;
    std::copy_if(record.findings.begin(), record.findings.end(), std::back_inserter(restricted),
                 [m](const Finding& f) { return f.modality == m; });
    auto image = ground_truth_image(restricted, m, code_, cfg_.noise_sigma, rng);
    record.pairs.push_back({m, std::move(image), render_description(restricted)});
  }
  return record;
}

SubjectRecord CorpusGenerator::sample_subject(Rng& rng) {
  std::vector<Finding> findings;
  if (!rng.bernoulli(cfg_.normal_rate)) {
    const std::size_t count = 1 + rng.uniform_index(cfg_.max_findings);
    for (std::size_t i = 0; i < count; ++i) {
      if (!pool_.empty() && rng.bernoulli(cfg_.near_duplicate_rate)) {
        findings.push_back(perturbed_copy(pool_[rng.uniform_index(pool_.size())], rng));
      } else {
        findings.push_back(fresh_finding(rng));
      }
    }
  }
  auto record = build_subject(next_id_++, std::move(findings), rng);
  pool_.insert(pool_.end(), record.findings.begin(), record.findings.end());
  return record;
}

std::vector<SubjectRecord> CorpusGenerator::generate() {
  Rng rng(cfg_.seed);
  std::vector<SubjectRecord> records;
  records.reserve(cfg_.n_subjects);
  for (std::size_t i = 0; i < cfg_.n_subjects; ++i) records.push_back(sample_subject(rng));
  return records;
}

double nearest_rank_percentile(std::span<const double> values, double percent) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of an empty array");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  // Rank ceil(p/100 * n) computed in per-mille integers to avoid 0.999 * n rounding.
  const auto n = static_cast<std::uint64_t>(sorted.size());
  const auto per_mille = static_cast<std::uint64_t>(std::llround(percent * 10.0));
  std::uint64_t rank = (per_mille * n + 999) / 1000;
  rank = std::clamp<std::uint64_t>(rank, 1, n);
  return sorted[rank - 1];
}

std::vector<double> preprocess_intensities(std::span<const double> raw) {
  if (raw.empty()) throw Error(ErrorCode::EmptyInput, "no intensities to preprocess");
  const double ceiling = nearest_rank_percentile(raw, 99.9);
  std::vector<double> out(raw.begin(), raw.end());
  for (double& v : out) v = std::min(v, ceiling);
  const auto [lo_it, hi_it] = std::minmax_element(out.begin(), out.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  for (double& v : out) v = range > 0.0 ? (v - lo) / range : 0.0;
  return out;
}

DatasetSplit split_dataset(const std::vector<SubjectRecord>& records, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "train_fraction must lie in (0, 1)", "train_fraction");
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(records.size())));
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  DatasetSplit split;
  for (auto i : train_idx) split.train.push_back(records[i]);
  for (auto i : test_idx) split.test.push_back(records[i]);
  return split;
}

}  // namespace selip
