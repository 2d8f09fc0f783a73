#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "selip/report_model.hpp"
#include "selip/rng.hpp"

namespace selip {

struct SynthConfig {
  std::size_t n_subjects = 2000;
  std::size_t n_sites = 12;
  std::size_t n_appearances = 8;
  std::size_t max_findings = 3;
  std::size_t feature_dim = 64;
  double noise_sigma = 0.1;
  double near_duplicate_rate = 0.3;
  double normal_rate = 0.1;
  std::uint64_t seed = 0;
};

void validate_synth_config(const SynthConfig& cfg);

struct ImageTextPair {
  Modality modality = Modality::T1WI;
  std::vector<double> image;
  Description description;
};

struct SubjectRecord {
  std::uint64_t subject_id = 0;
  std::vector<Finding> findings;  // empty for a normal subject
  std::vector<ImageTextPair> pairs;
};

// Fixed random linear map from one-hot finding blocks to feature space:
//   g(F, m) = B_mod[m] + sum_{f in F} (B_ori[o] + B_site[s] + B_app[a] + 0.5 * B_joint[o, s, a])
// The joint block makes g injective on finding multisets of one modality.
class GroundTruthCode {
 public:
  GroundTruthCode(const Vocabulary& vocab, std::size_t feature_dim, std::uint64_t seed);

  std::size_t feature_dim() const { return feature_dim_; }
  // `findings` must all carry `modality` (or be empty for a normal image).
  std::vector<double> embed(std::span<const Finding> findings, Modality modality) const;

 private:
  std::size_t site_index(const std::string& site) const;
  std::size_t appearance_index(const std::string& appearance) const;

  std::size_t feature_dim_;
  std::vector<std::string> sites_;
  std::vector<std::string> appearances_;
  std::vector<std::vector<double>> modality_rows_;
  std::vector<std::vector<double>> orientation_rows_;
  std::vector<std::vector<double>> site_rows_;
  std::vector<std::vector<double>> appearance_rows_;
  std::vector<std::vector<double>> joint_rows_;
};

// g(findings restricted to modality) plus iid N(0, noise_sigma^2) noise.
std::vector<double> ground_truth_image(std::span<const Finding> findings, Modality modality,
                                       const GroundTruthCode& code, double noise_sigma, Rng& rng);

// Sequential subject generator. Near-duplicate findings are drawn from the
// pool of findings produced by earlier calls, so the order of calls matters.
class CorpusGenerator {
 public:
  explicit CorpusGenerator(const SynthConfig& cfg);

  const Vocabulary& vocabulary() const { return vocab_; }
  const GroundTruthCode& code() const { return code_; }
  const SynthConfig& config() const { return cfg_; }

  SubjectRecord sample_subject(Rng& rng);
  // Applies the pairing rule to a fixed finding list: normal subjects pair all
  // five modalities with the normal description, otherwise one pair per
  // distinct modality mentioned (in first-mention order).
  SubjectRecord build_subject(std::uint64_t subject_id, std::vector<Finding> findings, Rng& rng) const;

  std::vector<SubjectRecord> generate();

 private:
  Finding fresh_finding(Rng& rng) const;
  Finding perturbed_copy(const Finding& source, Rng& rng) const;

  SynthConfig cfg_;
  Vocabulary vocab_;
  GroundTruthCode code_;
  std::vector<Finding> pool_;
  std::uint64_t next_id_ = 0;
};

// Clips values above the 99.9th percentile (nearest-rank) and min-max scales
// to [0, 1]; a constant input maps to zeros.
std::vector<double> preprocess_intensities(std::span<const double> raw);
double nearest_rank_percentile(std::span<const double> values, double percent);

struct DatasetSplit {
  std::vector<SubjectRecord> train;
  std::vector<SubjectRecord> test;
};

// Subject-level split; both sides keep the input order.
DatasetSplit split_dataset(const std::vector<SubjectRecord>& records, double train_fraction, std::uint64_t seed);

}  // namespace selip
