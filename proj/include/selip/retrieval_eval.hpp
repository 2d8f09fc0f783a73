#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "selip/matrix.hpp"

namespace selip {

struct CandidateSet {
  std::vector<std::string> candidates;  // unique, in order of first appearance
  std::vector<std::size_t> gold;        // gold[i] = candidate index of description i
};

CandidateSet dedupe_candidates(std::span<const std::string> descriptions);

struct RetrievalResult {
  std::map<std::size_t, double> top_k_accuracy;
  std::size_t n_images = 0;
  std::size_t n_candidates = 0;
  std::vector<std::size_t> ranks;  // 0-based rank of the gold candidate per image
};

// Candidates are ranked by cosine similarity, descending, with ties going to
// the lower candidate index. A zero-norm row has similarity 0 to everything.
RetrievalResult topk_accuracy(const Matrix& image_embeddings, const Matrix& candidate_embeddings,
                              std::span<const std::size_t> gold, std::span<const std::size_t> ks);

}  // namespace selip
