#include "selip/retrieval_eval.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

#include "selip/error.hpp"

namespace selip {

namespace {

std::vector<double> inverse_norms(const Matrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double ss = 0.0;
    for (double v : m.row(r)) ss += v * v;
    out[r] = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
  }
  return out;
}

}  // namespace

CandidateSet dedupe_candidates(std::span<const std::string> descriptions) {
  CandidateSet out;
  std::unordered_map<std::string, std::size_t> index;
  out.gold.reserve(descriptions.size());
  for (const auto& text : descriptions) {
    const auto [it, inserted] = index.try_emplace(text, out.candidates.size());
    if (inserted) out.candidates.push_back(text);
    out.gold.push_back(it->second);
  }
  return out;
}

RetrievalResult topk_accuracy(const Matrix& image_embeddings, const Matrix& candidate_embeddings,
                              std::span<const std::size_t> gold, std::span<const std::size_t> ks) {
  const std::size_t n_images = image_embeddings.rows();
  const std::size_t n_candidates = candidate_embeddings.rows();
  if (image_embeddings.cols() != candidate_embeddings.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "image dim " + std::to_string(image_embeddings.cols()) +
                                                  " != text dim " + std::to_string(candidate_embeddings.cols()));
  }
  if (gold.size() != n_images) {
    throw Error(ErrorCode::DimensionMismatch, "gold map has " + std::to_string(gold.size()) + " entries for " +
                                                  std::to_string(n_images) + " images");
  }
  for (std::size_t k : ks) {
    if (k < 1 || k > n_candidates) {
      throw Error(ErrorCode::KOutOfRange,
                  "K = " + std::to_string(k) + " outside [1, " + std::to_string(n_candidates) + "]", std::to_string(k));
    }
  }
  for (std::size_t g : gold) {
    if (g >= n_candidates) {
      throw Error(ErrorCode::DimensionMismatch, "gold index " + std::to_string(g) + " out of range");
    }
  }

  const auto inv_img = inverse_norms(image_embeddings);
  const auto inv_txt = inverse_norms(candidate_embeddings);
  const Matrix dots = matmul_transposed(image_embeddings, candidate_embeddings);

  RetrievalResult result;
  result.n_images = n_images;
  result.n_candidates = n_candidates;
  result.ranks.resize(n_images);
  std::vector<double> sims(n_candidates);
  for (std::size_t i = 0; i < n_images; ++i) {
    for (std::size_t j = 0; j < n_candidates; ++j) sims[j] = dots(i, j) * inv_img[i] * inv_txt[j];
    const std::size_t g = gold[i];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n_candidates; ++j) {
      if (sims[j] > sims[g] || (sims[j] == sims[g] && j < g)) ++rank;
    }
    result.ranks[i] = rank;
  }
  for (std::size_t k : ks) {
    std::size_t hits = 0;
    for (std::size_t r : result.ranks) hits += r < k ? 1 : 0;
    result.top_k_accuracy[k] = n_images == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n_images);
  }
  return result;
}

}  // namespace selip
