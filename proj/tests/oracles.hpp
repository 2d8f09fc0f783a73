#pragma once

// Reference implementations written independently of the library code paths.
// They favour directness over speed.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "selip/matrix.hpp"
#include "selip/report_model.hpp"
#include "selip/rng.hpp"

namespace oracle {

// Whitespace words, lowercased, ASCII punctuation removed, empty words dropped.
inline std::vector<std::string> words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) {
    std::string clean;
    for (char c : w) {
      if (std::ispunct(static_cast<unsigned char>(c))) continue;
      clean.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (!clean.empty()) out.push_back(clean);
  }
  return out;
}

inline double tdc(const std::string& a, const std::string& b) {
  std::map<std::string, int> ca, cb;
  const auto wa = words(a);
  const auto wb = words(b);
  for (const auto& w : wa) ++ca[w];
  for (const auto& w : wb) ++cb[w];
  int common = 0;
  for (const auto& [w, n] : ca) {
    auto it = cb.find(w);
    if (it != cb.end()) common += std::min(n, it->second);
  }
  return 2.0 * common / static_cast<double>(wa.size() + wb.size());
}

inline double clause_sim(const selip::Clause& a, const selip::Clause& b) {
  double w_loc = 0.0, w_per = 0.0;
  if (a.is_sentinel() && b.is_sentinel()) {
    w_loc = w_per = 1.0;
  } else if (!a.is_sentinel() && !b.is_sentinel()) {
    const auto& fa = *a.finding;
    const auto& fb = *b.finding;
    w_loc = (fa.orientation == fb.orientation && fa.anatomic_site == fb.anatomic_site) ? 1.0 : 0.0;
    w_per = fa.appearance == fb.appearance ? 1.0 : 0.0;
  }
  return 0.5 * tdc(a.text, b.text) * (w_loc + w_per);
}

// Mean over every clause pair. Pair values are accumulated smallest first.
inline double description_sim(const selip::Description& a, const selip::Description& b) {
  std::vector<double> v;
  for (std::size_t i = 0; i < a.clauses.size(); ++i) {
    for (std::size_t j = 0; j < b.clauses.size(); ++j) v.push_back(clause_sim(a.clauses[i], b.clauses[j]));
  }
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double cosine(const selip::Matrix& a, std::size_t i, const selip::Matrix& b, std::size_t j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    dot += a(i, k) * b(j, k);
    na += a(i, k) * a(i, k);
    nb += b(j, k) * b(j, k);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct Losses {
  double clip = 0.0;
  double se = 0.0;
  double total = 0.0;
};

// Scalar loops over the definitions; log-sum-exp with max shift.
inline Losses loss(const selip::Matrix& V, const selip::Matrix& T, const selip::Matrix* S, double tau, double alpha,
                   double beta, double eps) {
  const std::size_t n = V.rows();
  std::vector<std::vector<double>> C(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i][j] = cosine(V, i, T, j);

  auto log_softmax_row = [&](bool transposed, std::size_t i) {
    std::vector<double> z(n);
    for (std::size_t j = 0; j < n; ++j) z[j] = (transposed ? C[j][i] : C[i][j]) / tau;
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double x : z) s += std::exp(x - m);
    for (double& x : z) x = x - m - std::log(s);
    return z;
  };

  double l_v2t = 0.0, l_t2v = 0.0, kl_v2t = 0.0, kl_t2v = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto lv = log_softmax_row(false, i);
    const auto lt = log_softmax_row(true, i);
    l_v2t -= lv[i];
    l_t2v -= lt[i];
    if (S != nullptr) {
      double rs = 0.0, cs = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        rs += (*S)(i, j) + eps;
        cs += (*S)(j, i) + eps;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double q_row = ((*S)(i, j) + eps) / rs;
        const double q_col = ((*S)(j, i) + eps) / cs;
        kl_v2t += std::exp(lv[j]) * (lv[j] - std::log(q_row));
        kl_t2v += std::exp(lt[j]) * (lt[j] - std::log(q_col));
      }
    }
  }
  Losses out;
  out.clip = 0.5 * (l_v2t / n + l_t2v / n);
  out.se = 0.5 * (kl_v2t / n + kl_t2v / n);
  out.total = alpha * out.clip + beta * out.se;
  return out;
}

// Rank of the gold candidate after a full sort by (similarity desc, index asc).
// Similarity is dot * (1/|a|) * (1/|b|), the same rounding as the library, so
// that mathematically tied candidates also tie numerically.
inline std::vector<std::size_t> retrieval_ranks(const selip::Matrix& images, const selip::Matrix& cands,
                                                const std::vector<std::size_t>& gold) {
  auto inv_norm = [](const selip::Matrix& m, std::size_t r) {
    double ss = 0.0;
    for (std::size_t k = 0; k < m.cols(); ++k) ss += m(r, k) * m(r, k);
    return ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
  };
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t j = 0; j < cands.rows(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < images.cols(); ++k) dot += images(i, k) * cands(j, k);
      order.emplace_back(dot * inv_norm(images, i) * inv_norm(cands, j), j);
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (order[r].second == gold[i]) ranks.push_back(r);
    }
  }
  return ranks;
}

inline selip::Matrix random_matrix(std::size_t rows, std::size_t cols, selip::Rng& rng) {
  selip::Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

}  // namespace oracle
