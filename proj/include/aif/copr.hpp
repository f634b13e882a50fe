#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace aif {

struct ScoredCandidate {
  std::uint64_t item_id = 0;
  double score = 0.0;
  double bid = 1.0;
};

// Gain and discount both derive from the ranking-stage (teacher) position.
inline double ndcg_gain(std::size_t rank) {
  return 1.0 / static_cast<double>(rank);
}

inline double ndcg_discount(std::size_t rank) {
  return 1.0 / std::log2(1.0 + static_cast<double>(rank));
}

inline double delta_ndcg(std::size_t rank_i, std::size_t rank_j) {
  return std::abs(ndcg_gain(rank_i) - ndcg_gain(rank_j)) *
         std::abs(ndcg_discount(rank_i) - ndcg_discount(rank_j));
}

// L = sum_{rank_i < rank_j} dNDCG(i,j) * log(1 + e^{-(y_i bid_i / (y_j bid_j) - 1)})
// teacher_rank[k] is the 1-based ranking-stage position of candidate k.
inline double copr_loss(const std::vector<ScoredCandidate>& scored,
                        const std::vector<std::size_t>& teacher_rank) {
  if (scored.size() != teacher_rank.size())
    throw std::invalid_argument("copr_loss: rank/candidate size mismatch");
  for (const auto& c : scored)
    if (!(c.bid > 0.0))
      throw std::domain_error("copr_loss: bid must be positive");
  double loss = 0.0;
  for (std::size_t a = 0; a < scored.size(); ++a) {
    for (std::size_t b = a + 1; b < scored.size(); ++b) {
      // order the pair by teacher relevance: i is the better-ranked one
      std::size_t i = a, j = b;
      if (teacher_rank[j] < teacher_rank[i]) std::swap(i, j);
      double ratio = (scored[i].score * scored[i].bid) /
                     (scored[j].score * scored[j].bid);
      loss += delta_ndcg(teacher_rank[i], teacher_rank[j]) *
              std::log1p(std::exp(-(ratio - 1.0)));
    }
  }
  return loss;
}

// dL/dy_k for the loss above.
inline std::vector<double> copr_loss_grad(
    const std::vector<ScoredCandidate>& scored,
    const std::vector<std::size_t>& teacher_rank) {
  std::vector<double> grad(scored.size(), 0.0);
  for (std::size_t a = 0; a < scored.size(); ++a) {
    for (std::size_t b = a + 1; b < scored.size(); ++b) {
      std::size_t i = a, j = b;
      if (teacher_rank[j] < teacher_rank[i]) std::swap(i, j);
      double yi = scored[i].score * scored[i].bid;
      double yj = scored[j].score * scored[j].bid;
      double ratio = yi / yj;
      double w = delta_ndcg(teacher_rank[i], teacher_rank[j]);
      // d/dr log1p(exp(-(r-1))) = -1 / (1 + exp(r-1))
      double dr = -w / (1.0 + std::exp(ratio - 1.0));
      grad[i] += dr * scored[i].bid / yj;
      grad[j] += dr * (-ratio / scored[j].score);
    }
  }
  return grad;
}

}  // namespace aif
