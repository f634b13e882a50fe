#pragma once

#include <cmath>
#include <cstdint>

#include "aif/matrix.hpp"
#include "aif/rng.hpp"

namespace aif {

// n learnable bridge embeddings; fixed during inference.
struct BridgeSet {
  DenseMatrix b;  // n x d
  std::uint64_t model_version = 0;

  static BridgeSet init(std::uint64_t seed, std::size_t n, std::size_t d,
                        std::uint64_t model_version = 1) {
    BridgeSet s;
    s.b = DenseMatrix(n, d);
    fill_normal(s.b.data, mix64(seed, 0xb41d6eULL));
    s.model_version = model_version;
    return s;
  }
};

// User phase: W = softmax(B U^T / sqrt(d)), V = MLP(W U).
// Depends only on user-side inputs, so it runs in the async user engine.
inline DenseMatrix bea_user_phase(const DenseMatrix& bridges,
                                  const DenseMatrix& user_groups,
                                  const Mlp& f) {
  if (bridges.cols != user_groups.cols)
    throw ShapeError("bea_user_phase: bridge/user dim mismatch");
  if (user_groups.rows < 1)
    throw ShapeError("bea_user_phase: need at least one user group");
  const float scale = std::sqrt(static_cast<float>(bridges.cols));
  DenseMatrix logits = matmul(bridges, user_groups, /*transpose_b=*/true);
  DenseMatrix w = softmax_rows(scale_by(logits, 1.0f / scale));
  DenseMatrix agg = matmul(w, user_groups);
  return mlp_forward(agg, f);
}

// Item phase: w_hat = softmax(I B^T / sqrt(d)); runs nearline per item.
inline DenseMatrix bea_item_phase(const DenseMatrix& bridges,
                                  const DenseMatrix& items) {
  if (bridges.cols != items.cols)
    throw ShapeError("bea_item_phase: bridge/item dim mismatch");
  const float scale = std::sqrt(static_cast<float>(bridges.cols));
  DenseMatrix logits = matmul(items, bridges, /*transpose_b=*/true);
  return softmax_rows(scale_by(logits, 1.0f / scale));
}

// Serving: v_hat = w_hat V, exactly b*n*d' multiply-adds.
inline DenseMatrix bea_serve(const DenseMatrix& item_weights,
                             const DenseMatrix& user_vectors) {
  if (item_weights.cols != user_vectors.rows)
    throw ShapeError("bea_serve: inner dim mismatch");
  return matmul(item_weights, user_vectors);
}

// Reference path without bridges: every item attends over the full set of
// user groups, then goes through the same f.
inline DenseMatrix full_cross_oracle(const DenseMatrix& user_groups,
                                     const DenseMatrix& items, const Mlp& f) {
  if (items.cols != user_groups.cols)
    throw ShapeError("full_cross_oracle: item/user dim mismatch");
  const float scale = std::sqrt(static_cast<float>(user_groups.cols));
  DenseMatrix logits = matmul(items, user_groups, /*transpose_b=*/true);
  DenseMatrix w = softmax_rows(scale_by(logits, 1.0f / scale));
  DenseMatrix agg = matmul(w, user_groups);
  return mlp_forward(agg, f);
}

}  // namespace aif
