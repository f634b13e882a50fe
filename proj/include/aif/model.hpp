#pragma once

#include <cmath>
#include <cstdint>

#include "aif/bea.hpp"
#include "aif/feature_store.hpp"
#include "aif/lsh.hpp"
#include "aif/matrix.hpp"
#include "aif/rng.hpp"

namespace aif {

struct ModelConfig {
  std::uint64_t seed = 7;
  std::size_t d_profile_in = 128;  // profile_feature_count * per_feature_dim
  std::size_t d_seq_in = 32;       // item emb + category emb per position
  std::size_t d = 32;              // shared projected dim
  std::size_t d_item_in = 64;      // attr_feature_count * attr_dim
  std::size_t item_hidden = 48;    // 64 -> 48 -> 32 reduction
  std::size_t bea_n = 8;           // bridge count
  std::size_t bea_m = 8;           // user feature groups
  std::size_t bea_dprime = 32;     // BEA output dim
  std::size_t lsh_bits = 32;       // signature length d'
  std::size_t d_mm = 64;
  std::size_t tier_count = 16;
  std::size_t head_hidden = 32;
};

inline DenseMatrix init_weight(std::size_t out, std::size_t in,
                               std::uint64_t seed) {
  DenseMatrix w(out, in);
  fill_normal(w.data, seed);
  const float scale = 1.0f / std::sqrt(static_cast<float>(in));
  for (auto& v : w.data) v *= scale;
  return w;
}

inline DenseLayer init_layer(std::size_t out, std::size_t in, Activation act,
                             std::uint64_t seed) {
  DenseLayer l;
  l.weight = init_weight(out, in, seed);
  l.bias = DenseMatrix(1, out);
  fill_normal(l.bias.data, mix64(seed, 0xb1a5ULL));
  for (auto& v : l.bias.data) v *= 0.01f;
  l.act = act;
  return l;
}

// All trained parameters of the pre-ranking model, built deterministically
// from a seed. Everything downstream treats this as immutable per
// model_version.
struct PrerankModel {
  ModelConfig cfg;
  std::uint64_t model_version = 1;

  DenseMatrix w_profile;  // d x d_profile_in
  DenseMatrix w_seq;      // d x d_seq_in
  Mlp user_ffn;           // d -> d (relu) -> d
  Mlp item_mlp;           // d_item_in -> item_hidden (relu) -> d
  BridgeSet bridges;      // bea_n x d
  Mlp bea_mlp;            // d -> d' (relu) -> d'
  EmbeddingTable bea_feature_table;  // user feature groups, dim d
  Mlp head;               // head_in -> head_hidden (relu) -> 1
  HashPlane plane;        // lsh_bits x d_mm
  DenseMatrix teacher;    // 1 x d_item_in, fixed relevance scorer

  // [u_self || u_profile_attn || item_vec || bea_v || din || tier || raw I]
  std::size_t head_input_dim() const {
    return cfg.d + cfg.d + cfg.d + cfg.bea_dprime + cfg.d + cfg.tier_count +
           cfg.d_item_in;
  }

  static PrerankModel create(const ModelConfig& cfg) {
    PrerankModel m;
    m.cfg = cfg;
    std::uint64_t s = cfg.seed;
    m.w_profile = init_weight(cfg.d, cfg.d_profile_in, mix64(s, 10));
    m.w_seq = init_weight(cfg.d, cfg.d_seq_in, mix64(s, 11));
    m.user_ffn = {init_layer(cfg.d, cfg.d, Activation::relu, mix64(s, 12)),
                  init_layer(cfg.d, cfg.d, Activation::identity, mix64(s, 13))};
    m.item_mlp = {
        init_layer(cfg.item_hidden, cfg.d_item_in, Activation::relu,
                   mix64(s, 14)),
        init_layer(cfg.d, cfg.item_hidden, Activation::identity, mix64(s, 15))};
    m.bridges = BridgeSet::init(mix64(s, 16), cfg.bea_n, cfg.d, m.model_version);
    m.bea_mlp = {
        init_layer(cfg.bea_dprime, cfg.d, Activation::relu, mix64(s, 17)),
        init_layer(cfg.bea_dprime, cfg.bea_dprime, Activation::identity,
                   mix64(s, 18))};
    m.bea_feature_table = {mix64(s, 19), 1 << 16, cfg.d};
    m.head = {init_layer(cfg.head_hidden, m.head_input_dim(), Activation::relu,
                         mix64(s, 20)),
              init_layer(1, cfg.head_hidden, Activation::identity,
                         mix64(s, 21))};
    m.plane = HashPlane::create(mix64(s, 22), cfg.lsh_bits, cfg.d_mm);
    m.teacher = init_weight(1, cfg.d_item_in, mix64(s, 23));
    return m;
  }

  // m groups of user-side feature embeddings for BEA, keyed by user id.
  DenseMatrix bea_user_groups(std::uint64_t user_id) const {
    DenseMatrix out(cfg.bea_m, cfg.d);
    for (std::size_t k = 0; k < cfg.bea_m; ++k) {
      DenseMatrix v = bea_feature_table.lookup(mix64(user_id, k));
      std::copy(v.data.begin(), v.data.end(), out.row(k));
    }
    return out;
  }

  double teacher_score(const DenseMatrix& item_embedding) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < item_embedding.cols; ++j)
      acc += static_cast<double>(item_embedding.at(0, j)) * teacher.at(0, j);
    return acc;
  }
};

}  // namespace aif
