#pragma once

// Desk-scale trainer: gradient descent on the rank-alignment loss over a
// fixed synthetic batch. Runs in double precision so central-difference
// gradient checks are meaningful.

#include <cmath>
#include <cstdint>
#include <vector>

#include "aif/copr.hpp"
#include "aif/rng.hpp"

namespace aif {

struct DMat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  DMat() = default;
  DMat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static DMat random(std::size_t r, std::size_t c, std::uint64_t seed,
                     double scale) {
    DMat m(r, c);
    SplitMix64 g(seed);
    for (auto& v : m.data) v = g.normal() * scale;
    return m;
  }
};

inline DMat dmatmul(const DMat& a, const DMat& b, bool transpose_b = false) {
  std::size_t inner = transpose_b ? b.cols : b.rows;
  std::size_t out_cols = transpose_b ? b.rows : b.cols;
  DMat out(a.rows, out_cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < out_cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k)
        acc += a.at(i, k) * (transpose_b ? b.at(j, k) : b.at(k, j));
      out.at(i, j) = acc;
    }
  return out;
}

inline DMat dsoftmax_rows(const DMat& x) {
  DMat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      out.at(i, j) = std::exp(x.at(i, j) - mx);
      sum += out.at(i, j);
    }
    for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

struct DLayer {
  DMat weight;  // out x in
  DMat bias;    // 1 x out
  bool relu = false;
};

using DMlp = std::vector<DLayer>;

struct MlpTape {
  std::vector<DMat> inputs;   // input to each layer
  std::vector<DMat> preacts;  // pre-activation of each layer
};

inline DMat dmlp_forward(const DMat& x, const DMlp& mlp,
                         MlpTape* tape = nullptr) {
  DMat h = x;
  for (const auto& layer : mlp) {
    if (tape) tape->inputs.push_back(h);
    DMat pre = dmatmul(h, layer.weight, /*transpose_b=*/true);
    for (std::size_t i = 0; i < pre.rows; ++i)
      for (std::size_t j = 0; j < pre.cols; ++j)
        pre.at(i, j) += layer.bias.at(0, j);
    if (tape) tape->preacts.push_back(pre);
    if (layer.relu)
      for (auto& v : pre.data) v = std::max(v, 0.0);
    h = std::move(pre);
  }
  return h;
}

struct MlpGrads {
  std::vector<DMat> dweight;
  std::vector<DMat> dbias;
};

// Backprop through the tape; d_out is dL/d(output), same shape as output.
inline MlpGrads dmlp_backward(const DMlp& mlp, const MlpTape& tape,
                              DMat d_out) {
  MlpGrads g;
  g.dweight.resize(mlp.size());
  g.dbias.resize(mlp.size());
  for (std::size_t li = mlp.size(); li-- > 0;) {
    const auto& layer = mlp[li];
    const DMat& pre = tape.preacts[li];
    const DMat& in = tape.inputs[li];
    DMat dpre = d_out;
    if (layer.relu)
      for (std::size_t k = 0; k < dpre.data.size(); ++k)
        if (pre.data[k] <= 0.0) dpre.data[k] = 0.0;
    // dW = dpre^T * in, db = column sums of dpre, dIn = dpre * W
    g.dweight[li] = DMat(layer.weight.rows, layer.weight.cols);
    for (std::size_t o = 0; o < layer.weight.rows; ++o)
      for (std::size_t c = 0; c < layer.weight.cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < dpre.rows; ++r)
          acc += dpre.at(r, o) * in.at(r, c);
        g.dweight[li].at(o, c) = acc;
      }
    g.dbias[li] = DMat(1, layer.weight.rows);
    for (std::size_t o = 0; o < layer.weight.rows; ++o) {
      double acc = 0.0;
      for (std::size_t r = 0; r < dpre.rows; ++r) acc += dpre.at(r, o);
      g.dbias[li].at(0, o) = acc;
    }
    d_out = dmatmul(dpre, layer.weight);
  }
  return g;
}

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Fixed synthetic batch: scores come from a head MLP over features whose
// BEA block depends on the bridge embeddings, so both head and bridges are
// trainable. Scores pass through softplus to keep the ratio loss defined.
struct ToyTrainProblem {
  DMat bridges;       // n x d
  DMlp bea_mlp;       // d -> d'
  DMlp head;          // in -> hidden -> 1
  DMat user_groups;   // m x d
  DMat item_vecs;     // K x d
  DMat static_feats;  // K x s, fixed per-candidate features
  std::vector<double> bids;
  std::vector<std::size_t> teacher_rank;

  static ToyTrainProblem make(std::uint64_t seed, std::size_t candidates = 24,
                              std::size_t n = 2, std::size_t m = 4,
                              std::size_t d = 8, std::size_t dprime = 6,
                              std::size_t static_dim = 10,
                              std::size_t hidden = 8) {
    ToyTrainProblem p;
    SplitMix64 g(seed);
    p.bridges = DMat::random(n, d, g.next(), 1.0);
    p.bea_mlp = {{DMat::random(dprime, d, g.next(), 1.0 / std::sqrt(double(d))),
                  DMat::random(1, dprime, g.next(), 0.01), true},
                 {DMat::random(dprime, dprime, g.next(),
                               1.0 / std::sqrt(double(dprime))),
                  DMat::random(1, dprime, g.next(), 0.01), false}};
    std::size_t head_in = d + dprime + static_dim;
    p.head = {{DMat::random(hidden, head_in, g.next(),
                            1.0 / std::sqrt(double(head_in))),
               DMat::random(1, hidden, g.next(), 0.01), true},
              {DMat::random(1, hidden, g.next(), 1.0 / std::sqrt(double(hidden))),
               DMat::random(1, 1, g.next(), 0.01), false}};
    p.user_groups = DMat::random(m, d, g.next(), 1.0);
    p.item_vecs = DMat::random(candidates, d, g.next(), 1.0);
    p.static_feats = DMat::random(candidates, static_dim, g.next(), 1.0);
    p.bids.resize(candidates);
    for (auto& b : p.bids) b = 0.5 + g.uniform01();
    std::vector<std::size_t> order(candidates);
    for (std::size_t i = 0; i < candidates; ++i) order[i] = i;
    // random teacher permutation
    for (std::size_t i = candidates; i-- > 1;)
      std::swap(order[i], order[g.next() % (i + 1)]);
    p.teacher_rank.resize(candidates);
    for (std::size_t r = 0; r < candidates; ++r) p.teacher_rank[order[r]] = r + 1;
    return p;
  }

  DMat head_inputs(MlpTape* bea_tape = nullptr, DMat* item_w = nullptr) const {
    std::size_t d = bridges.cols;
    double scale = std::sqrt(static_cast<double>(d));
    DMat wu = dmatmul(bridges, user_groups, true);
    for (auto& v : wu.data) v /= scale;
    DMat w = dsoftmax_rows(wu);
    DMat agg = dmatmul(w, user_groups);
    DMat v_user = dmlp_forward(agg, bea_mlp, bea_tape);  // n x d'
    DMat wi = dmatmul(item_vecs, bridges, true);
    for (auto& v : wi.data) v /= scale;
    DMat w_item = dsoftmax_rows(wi);  // K x n
    if (item_w) *item_w = w_item;
    DMat bea_v = dmatmul(w_item, v_user);  // K x d'
    std::size_t cols = item_vecs.cols + bea_v.cols + static_feats.cols;
    DMat x(item_vecs.rows, cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
      std::size_t c = 0;
      for (std::size_t j = 0; j < item_vecs.cols; ++j)
        x.at(i, c++) = item_vecs.at(i, j);
      for (std::size_t j = 0; j < bea_v.cols; ++j)
        x.at(i, c++) = bea_v.at(i, j);
      for (std::size_t j = 0; j < static_feats.cols; ++j)
        x.at(i, c++) = static_feats.at(i, j);
    }
    return x;
  }

  std::vector<ScoredCandidate> score(MlpTape* head_tape = nullptr,
                                     DMat* raw_out = nullptr) const {
    DMat x = head_inputs();
    DMat raw = dmlp_forward(x, head, head_tape);
    if (raw_out) *raw_out = raw;
    std::vector<ScoredCandidate> out(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
      out[i] = {i, softplus(raw.at(i, 0)), bids[i]};
    return out;
  }

  double loss() const { return copr_loss(score(), teacher_rank); }

  // Analytic gradients for the head parameters via backprop.
  MlpGrads head_grad() const {
    MlpTape tape;
    DMat raw;
    DMat x = head_inputs();
    raw = dmlp_forward(x, head, &tape);
    std::vector<ScoredCandidate> scored(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
      scored[i] = {i, softplus(raw.at(i, 0)), bids[i]};
    auto dy = copr_loss_grad(scored, teacher_rank);
    DMat d_raw(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i)
      d_raw.at(i, 0) = dy[i] * sigmoid(raw.at(i, 0));  // softplus'
    return dmlp_backward(head, tape, d_raw);
  }
};

struct TrainResult {
  std::vector<double> loss_trajectory;
  bool diverged = false;
};

// Head updated with analytic gradients; bridges with central differences.
inline TrainResult toy_train(ToyTrainProblem problem, std::size_t steps,
                             double lr) {
  TrainResult res;
  res.loss_trajectory.reserve(steps + 1);
  res.loss_trajectory.push_back(problem.loss());
  const double initial = res.loss_trajectory.front();
  for (std::size_t step = 0; step < steps; ++step) {
    auto hg = problem.head_grad();
    DMat bridge_grad(problem.bridges.rows, problem.bridges.cols);
    const double h = 1e-6;
    for (std::size_t k = 0; k < problem.bridges.data.size(); ++k) {
      double saved = problem.bridges.data[k];
      problem.bridges.data[k] = saved + h;
      double lp = problem.loss();
      problem.bridges.data[k] = saved - h;
      double lm = problem.loss();
      problem.bridges.data[k] = saved;
      bridge_grad.data[k] = (lp - lm) / (2.0 * h);
    }
    for (std::size_t li = 0; li < problem.head.size(); ++li) {
      for (std::size_t k = 0; k < problem.head[li].weight.data.size(); ++k)
        problem.head[li].weight.data[k] -= lr * hg.dweight[li].data[k];
      for (std::size_t k = 0; k < problem.head[li].bias.data.size(); ++k)
        problem.head[li].bias.data[k] -= lr * hg.dbias[li].data[k];
    }
    for (std::size_t k = 0; k < problem.bridges.data.size(); ++k)
      problem.bridges.data[k] -= lr * bridge_grad.data[k];
    double l = problem.loss();
    res.loss_trajectory.push_back(l);
    if (l > 10.0 * initial) res.diverged = true;
  }
  return res;
}

}  // namespace aif
