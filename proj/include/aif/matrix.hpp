#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace aif {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thread-local multiply-add counter. Every matmul-style kernel adds its
// exact madd count so tests can assert complexity claims.
inline thread_local std::uint64_t madd_counter = 0;

// Row-major float32 matrix. Accumulation happens in double; loop order is
// fixed so identical inputs always give bit-identical outputs.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), data(r * c, fill) {}

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  const float* row(std::size_t r) const { return data.data() + r * cols; }
  float* row(std::size_t r) { return data.data() + r * cols; }

  bool operator==(const DenseMatrix& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0f;
    return m;
  }
};

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b,
                          bool transpose_b = false) {
  const std::size_t inner = transpose_b ? b.cols : b.rows;
  const std::size_t out_cols = transpose_b ? b.rows : b.cols;
  if (a.cols != inner)
    throw ShapeError("matmul: inner dimension mismatch (" +
                     std::to_string(a.cols) + " vs " + std::to_string(inner) +
                     ")");
  DenseMatrix out(a.rows, out_cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const float* arow = a.row(i);
    for (std::size_t j = 0; j < out_cols; ++j) {
      double acc = 0.0;
      if (transpose_b) {
        const float* brow = b.row(j);
        for (std::size_t k = 0; k < inner; ++k)
          acc += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
      } else {
        for (std::size_t k = 0; k < inner; ++k)
          acc += static_cast<double>(arow[k]) *
                 static_cast<double>(b.data[k * b.cols + j]);
      }
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  madd_counter += static_cast<std::uint64_t>(a.rows) * out_cols * inner;
  return out;
}

// Row-wise softmax with per-row max subtraction.
inline DenseMatrix softmax_rows(const DenseMatrix& x) {
  DenseMatrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const float* in = x.row(i);
    float mx = in[0];
    for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      double e = std::exp(static_cast<double>(in[j]) - mx);
      out.at(i, j) = static_cast<float>(e);
      sum += e;
    }
    for (std::size_t j = 0; j < x.cols; ++j)
      out.at(i, j) = static_cast<float>(out.at(i, j) / sum);
  }
  return out;
}

inline DenseMatrix scale_by(const DenseMatrix& x, float s) {
  DenseMatrix out = x;
  for (auto& v : out.data) v *= s;
  return out;
}

// softmax_rows(q * k^T / scale) * v
inline DenseMatrix scaled_attention(const DenseMatrix& q, const DenseMatrix& k,
                                    const DenseMatrix& v, float scale) {
  if (q.cols != k.cols) throw ShapeError("scaled_attention: q/k dim mismatch");
  if (k.rows != v.rows) throw ShapeError("scaled_attention: k/v row mismatch");
  DenseMatrix logits = matmul(q, k, /*transpose_b=*/true);
  DenseMatrix w = softmax_rows(scale_by(logits, 1.0f / scale));
  return matmul(w, v);
}

enum class Activation { identity, relu };

struct DenseLayer {
  DenseMatrix weight;  // out x in
  DenseMatrix bias;    // 1 x out
  Activation act = Activation::identity;
};

using Mlp = std::vector<DenseLayer>;

inline DenseMatrix mlp_forward(const DenseMatrix& x, const Mlp& layers) {
  DenseMatrix h = x;
  for (const auto& layer : layers) {
    if (layer.weight.cols != h.cols)
      throw ShapeError("mlp_forward: layer input dim mismatch");
    DenseMatrix y = matmul(h, layer.weight, /*transpose_b=*/true);
    for (std::size_t i = 0; i < y.rows; ++i)
      for (std::size_t j = 0; j < y.cols; ++j) {
        float v = y.at(i, j) + layer.bias.at(0, j);
        if (layer.act == Activation::relu && v < 0.0f) v = 0.0f;
        y.at(i, j) = v;
      }
    h = std::move(y);
  }
  return h;
}

inline DenseMatrix mean_pool_rows(const DenseMatrix& x) {
  if (x.rows == 0) throw ShapeError("mean_pool_rows: empty input");
  DenseMatrix out(1, x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) acc += x.at(i, j);
    out.at(0, j) = static_cast<float>(acc / static_cast<double>(x.rows));
  }
  return out;
}

inline DenseMatrix concat_cols(const std::vector<const DenseMatrix*>& parts) {
  std::size_t rows = parts.empty() ? 0 : parts[0]->rows;
  std::size_t cols = 0;
  for (const auto* p : parts) {
    if (p->rows != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p->cols;
  }
  DenseMatrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    float* dst = out.row(i);
    for (const auto* p : parts) {
      const float* src = p->row(i);
      dst = std::copy(src, src + p->cols, dst);
    }
  }
  return out;
}

}  // namespace aif
