#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "aif/bea.hpp"
#include "aif/feature_store.hpp"
#include "aif/io.hpp"
#include "aif/matrix.hpp"
#include "aif/model.hpp"
#include "aif/rng.hpp"

namespace aif {

struct CacheKey {
  std::string request_id;
  std::string user_nickname;
  std::uint64_t digest = 0;

  static std::uint64_t make_digest(const std::string& request_id,
                                   const std::string& nickname) {
    return fnv1a64(request_id + "|" + nickname);
  }

  static CacheKey make(const std::string& request_id,
                       const std::string& nickname) {
    return {request_id, nickname, make_digest(request_id, nickname)};
  }
};

struct AsyncUserVector {
  CacheKey key;
  DenseMatrix u_self;          // 1 x d
  DenseMatrix u_profile_attn;  // 1 x d
  DenseMatrix bea_vectors;     // n x d'
  std::uint64_t created_at = 0;
  std::uint64_t model_version = 0;
};

// Eq. 1 projections.
inline std::pair<DenseMatrix, DenseMatrix> project_user(
    const DenseMatrix& u_profile, const DenseMatrix& u_seq,
    const DenseMatrix& w_profile, const DenseMatrix& w_seq) {
  return {matmul(u_profile, w_profile, /*transpose_b=*/true),
          matmul(u_seq, w_seq, /*transpose_b=*/true)};
}

// Attention part of Eq. 2, exposed separately so tests can check the
// convex-hull property before the FFN is applied.
inline DenseMatrix self_attention_pre_ffn(const DenseMatrix& seq) {
  if (seq.rows < 1) throw ShapeError("self_attention: empty sequence");
  const float scale = std::sqrt(static_cast<float>(seq.cols));
  return scaled_attention(seq, seq, seq, scale);
}

// Pooling(FFN(Softmax(seq seq^T / sqrt(d)) seq))
inline DenseMatrix self_attention_user(const DenseMatrix& seq,
                                       const Mlp& ffn) {
  return mean_pool_rows(mlp_forward(self_attention_pre_ffn(seq), ffn));
}

// Eq. 3.
inline DenseMatrix profile_cross_attention(const DenseMatrix& profile,
                                           const DenseMatrix& seq) {
  const float scale = std::sqrt(static_cast<float>(seq.cols));
  return scaled_attention(profile, seq, seq, scale);
}

struct UserCacheMetrics {
  std::atomic<std::uint64_t> hits{0};
  std::atomic<std::uint64_t> misses{0};
  std::atomic<std::uint64_t> evictions{0};
  std::atomic<std::uint64_t> recomputes{0};
};

inline std::string user_nickname(std::uint64_t user_id) {
  return "user_" + std::to_string(user_id);
}

// Online asynchronous user-side engine: computes the combined user vector
// once per (request_id, nickname) key and caches it. Concurrent callers on
// one key trigger at most one computation.
class UserAsyncEngine {
 public:
  UserAsyncEngine(const FeatureStore& store, const PrerankModel& model,
                  std::size_t capacity = 100000)
      : store_(store), model_(model), capacity_(capacity) {}

  // Pure computation path; also used inline by the sequential pipeline.
  AsyncUserVector compute(const UserState& user,
                          const std::string& request_id) const {
    DenseMatrix u_profile = materialize_profile(user, store_.tables());
    DenseMatrix u_seq = materialize_sequence(user.behavior_sequence,
                                             store_.tables());
    auto [p_hat, s_hat] =
        project_user(u_profile, u_seq, model_.w_profile, model_.w_seq);
    AsyncUserVector v;
    v.key = CacheKey::make(request_id, user_nickname(user.user_id));
    v.u_self = self_attention_user(s_hat, model_.user_ffn);
    v.u_profile_attn = profile_cross_attention(p_hat, s_hat);
    v.bea_vectors = bea_user_phase(model_.bridges.b,
                                   model_.bea_user_groups(user.user_id),
                                   model_.bea_mlp);
    v.model_version = model_.model_version;
    return v;
  }

  std::shared_ptr<const AsyncUserVector> compute_and_cache(
      const UserState& user, const std::string& request_id) {
    const std::uint64_t digest =
        CacheKey::make_digest(request_id, user_nickname(user.user_id));
    std::unique_lock lock(mu_);
    if (auto it = cache_.find(digest); it != cache_.end()) {
      metrics_.hits.fetch_add(1, std::memory_order_relaxed);
      return it->second;
    }
    // single flight: later callers wait for the first one's result
    if (auto fl = inflight_.find(digest); fl != inflight_.end()) {
      auto state = fl->second;
      cv_.wait(lock, [&] { return state->done; });
      metrics_.hits.fetch_add(1, std::memory_order_relaxed);
      return state->value;
    }
    auto state = std::make_shared<Inflight>();
    inflight_.emplace(digest, state);
    metrics_.misses.fetch_add(1, std::memory_order_relaxed);
    lock.unlock();

    auto value = std::make_shared<AsyncUserVector>(compute(user, request_id));
    metrics_.recomputes.fetch_add(1, std::memory_order_relaxed);

    lock.lock();
    value->created_at = next_created_++;
    cache_.emplace(digest, value);
    age_order_.emplace(value->created_at, digest);
    while (cache_.size() > capacity_) {
      auto oldest = age_order_.begin();
      cache_.erase(oldest->second);
      age_order_.erase(oldest);
      metrics_.evictions.fetch_add(1, std::memory_order_relaxed);
    }
    state->value = value;
    state->done = true;
    inflight_.erase(digest);
    cv_.notify_all();
    return value;
  }

  std::shared_ptr<const AsyncUserVector> peek(std::uint64_t digest) const {
    std::unique_lock lock(mu_);
    auto it = cache_.find(digest);
    return it == cache_.end() ? nullptr : it->second;
  }

  std::size_t size() const {
    std::unique_lock lock(mu_);
    return cache_.size();
  }

  const UserCacheMetrics& metrics() const { return metrics_; }

  void reset_metrics() {
    metrics_.hits = 0;
    metrics_.misses = 0;
    metrics_.evictions = 0;
    metrics_.recomputes = 0;
  }

 private:
  struct Inflight {
    bool done = false;
    std::shared_ptr<const AsyncUserVector> value;
  };

  const FeatureStore& store_;
  const PrerankModel& model_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const AsyncUserVector>>
      cache_;
  std::map<std::uint64_t, std::uint64_t> age_order_;  // created_at -> digest
  std::unordered_map<std::uint64_t, std::shared_ptr<Inflight>> inflight_;
  std::uint64_t next_created_ = 0;
  UserCacheMetrics metrics_;
};

// --- transport ---------------------------------------------------------

inline std::string encode_transport(const AsyncUserVector& v) {
  ByteWriter w;
  w.str(v.key.request_id);
  w.str(v.key.user_nickname);
  w.u64(v.created_at);
  w.u64(v.model_version);
  auto mat = [&](const DenseMatrix& m) {
    w.u32(static_cast<std::uint32_t>(m.rows));
    w.u32(static_cast<std::uint32_t>(m.cols));
    for (float f : m.data) w.f32(f);
  };
  mat(v.u_self);
  mat(v.u_profile_attn);
  mat(v.bea_vectors);
  return base64_encode(w.bytes());
}

inline AsyncUserVector decode_transport(const std::string& text) {
  auto bytes = base64_decode(text);
  ByteReader r(bytes);
  AsyncUserVector v;
  v.key.request_id = r.str();
  v.key.user_nickname = r.str();
  v.key.digest = CacheKey::make_digest(v.key.request_id, v.key.user_nickname);
  v.created_at = r.u64();
  v.model_version = r.u64();
  auto mat = [&] {
    std::uint32_t rows = r.u32();
    std::uint32_t cols = r.u32();
    DenseMatrix m(rows, cols);
    for (auto& f : m.data) f = r.f32();
    return m;
  };
  v.u_self = mat();
  v.u_profile_attn = mat();
  v.bea_vectors = mat();
  if (!r.done()) throw DecodeError("trailing bytes", r.offset());
  return v;
}

}  // namespace aif
