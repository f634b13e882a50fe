#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "aif/io.hpp"
#include "aif/matrix.hpp"
#include "aif/rng.hpp"

namespace aif {

struct OrderingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic hashed-bucket embedding table. lookup(id) is a pure
// function of (seed, bucket_count, id).
struct EmbeddingTable {
  std::uint64_t seed = 0;
  std::size_t bucket_count = 1 << 16;
  std::size_t dim = 16;

  DenseMatrix lookup(std::uint64_t feature_id) const {
    std::uint64_t bucket = feature_id % bucket_count;
    SplitMix64 g(mix64(seed, bucket));
    DenseMatrix v(1, dim);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dim));
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      float x = static_cast<float>(g.normal()) * scale;
      v.at(0, j) = x;
      norm2 += static_cast<double>(x) * x;
    }
    // keep the norm invariant in (0, 10); practically never triggered
    double norm = std::sqrt(norm2);
    if (norm == 0.0 || norm >= 10.0) {
      float s = norm == 0.0 ? 0.0f : static_cast<float>(1.0 / norm);
      for (auto& x : v.data) x *= s;
      if (norm == 0.0) v.at(0, 0) = 1.0f;
    }
    return v;
  }
};

struct BehaviorEvent {
  std::uint64_t item_id = 0;
  std::uint64_t category_id = 0;
  std::int64_t timestamp = 0;

  bool operator==(const BehaviorEvent&) const = default;
};

struct UserState {
  std::uint64_t user_id = 0;
  std::vector<std::uint64_t> profile_features;
  std::vector<BehaviorEvent> behavior_sequence;   // length l
  std::vector<BehaviorEvent> long_term_sequence;  // length L >> l
};

struct ItemRecord {
  std::uint64_t item_id = 0;
  std::uint64_t category_id = 0;
  std::vector<std::uint64_t> attribute_features;
  std::vector<float> mm_embedding;  // unit-normalized
  std::uint64_t version = 0;
};

struct ItemUpdateEvent {
  std::uint64_t item_id = 0;
  std::vector<std::uint64_t> new_attribute_features;
  std::optional<std::vector<float>> new_mm_embedding;
  std::uint64_t event_seq = 0;
};

struct StoreConfig {
  std::uint64_t seed = 42;
  std::size_t num_users = 100;
  std::size_t num_items = 4096;
  std::size_t num_categories = 64;
  std::size_t profile_feature_count = 8;
  std::size_t per_feature_dim = 16;  // d^U per feature; profile total = 8*16
  std::size_t attr_feature_count = 4;
  std::size_t attr_dim = 16;  // d^I total = 4*16 = 64
  std::size_t d_mm = 64;
  std::size_t behavior_len = 64;    // l
  std::size_t long_term_len = 4096; // L
};

struct UserTables {
  EmbeddingTable profile;   // per profile feature, dim per_feature_dim
  EmbeddingTable item_id;   // behavior item embedding
  EmbeddingTable category;  // behavior category embedding
  EmbeddingTable attribute; // item attribute embedding
};

inline std::vector<float> make_unit_mm_embedding(std::uint64_t seed,
                                                 std::uint64_t item_id,
                                                 std::size_t d_mm) {
  std::vector<float> v(d_mm);
  fill_normal(v, mix64(seed ^ 0x6d6d766563ULL, item_id));
  double norm2 = 0.0;
  for (float x : v) norm2 += static_cast<double>(x) * x;
  double norm = std::sqrt(norm2);
  if (norm == 0.0) {
    v[0] = 1.0f;
  } else {
    for (auto& x : v) x = static_cast<float>(x / norm);
  }
  return v;
}

// Deterministic synthetic feature universe with a single-writer item map.
// Readers grab an immutable shared_ptr per record, so an update is either
// wholly visible or wholly invisible.
class FeatureStore {
 public:
  FeatureStore() = default;

  static FeatureStore generate(const StoreConfig& cfg) {
    FeatureStore s;
    s.cfg_ = cfg;
    s.tables_.profile = {mix64(cfg.seed, 1), 1 << 16, cfg.per_feature_dim};
    s.tables_.item_id = {mix64(cfg.seed, 2), 1 << 16, cfg.per_feature_dim};
    s.tables_.category = {mix64(cfg.seed, 3), 1 << 16, cfg.per_feature_dim};
    s.tables_.attribute = {mix64(cfg.seed, 4), 1 << 16, cfg.attr_dim};

    for (std::size_t i = 1; i <= cfg.num_items; ++i) {
      auto rec = std::make_shared<ItemRecord>();
      rec->item_id = i;
      rec->category_id = 1 + mix64(cfg.seed ^ 0xca7ULL, i) % cfg.num_categories;
      rec->attribute_features.resize(cfg.attr_feature_count);
      for (std::size_t k = 0; k < cfg.attr_feature_count; ++k)
        rec->attribute_features[k] = mix64(mix64(cfg.seed, 0xa77ULL), i * 131 + k);
      rec->mm_embedding = make_unit_mm_embedding(cfg.seed, i, cfg.d_mm);
      rec->version = 0;
      s.items_.emplace(i, std::move(rec));
    }

    s.users_.reserve(cfg.num_users);
    for (std::size_t u = 1; u <= cfg.num_users; ++u) {
      UserState user;
      user.user_id = u;
      SplitMix64 g(mix64(cfg.seed ^ 0x5e55ULL, u));
      user.profile_features.resize(cfg.profile_feature_count);
      for (auto& f : user.profile_features) f = g.next() % (1 << 20);
      auto gen_seq = [&](std::size_t len) {
        std::vector<BehaviorEvent> seq(len);
        std::int64_t t = 0;
        for (auto& e : seq) {
          e.item_id = 1 + g.next() % cfg.num_items;
          e.category_id = s.item(e.item_id)->category_id;
          t += static_cast<std::int64_t>(g.next() % 1000);
          e.timestamp = t;
        }
        return seq;
      };
      user.long_term_sequence = gen_seq(cfg.long_term_len);
      user.behavior_sequence = gen_seq(cfg.behavior_len);
      s.users_.push_back(std::move(user));
    }
    return s;
  }

  const StoreConfig& config() const { return cfg_; }
  const UserTables& tables() const { return tables_; }
  std::size_t num_items() const { return items_.size(); }

  const std::vector<UserState>& users() const { return users_; }

  const UserState& user(std::uint64_t user_id) const {
    for (const auto& u : users_)
      if (u.user_id == user_id) return u;
    throw std::out_of_range("unknown user " + std::to_string(user_id));
  }

  std::shared_ptr<const ItemRecord> item(std::uint64_t item_id) const {
    std::shared_lock lock(items_mu_);
    auto it = items_.find(item_id);
    if (it == items_.end())
      throw std::out_of_range("unknown item " + std::to_string(item_id));
    return it->second;
  }

  std::vector<std::uint64_t> item_ids() const {
    std::shared_lock lock(items_mu_);
    std::vector<std::uint64_t> ids;
    ids.reserve(items_.size());
    for (const auto& [id, rec] : items_) ids.push_back(id);
    return ids;
  }

  std::uint64_t last_event_seq() const {
    std::shared_lock lock(items_mu_);
    return last_event_seq_;
  }

  const std::vector<ItemUpdateEvent>& replay_log() const { return replay_log_; }

  // Single writer; rejects stale or replayed event_seq values.
  std::shared_ptr<const ItemRecord> apply_update(const ItemUpdateEvent& ev) {
    std::unique_lock lock(items_mu_);
    if (ev.event_seq <= last_event_seq_)
      throw OrderingError("stale event_seq " + std::to_string(ev.event_seq) +
                          " (last applied " +
                          std::to_string(last_event_seq_) + ")");
    auto it = items_.find(ev.item_id);
    auto rec = std::make_shared<ItemRecord>();
    if (it != items_.end()) {
      *rec = *it->second;
    } else {
      rec->item_id = ev.item_id;
      rec->category_id = 1 + mix64(cfg_.seed ^ 0xca7ULL, ev.item_id) %
                                 std::max<std::size_t>(cfg_.num_categories, 1);
      rec->mm_embedding = make_unit_mm_embedding(cfg_.seed, ev.item_id, cfg_.d_mm);
    }
    rec->attribute_features = ev.new_attribute_features;
    if (ev.new_mm_embedding) rec->mm_embedding = *ev.new_mm_embedding;
    rec->version += 1;
    items_[ev.item_id] = rec;
    last_event_seq_ = ev.event_seq;
    replay_log_.push_back(ev);
    return rec;
  }

  // snapshot file: magic "AIFS", version u32, config, users, items
  void save_snapshot(const std::string& path) const {
    ByteWriter w;
    w.raw("AIFS", 4);
    w.u32(1);
    w.u64(cfg_.seed);
    w.u64(cfg_.num_users);
    w.u64(cfg_.num_items);
    w.u64(cfg_.num_categories);
    w.u64(cfg_.profile_feature_count);
    w.u64(cfg_.per_feature_dim);
    w.u64(cfg_.attr_feature_count);
    w.u64(cfg_.attr_dim);
    w.u64(cfg_.d_mm);
    w.u64(cfg_.behavior_len);
    w.u64(cfg_.long_term_len);
    w.u64(last_event_seq_);
    w.u64(users_.size());
    auto write_seq = [&](const std::vector<BehaviorEvent>& seq) {
      w.u64(seq.size());
      for (const auto& e : seq) {
        w.u64(e.item_id);
        w.u64(e.category_id);
        w.i64(e.timestamp);
      }
    };
    for (const auto& u : users_) {
      w.u64(u.user_id);
      w.u64(u.profile_features.size());
      for (auto f : u.profile_features) w.u64(f);
      write_seq(u.behavior_sequence);
      write_seq(u.long_term_sequence);
    }
    std::shared_lock lock(items_mu_);
    w.u64(items_.size());
    for (const auto& [id, rec] : items_) {
      w.u64(rec->item_id);
      w.u64(rec->category_id);
      w.u64(rec->version);
      w.u64(rec->attribute_features.size());
      for (auto f : rec->attribute_features) w.u64(f);
      w.u64(rec->mm_embedding.size());
      for (float f : rec->mm_embedding) w.f32(f);
    }
    write_file(path, w.bytes());
  }

  static FeatureStore load_snapshot(const std::string& path) {
    auto bytes = read_file(path);
    ByteReader r(bytes);
    char magic[4];
    for (auto& c : magic) c = static_cast<char>(r.u8());
    if (std::string(magic, 4) != "AIFS")
      throw DecodeError("bad snapshot magic", 0);
    std::uint32_t version = r.u32();
    if (version != 1) throw DecodeError("unsupported snapshot version", 4);
    FeatureStore s;
    s.cfg_.seed = r.u64();
    s.cfg_.num_users = r.u64();
    s.cfg_.num_items = r.u64();
    s.cfg_.num_categories = r.u64();
    s.cfg_.profile_feature_count = r.u64();
    s.cfg_.per_feature_dim = r.u64();
    s.cfg_.attr_feature_count = r.u64();
    s.cfg_.attr_dim = r.u64();
    s.cfg_.d_mm = r.u64();
    s.cfg_.behavior_len = r.u64();
    s.cfg_.long_term_len = r.u64();
    s.last_event_seq_ = r.u64();
    s.tables_.profile = {mix64(s.cfg_.seed, 1), 1 << 16, s.cfg_.per_feature_dim};
    s.tables_.item_id = {mix64(s.cfg_.seed, 2), 1 << 16, s.cfg_.per_feature_dim};
    s.tables_.category = {mix64(s.cfg_.seed, 3), 1 << 16, s.cfg_.per_feature_dim};
    s.tables_.attribute = {mix64(s.cfg_.seed, 4), 1 << 16, s.cfg_.attr_dim};
    std::uint64_t nusers = r.u64();
    auto read_seq = [&] {
      std::vector<BehaviorEvent> seq(r.u64());
      for (auto& e : seq) {
        e.item_id = r.u64();
        e.category_id = r.u64();
        e.timestamp = r.i64();
      }
      return seq;
    };
    for (std::uint64_t i = 0; i < nusers; ++i) {
      UserState u;
      u.user_id = r.u64();
      u.profile_features.resize(r.u64());
      for (auto& f : u.profile_features) f = r.u64();
      u.behavior_sequence = read_seq();
      u.long_term_sequence = read_seq();
      s.users_.push_back(std::move(u));
    }
    std::uint64_t nitems = r.u64();
    for (std::uint64_t i = 0; i < nitems; ++i) {
      auto rec = std::make_shared<ItemRecord>();
      rec->item_id = r.u64();
      rec->category_id = r.u64();
      rec->version = r.u64();
      rec->attribute_features.resize(r.u64());
      for (auto& f : rec->attribute_features) f = r.u64();
      rec->mm_embedding.resize(r.u64());
      for (auto& f : rec->mm_embedding) f = r.f32();
      s.items_.emplace(rec->item_id, std::move(rec));
    }
    return s;
  }

 private:
  StoreConfig cfg_;
  UserTables tables_;
  std::vector<UserState> users_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const ItemRecord>> items_;
  mutable std::shared_mutex items_mu_;
  std::uint64_t last_event_seq_ = 0;
  std::vector<ItemUpdateEvent> replay_log_;
};

// U_profile: 1 x (profile_count * per_feature_dim), concatenated lookups.
inline DenseMatrix materialize_profile(const UserState& user,
                                       const UserTables& tables) {
  if (user.profile_features.empty())
    throw ShapeError("materialize_profile: user has no profile features");
  DenseMatrix out(1, user.profile_features.size() * tables.profile.dim);
  std::size_t off = 0;
  for (auto f : user.profile_features) {
    DenseMatrix v = tables.profile.lookup(f);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.cols;
  }
  return out;
}

// Each sequence position embeds as [item_id emb || category emb].
inline DenseMatrix materialize_sequence(const std::vector<BehaviorEvent>& seq,
                                        const UserTables& tables) {
  const std::size_t d = tables.item_id.dim + tables.category.dim;
  DenseMatrix out(seq.size(), d);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    DenseMatrix a = tables.item_id.lookup(seq[i].item_id);
    DenseMatrix b = tables.category.lookup(seq[i].category_id);
    std::copy(a.data.begin(), a.data.end(), out.row(i));
    std::copy(b.data.begin(), b.data.end(), out.row(i) + a.cols);
  }
  return out;
}

// I: 1 x (attr_count * attr_dim)
inline DenseMatrix materialize_item(const ItemRecord& rec,
                                    const UserTables& tables) {
  DenseMatrix out(1, rec.attribute_features.size() * tables.attribute.dim);
  std::size_t off = 0;
  for (auto f : rec.attribute_features) {
    DenseMatrix v = tables.attribute.lookup(f);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.cols;
  }
  return out;
}

inline std::vector<ItemUpdateEvent> make_random_events(
    const FeatureStore& store, std::size_t count, std::uint64_t seed,
    std::uint64_t first_seq) {
  SplitMix64 g(seed);
  auto ids = store.item_ids();
  std::vector<ItemUpdateEvent> events(count);
  const auto& cfg = store.config();
  for (std::size_t i = 0; i < count; ++i) {
    auto& ev = events[i];
    ev.item_id = ids[g.next() % ids.size()];
    ev.event_seq = first_seq + i;
    ev.new_attribute_features.resize(cfg.attr_feature_count);
    for (auto& f : ev.new_attribute_features) f = g.next() % (1 << 20);
    if (g.next() % 2 == 0)
      ev.new_mm_embedding =
          make_unit_mm_embedding(g.next(), ev.item_id, cfg.d_mm);
  }
  return events;
}

}  // namespace aif
