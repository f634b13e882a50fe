#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "aif/feature_store.hpp"

namespace aif {

struct SubSeqKey {
  std::uint64_t user_id = 0;
  std::uint64_t category_id = 0;

  bool operator==(const SubSeqKey&) const = default;
};

struct SubSeqKeyHash {
  std::size_t operator()(const SubSeqKey& k) const {
    return static_cast<std::size_t>(mix64(k.user_id, k.category_id));
  }
};

using SubSequence = std::vector<BehaviorEvent>;

// <user, category, sub_sequence> partition of every user's long-term
// sequence, built once ahead of serving.
class SimHardStore {
 public:
  static SimHardStore build(const std::vector<UserState>& users) {
    SimHardStore s;
    for (const auto& u : users) {
      for (const auto& ev : u.long_term_sequence) {
        SubSeqKey key{u.user_id, ev.category_id};
        s.map_[key].push_back(ev);
      }
    }
    return s;
  }

  const SubSequence* find(std::uint64_t user_id,
                          std::uint64_t category_id) const {
    auto it = map_.find(SubSeqKey{user_id, category_id});
    return it == map_.end() ? nullptr : &it->second;
  }

  std::vector<std::uint64_t> categories_of(std::uint64_t user_id) const {
    std::vector<std::uint64_t> cats;
    for (const auto& [key, seq] : map_)
      if (key.user_id == user_id) cats.push_back(key.category_id);
    std::sort(cats.begin(), cats.end());
    return cats;
  }

  std::size_t size() const { return map_.size(); }

 private:
  std::unordered_map<SubSeqKey, SubSequence, SubSeqKeyHash> map_;
};

struct ParseCostModel {
  double alpha_ms = 0.2;
  double beta_ms_per_event = 0.0005;

  double cost(std::size_t length) const {
    return alpha_ms + beta_ms_per_event * static_cast<double>(length);
  }
};

struct SimCacheMetrics {
  std::atomic<std::uint64_t> hits{0};
  std::atomic<std::uint64_t> misses{0};
  std::atomic<std::uint64_t> evictions{0};
};

struct SubSeqLookup {
  std::shared_ptr<const SubSequence> events;  // empty if absent in store
  bool hit = false;
  double parse_delay_ms = 0.0;
};

// LRU over parsed subsequences. A single mutex keeps recency exact; the
// parse delay is virtual time charged on loads only.
class SimLruCache {
 public:
  explicit SimLruCache(std::size_t capacity, ParseCostModel cost = {})
      : capacity_(capacity), cost_(cost) {}

  // Insert every (user, category) subsequence present in the store.
  // Returns the number of entries inserted (misses loaded).
  std::size_t prefetch_user(const SimHardStore& store, std::uint64_t user_id,
                            double* parse_delay_ms = nullptr) {
    std::size_t inserted = 0;
    double delay = 0.0;
    for (auto cat : store.categories_of(user_id)) {
      auto res = lookup(store, user_id, cat);
      if (!res.hit) ++inserted;
      delay += res.parse_delay_ms;
    }
    if (parse_delay_ms) *parse_delay_ms = delay;
    return inserted;
  }

  SubSeqLookup lookup(const SimHardStore& store, std::uint64_t user_id,
                      std::uint64_t category_id) {
    SubSeqKey key{user_id, category_id};
    std::scoped_lock lock(mu_);
    if (auto it = map_.find(key); it != map_.end()) {
      order_.splice(order_.begin(), order_, it->second.pos);
      metrics_.hits.fetch_add(1, std::memory_order_relaxed);
      return {it->second.value, true, 0.0};
    }
    metrics_.misses.fetch_add(1, std::memory_order_relaxed);
    const SubSequence* src = store.find(user_id, category_id);
    if (!src) {
      // absent keys are not inserted and charge no parse delay
      return {std::make_shared<const SubSequence>(), false, 0.0};
    }
    auto value = std::make_shared<const SubSequence>(*src);
    order_.push_front(key);
    map_[key] = Entry{value, order_.begin()};
    while (map_.size() > capacity_) {
      auto lru = order_.back();
      order_.pop_back();
      map_.erase(lru);
      metrics_.evictions.fetch_add(1, std::memory_order_relaxed);
    }
    return {value, false, cost_.cost(value->size())};
  }

  bool contains(std::uint64_t user_id, std::uint64_t category_id) const {
    std::scoped_lock lock(mu_);
    return map_.count(SubSeqKey{user_id, category_id}) != 0;
  }

  std::size_t size() const {
    std::scoped_lock lock(mu_);
    return map_.size();
  }

  const SimCacheMetrics& metrics() const { return metrics_; }

  void reset_metrics() {
    metrics_.hits = 0;
    metrics_.misses = 0;
    metrics_.evictions = 0;
  }

 private:
  struct Entry {
    std::shared_ptr<const SubSequence> value;
    std::list<SubSeqKey>::iterator pos;
  };

  std::size_t capacity_;
  ParseCostModel cost_;
  mutable std::mutex mu_;
  std::list<SubSeqKey> order_;  // front = most recently used
  std::unordered_map<SubSeqKey, Entry, SubSeqKeyHash> map_;
  SimCacheMetrics metrics_;
};

}  // namespace aif
