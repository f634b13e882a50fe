#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <list>
#include <map>

#include "aif/sim_cache.hpp"
#include "test_util.hpp"

using namespace aif;

namespace {

UserState make_user(std::uint64_t id,
                    const std::vector<std::uint64_t>& categories,
                    std::size_t events_per_cat) {
  UserState u;
  u.user_id = id;
  std::int64_t t = 0;
  for (std::size_t k = 0; k < events_per_cat; ++k)
    for (auto cat : categories)
      u.long_term_sequence.push_back({cat * 1000 + k, cat, t++});
  return u;
}

// reference single-threaded LRU used as the oracle
struct RefLru {
  std::size_t capacity;
  std::list<SubSeqKey> order;  // front = most recent
  std::map<std::pair<std::uint64_t, std::uint64_t>, bool> present;

  explicit RefLru(std::size_t c) : capacity(c) {}

  // returns (hit, evicted_count)
  std::pair<bool, std::size_t> touch(std::uint64_t user, std::uint64_t cat,
                                     bool exists_in_store) {
    auto key = std::make_pair(user, cat);
    if (present.count(key)) {
      for (auto it = order.begin(); it != order.end(); ++it)
        if (it->user_id == user && it->category_id == cat) {
          order.splice(order.begin(), order, it);
          break;
        }
      return {true, 0};
    }
    if (!exists_in_store) return {false, 0};
    order.push_front(SubSeqKey{user, cat});
    present[key] = true;
    std::size_t evicted = 0;
    while (present.size() > capacity) {
      auto lru = order.back();
      order.pop_back();
      present.erase({lru.user_id, lru.category_id});
      ++evicted;
    }
    return {false, evicted};
  }
};

}  // namespace

TEST_CASE("single-category history partitions to one full subsequence") {
  UserState u = make_user(1, {5}, 10);
  SimHardStore store = SimHardStore::build({u});
  const SubSequence* sub = store.find(1, 5);
  REQUIRE(sub != nullptr);
  CHECK(*sub == u.long_term_sequence);
  CHECK(store.find(1, 6) == nullptr);
}

TEST_CASE("empty history produces no entries") {
  UserState u;
  u.user_id = 2;
  SimHardStore store = SimHardStore::build({u});
  CHECK(store.size() == 0);
  CHECK(store.categories_of(2).empty());
}

TEST_CASE("partition equals a per-category filter oracle") {
  StoreConfig cfg = test::small_store_config();
  cfg.long_term_len = 4096;
  cfg.num_users = 1;
  FeatureStore fs = FeatureStore::generate(cfg);
  const UserState& u = fs.users()[0];
  SimHardStore store = SimHardStore::build(fs.users());

  std::size_t total = 0;
  for (auto cat : store.categories_of(u.user_id)) {
    SubSequence want;
    for (const auto& ev : u.long_term_sequence)
      if (ev.category_id == cat) want.push_back(ev);
    const SubSequence* got = store.find(u.user_id, cat);
    REQUIRE(got != nullptr);
    CHECK(*got == want);
    total += got->size();
  }
  // union of subsequences covers the original sequence
  CHECK(total == u.long_term_sequence.size());
}

TEST_CASE("prefetch loads every category and later lookups hit") {
  UserState u = make_user(1, {2, 5, 7}, 4);
  SimHardStore store = SimHardStore::build({u});
  SimLruCache cache(10);
  CHECK(cache.prefetch_user(store, 1) == 3);
  CHECK(cache.size() == 3);
  for (auto cat : {2, 5, 7}) {
    auto res = cache.lookup(store, 1, cat);
    CHECK(res.hit);
    CHECK(res.parse_delay_ms == 0.0);
  }
}

TEST_CASE("capacity 2 keeps only the two most recently inserted") {
  UserState u = make_user(1, {2, 5, 7}, 4);
  SimHardStore store = SimHardStore::build({u});
  SimLruCache cache(2);
  cache.prefetch_user(store, 1);  // categories in sorted order: 2, 5, 7
  CHECK(cache.size() == 2);
  CHECK_FALSE(cache.contains(1, 2));
  CHECK(cache.contains(1, 5));
  CHECK(cache.contains(1, 7));
  CHECK(cache.metrics().evictions.load() == 1);
}

TEST_CASE("lookup of an unseen category is an uncached miss") {
  UserState u = make_user(1, {2}, 4);
  SimHardStore store = SimHardStore::build({u});
  SimLruCache cache(10);
  auto res = cache.lookup(store, 1, 99);
  CHECK_FALSE(res.hit);
  CHECK(res.events->empty());
  CHECK(res.parse_delay_ms == 0.0);
  CHECK(cache.size() == 0);
}

TEST_CASE("miss charges the configured parse delay") {
  UserState u = make_user(1, {2}, 8);  // 8 events in category 2
  SimHardStore store = SimHardStore::build({u});
  ParseCostModel cost{0.5, 0.01};
  SimLruCache cache(10, cost);
  auto res = cache.lookup(store, 1, 2);
  CHECK_FALSE(res.hit);
  CHECK(res.parse_delay_ms == doctest::Approx(0.5 + 0.01 * 8));
  CHECK(cache.lookup(store, 1, 2).parse_delay_ms == 0.0);
}

TEST_CASE("cache transparency: results match the store exactly") {
  StoreConfig cfg = test::small_store_config();
  FeatureStore fs = FeatureStore::generate(cfg);
  SimHardStore store = SimHardStore::build(fs.users());
  SimLruCache cache(4);  // small: plenty of evictions
  SplitMix64 g(3);
  for (int i = 0; i < 500; ++i) {
    std::uint64_t user = 1 + g.next() % cfg.num_users;
    std::uint64_t cat = 1 + g.next() % cfg.num_categories;
    auto res = cache.lookup(store, user, cat);
    const SubSequence* direct = store.find(user, cat);
    if (direct == nullptr)
      CHECK(res.events->empty());
    else
      CHECK(*res.events == *direct);
  }
}

TEST_CASE("hit/evict trace matches the reference LRU oracle") {
  StoreConfig cfg = test::small_store_config();
  FeatureStore fs = FeatureStore::generate(cfg);
  SimHardStore store = SimHardStore::build(fs.users());
  SimLruCache cache(6);
  RefLru ref(6);
  SplitMix64 g(17);
  for (int i = 0; i < 10000; ++i) {
    std::uint64_t user = 1 + g.next() % cfg.num_users;
    std::uint64_t cat = 1 + g.next() % cfg.num_categories;
    std::uint64_t ev_before = cache.metrics().evictions.load();
    auto res = cache.lookup(store, user, cat);
    std::uint64_t evicted = cache.metrics().evictions.load() - ev_before;
    auto [want_hit, want_evicted] =
        ref.touch(user, cat, store.find(user, cat) != nullptr);
    CHECK(res.hit == want_hit);
    CHECK(evicted == want_evicted);
  }
  CHECK(cache.size() == ref.present.size());
  // final contents agree
  for (const auto& [key, _] : ref.present)
    CHECK(cache.contains(key.first, key.second));
}

TEST_CASE("interleaved prefetch of 5 users matches the reference LRU") {
  std::vector<UserState> users;
  for (std::uint64_t uid = 1; uid <= 5; ++uid)
    users.push_back(make_user(uid, {1, 2, uid + 2}, 3));
  SimHardStore store = SimHardStore::build(users);
  SimLruCache cache(8);
  RefLru ref(8);
  for (int round = 0; round < 3; ++round) {
    for (std::uint64_t uid = 1; uid <= 5; ++uid) {
      cache.prefetch_user(store, uid);
      for (auto cat : store.categories_of(uid)) ref.touch(uid, cat, true);
    }
  }
  CHECK(cache.size() == ref.present.size());
  for (const auto& [key, _] : ref.present)
    CHECK(cache.contains(key.first, key.second));
}
