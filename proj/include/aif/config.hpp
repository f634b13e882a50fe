#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "aif/feature_store.hpp"
#include "aif/model.hpp"
#include "aif/pipeline.hpp"

namespace aif {

// Flat key = value configuration covering stage delays, dimensions, cache
// capacities and seeds. Unknown keys are rejected so typos fail loudly.
struct AifConfig {
  std::uint64_t seed = 42;
  std::uint64_t model_seed = 7;

  // universe
  std::size_t users = 100;
  std::size_t items = 4096;
  std::size_t categories = 64;
  std::size_t profile_features = 8;
  std::size_t per_feature_dim = 16;
  std::size_t attr_features = 4;
  std::size_t attr_dim = 16;
  std::size_t d_mm = 64;
  std::size_t l = 64;
  std::size_t L = 4096;

  // model dims
  std::size_t d = 32;
  std::size_t item_hidden = 48;
  std::size_t bea_n = 8;
  std::size_t bea_m = 8;
  std::size_t bea_dprime = 32;
  std::size_t lsh_bits = 32;
  std::size_t tiers = 16;
  std::size_t head_hidden = 32;

  // pipeline
  std::size_t b = 1024;
  std::size_t minibatch = 1000;
  std::size_t user_cache_capacity = 100000;
  std::size_t sim_cache_capacity = 0;  // 0 = auto: 3 * users * categories/user
  bool sim_precache = true;

  // stage delays (virtual ms)
  double retrieval_ms = 30.0;
  double user_fetch_ms = 10.0;
  double user_forward_ms = 5.0;
  double item_fetch_ms = 8.0;
  double item_forward_ms = 4.0;
  double prerank_forward_ms = 6.0;
  double parse_alpha_ms = 0.2;
  double parse_beta_ms = 0.0005;

  // bench
  double sla_p99_ms = 100.0;
  std::size_t workers = 8;
  double arrival_rate_qps = 50.0;

  StoreConfig store_config() const {
    StoreConfig s;
    s.seed = seed;
    s.num_users = users;
    s.num_items = items;
    s.num_categories = categories;
    s.profile_feature_count = profile_features;
    s.per_feature_dim = per_feature_dim;
    s.attr_feature_count = attr_features;
    s.attr_dim = attr_dim;
    s.d_mm = d_mm;
    s.behavior_len = l;
    s.long_term_len = L;
    return s;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.seed = model_seed;
    m.d_profile_in = profile_features * per_feature_dim;
    m.d_seq_in = 2 * per_feature_dim;
    m.d = d;
    m.d_item_in = attr_features * attr_dim;
    m.item_hidden = item_hidden;
    m.bea_n = bea_n;
    m.bea_m = bea_m;
    m.bea_dprime = bea_dprime;
    m.lsh_bits = lsh_bits;
    m.d_mm = d_mm;
    m.tier_count = tiers;
    m.head_hidden = head_hidden;
    return m;
  }

  StageCostConfig stage_config() const {
    StageCostConfig c;
    c.retrieval_ms = retrieval_ms;
    c.user_fetch_ms = user_fetch_ms;
    c.user_forward_ms = user_forward_ms;
    c.item_fetch_ms = item_fetch_ms;
    c.item_forward_ms = item_forward_ms;
    c.prerank_forward_ms = prerank_forward_ms;
    c.parse.alpha_ms = parse_alpha_ms;
    c.parse.beta_ms_per_event = parse_beta_ms;
    c.minibatch_size = minibatch;
    return c;
  }

  Pipeline::Options pipeline_options() const {
    Pipeline::Options o;
    o.candidate_count = b;
    o.sim_precache = sim_precache;
    o.user_cache_capacity = user_cache_capacity;
    // roughly 3x the live working set when not set explicitly
    o.sim_cache_capacity =
        sim_cache_capacity > 0 ? sim_cache_capacity : 3 * users * categories;
    return o;
  }

  static AifConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    AifConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        if (!blank)
          throw std::invalid_argument("config line " + std::to_string(lineno) +
                                      ": expected key = value");
        continue;
      }
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      cfg.set(key, value, lineno);
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value,
           std::size_t lineno = 0) {
    auto as_u64 = [&] { return std::stoull(value); };
    auto as_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    auto as_double = [&] { return std::stod(value); };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected bool, got '" + value + "'");
    };
    if (key == "seed") seed = as_u64();
    else if (key == "model_seed") model_seed = as_u64();
    else if (key == "users") users = as_size();
    else if (key == "items") items = as_size();
    else if (key == "categories") categories = as_size();
    else if (key == "profile_features") profile_features = as_size();
    else if (key == "per_feature_dim") per_feature_dim = as_size();
    else if (key == "attr_features") attr_features = as_size();
    else if (key == "attr_dim") attr_dim = as_size();
    else if (key == "d_mm") d_mm = as_size();
    else if (key == "l") l = as_size();
    else if (key == "L") L = as_size();
    else if (key == "d") d = as_size();
    else if (key == "item_hidden") item_hidden = as_size();
    else if (key == "bea_n") bea_n = as_size();
    else if (key == "bea_m") bea_m = as_size();
    else if (key == "bea_dprime") bea_dprime = as_size();
    else if (key == "lsh_bits") lsh_bits = as_size();
    else if (key == "tiers") tiers = as_size();
    else if (key == "head_hidden") head_hidden = as_size();
    else if (key == "b") b = as_size();
    else if (key == "minibatch") minibatch = as_size();
    else if (key == "user_cache_capacity") user_cache_capacity = as_size();
    else if (key == "sim_cache_capacity") sim_cache_capacity = as_size();
    else if (key == "sim_precache") sim_precache = as_bool();
    else if (key == "retrieval_ms") retrieval_ms = as_double();
    else if (key == "user_fetch_ms") user_fetch_ms = as_double();
    else if (key == "user_forward_ms") user_forward_ms = as_double();
    else if (key == "item_fetch_ms") item_fetch_ms = as_double();
    else if (key == "item_forward_ms") item_forward_ms = as_double();
    else if (key == "prerank_forward_ms") prerank_forward_ms = as_double();
    else if (key == "parse_alpha_ms") parse_alpha_ms = as_double();
    else if (key == "parse_beta_ms") parse_beta_ms = as_double();
    else if (key == "sla_p99_ms") sla_p99_ms = as_double();
    else if (key == "workers") workers = as_size();
    else if (key == "arrival_rate_qps") arrival_rate_qps = as_double();
    else
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
  }
};

}  // namespace aif
