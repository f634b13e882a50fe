#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "aif/bea.hpp"
#include "aif/copr.hpp"
#include "aif/feature_store.hpp"
#include "aif/lsh.hpp"
#include "aif/matrix.hpp"
#include "aif/model.hpp"
#include "aif/nearline.hpp"
#include "aif/sim_cache.hpp"
#include "aif/user_async.hpp"

namespace aif {

struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Request {
  std::string request_id;
  std::uint64_t user_id = 0;
  double arrival_ms = 0.0;
  std::uint64_t candidate_seed = 0;
};

struct StageCostConfig {
  double retrieval_ms = 30.0;
  double user_fetch_ms = 10.0;
  double user_forward_ms = 5.0;
  double item_fetch_ms = 8.0;
  double item_forward_ms = 4.0;
  double prerank_forward_ms = 6.0;
  ParseCostModel parse;
  std::size_t minibatch_size = 1000;
};

struct LatencyBreakdown {
  double retrieval = 0.0;
  double user_fetch = 0.0;
  double user_forward = 0.0;
  double item_fetch = 0.0;
  double item_forward = 0.0;
  double cross_parse = 0.0;
  double prerank_forward = 0.0;
  double total = 0.0;
};

struct RunResult {
  std::vector<ScoredCandidate> scored;
  LatencyBreakdown latency;
};

struct PipelineCounters {
  std::uint64_t user_forwards = 0;
  std::uint64_t item_forwards = 0;
  std::uint64_t user_cache_hits = 0;
  std::uint64_t user_cache_misses = 0;
  std::uint64_t user_cache_evictions = 0;
  std::uint64_t user_cache_recomputes = 0;
  std::uint64_t sim_hits = 0;
  std::uint64_t sim_misses = 0;
  std::uint64_t sim_evictions = 0;
  std::uint64_t n2o_misses = 0;
};

struct EquivRow {
  std::string request_id;
  double max_abs_diff = 0.0;
  bool rank_agreement = true;
  bool excluded = false;  // interleaved update pending, reported as staleness
};

struct EquivReport {
  std::vector<EquivRow> rows;
  double max_diff_strict = 0.0;
  double max_staleness_delta = 0.0;
  std::size_t excluded_count = 0;
  bool pass = true;  // strict rows within 1e-6 and ranks agree
};

// The Merger: drives the sequential baseline and the asynchronous pipeline
// over the same stores and model so their scores can be compared bit for
// bit on a frozen snapshot.
class Pipeline {
 public:
  struct Options {
    std::size_t candidate_count = 1024;  // b
    bool sim_precache = true;
    std::size_t user_cache_capacity = 100000;
    std::size_t sim_cache_capacity = 8192;
  };

  Pipeline(FeatureStore& store, const PrerankModel& model,
           StageCostConfig cost = {}, Options opts = {})
      : store_(store),
        model_(model),
        cost_(cost),
        opts_(opts),
        user_engine_(store, model, opts.user_cache_capacity),
        nearline_(store, model),
        sim_cache_(opts.sim_cache_capacity, cost.parse) {
    sim_store_ = SimHardStore::build(store.users());
    signatures_ = SignatureTable::build(store, model.plane);
    nearline_.rebuild_full();
    sorted_item_ids_ = store.item_ids();
    std::sort(sorted_item_ids_.begin(), sorted_item_ids_.end());
  }

  const StageCostConfig& cost_config() const { return cost_; }
  const Options& options() const { return opts_; }
  UserAsyncEngine& user_engine() { return user_engine_; }
  NearlineEngine& nearline() { return nearline_; }
  SimLruCache& sim_cache() { return sim_cache_; }
  const SimHardStore& sim_store() const { return sim_store_; }
  SignatureTable& signatures() { return signatures_; }

  void set_sim_precache(bool enabled) { opts_.sim_precache = enabled; }

  PipelineCounters counters() const {
    PipelineCounters c;
    c.user_forwards = user_forwards_.load();
    c.item_forwards = nearline_.metrics().item_forwards.load();
    c.user_cache_hits = user_engine_.metrics().hits.load();
    c.user_cache_misses = user_engine_.metrics().misses.load();
    c.user_cache_evictions = user_engine_.metrics().evictions.load();
    c.user_cache_recomputes = user_engine_.metrics().recomputes.load();
    c.sim_hits = sim_cache_.metrics().hits.load();
    c.sim_misses = sim_cache_.metrics().misses.load();
    c.sim_evictions = sim_cache_.metrics().evictions.load();
    c.n2o_misses = nearline_.metrics().misses.load();
    return c;
  }

  void reset_counters() {
    user_forwards_ = 0;
    nearline_.reset_metrics();
    user_engine_.reset_metrics();
    sim_cache_.reset_metrics();
  }

  // Deterministic seeded sample of b distinct items (partial Fisher-Yates).
  std::vector<std::uint64_t> retrieval_stub(const Request& req) const {
    std::vector<std::uint64_t> ids = sorted_item_ids_;
    const std::size_t b = std::min(opts_.candidate_count, ids.size());
    SplitMix64 g(mix64(req.candidate_seed, 0x5eedULL));
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t j = i + g.next() % (ids.size() - i);
      std::swap(ids[i], ids[j]);
    }
    ids.resize(b);
    return ids;
  }

  double bid_for(std::uint64_t item_id) const {
    return 0.5 + static_cast<double>(mix64(item_id, 0xb1dULL) % 1000) / 1000.0;
  }

  // Teacher ranks (1-based) over candidates, by the fixed relevance scorer.
  std::vector<std::size_t> teacher_ranks(
      std::span<const std::uint64_t> item_ids) const {
    std::vector<std::size_t> idx(item_ids.size());
    std::vector<double> scores(item_ids.size());
    for (std::size_t i = 0; i < item_ids.size(); ++i) {
      idx[i] = i;
      scores[i] = model_.teacher_score(*raw_item_embedding(item_ids[i]));
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return item_ids[a] < item_ids[b];
    });
    std::vector<std::size_t> ranks(item_ids.size());
    for (std::size_t r = 0; r < idx.size(); ++r) ranks[idx[r]] = r + 1;
    return ranks;
  }

  RunResult run_sequential(const Request& req) {
    auto ids = retrieval_stub(req);
    const UserState& user = store_.user(req.user_id);
    RunResult out;
    out.scored.reserve(ids.size());

    std::unordered_map<std::uint64_t, PackedSignature> sig_memo;
    auto sig_of = [&](std::uint64_t id) -> const PackedSignature& {
      auto it = sig_memo.find(id);
      if (it == sig_memo.end()) {
        auto rec = store_.item(id);
        DenseMatrix mm(1, rec->mm_embedding.size());
        mm.data = rec->mm_embedding;
        it = sig_memo.emplace(id, pack(lsh_hash(mm, model_.plane))).first;
      }
      return it->second;
    };

    double cross_parse_ms = 0.0;
    std::map<std::uint64_t, bool> parsed_categories;

    const std::size_t batch =
        std::max<std::size_t>(1, cost_.minibatch_size);
    for (std::size_t start = 0; start < ids.size(); start += batch) {
      std::span<const std::uint64_t> chunk(
          ids.data() + start, std::min(batch, ids.size() - start));
      // user side recomputed for every mini-batch (the redundancy the
      // asynchronous pipeline removes)
      AsyncUserVector user_vec = user_engine_.compute(user, req.request_id);
      user_forwards_.fetch_add(1, std::memory_order_relaxed);

      DenseMatrix item_vecs(chunk.size(), model_.cfg.d);
      DenseMatrix bea_w(chunk.size(), model_.cfg.bea_n);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        auto rec = store_.item(chunk[i]);
        N2OEntry e = nearline_.compute_entry(*rec);
        std::copy(e.vector.data.begin(), e.vector.data.end(),
                  item_vecs.row(i));
        std::copy(e.bea_weights.data.begin(), e.bea_weights.data.end(),
                  bea_w.row(i));
        auto cat = rec->category_id;
        if (!parsed_categories.count(cat)) {
          parsed_categories[cat] = true;
          if (const auto* sub = sim_store_.find(user.user_id, cat))
            cross_parse_ms += cost_.parse.cost(sub->size());
        }
      }
      auto scores = prerank_score(
          user_vec, chunk, item_vecs, bea_w, sig_of,
          [&](std::uint64_t cat) { return sim_store_.find(user.user_id, cat); },
          nearline_.published()->model_version);
      for (std::size_t i = 0; i < chunk.size(); ++i)
        out.scored.push_back({chunk[i], scores.at(i, 0), bid_for(chunk[i])});
    }

    auto& lat = out.latency;
    lat.retrieval = cost_.retrieval_ms;
    lat.user_fetch = cost_.user_fetch_ms;
    lat.user_forward = cost_.user_forward_ms;
    lat.item_fetch = cost_.item_fetch_ms;
    lat.item_forward = cost_.item_forward_ms;
    lat.cross_parse = cross_parse_ms;
    lat.prerank_forward = cost_.prerank_forward_ms;
    lat.total = lat.retrieval + lat.user_fetch + lat.user_forward +
                lat.item_fetch + lat.item_forward + lat.cross_parse +
                lat.prerank_forward;
    return out;
  }

  RunResult run_aif(const Request& req) {
    const UserState& user = store_.user(req.user_id);

    // user-async path, overlapped with retrieval
    std::uint64_t recomputes_before = user_engine_.metrics().recomputes.load();
    auto user_vec = user_engine_.compute_and_cache(user, req.request_id);
    bool computed = user_engine_.metrics().recomputes.load() > recomputes_before;
    if (computed)
      user_forwards_.fetch_add(1, std::memory_order_relaxed);
    double prefetch_ms = 0.0;
    if (opts_.sim_precache)
      sim_cache_.prefetch_user(sim_store_, user.user_id, &prefetch_ms);
    double user_path = (computed ? cost_.user_fetch_ms + cost_.user_forward_ms
                                 : 0.0) +
                       prefetch_ms;

    auto ids = retrieval_stub(req);
    auto table = nearline_.published();

    double miss_parse_ms = 0.0;
    std::size_t n2o_miss_count = 0;
    std::map<std::uint64_t, std::shared_ptr<const SubSequence>> subseqs;

    DenseMatrix item_vecs(ids.size(), model_.cfg.d);
    DenseMatrix bea_w(ids.size(), model_.cfg.bea_n);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto it = table->entries.find(ids[i]);
      N2OEntry fallback;
      const N2OEntry* e;
      if (it != table->entries.end()) {
        e = &it->second;
      } else {
        // miss: degrade to a synchronous reduce and record it
        nearline_.metrics().misses.fetch_add(1, std::memory_order_relaxed);
        ++n2o_miss_count;
        fallback = nearline_.compute_entry(*store_.item(ids[i]));
        e = &fallback;
      }
      std::copy(e->vector.data.begin(), e->vector.data.end(),
                item_vecs.row(i));
      std::copy(e->bea_weights.data.begin(), e->bea_weights.data.end(),
                bea_w.row(i));
      auto cat = store_.item(ids[i])->category_id;
      if (!subseqs.count(cat)) {
        auto res = sim_cache_.lookup(sim_store_, user.user_id, cat);
        miss_parse_ms += res.parse_delay_ms;
        subseqs[cat] = res.events;
      }
    }

    auto scores = prerank_score(
        *user_vec, ids, item_vecs, bea_w,
        [&](std::uint64_t id) -> const PackedSignature& {
          return signatures_.get(id);
        },
        [&](std::uint64_t cat) -> const SubSequence* {
          auto it = subseqs.find(cat);
          return it == subseqs.end() || it->second->empty()
                     ? nullptr
                     : it->second.get();
        },
        table->model_version);

    RunResult out;
    out.scored.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      out.scored.push_back({ids[i], scores.at(i, 0), bid_for(ids[i])});

    auto& lat = out.latency;
    lat.retrieval = cost_.retrieval_ms;
    lat.user_fetch = computed ? cost_.user_fetch_ms : 0.0;
    lat.user_forward = computed ? cost_.user_forward_ms : 0.0;
    lat.item_fetch = cost_.item_fetch_ms;
    lat.item_forward = static_cast<double>(n2o_miss_count) *
                       cost_.item_forward_ms;
    lat.cross_parse = prefetch_ms + miss_parse_ms;
    lat.prerank_forward = cost_.prerank_forward_ms;
    double prerank_path = lat.item_fetch + lat.item_forward + miss_parse_ms +
                          lat.prerank_forward;
    lat.total = std::max(lat.retrieval, user_path) + prerank_path;
    return out;
  }

  // Score head over [u_self || u_profile_attn || item_vec || bea_v || din ||
  // simtier || raw item embedding]; the ordering is fixed so both pipelines
  // produce bit-identical inputs.
  template <typename SigFn, typename SubSeqFn>
  DenseMatrix prerank_score(const AsyncUserVector& user_vec,
                            std::span<const std::uint64_t> item_ids,
                            const DenseMatrix& item_vecs,
                            const DenseMatrix& bea_w, SigFn&& sig_of,
                            SubSeqFn&& subseq_of,
                            std::uint64_t table_model_version) const {
    if (user_vec.model_version != model_.model_version ||
        table_model_version != model_.model_version)
      throw ConsistencyError("model snapshot mismatch between artifacts");

    DenseMatrix bea_v = bea_serve(bea_w, user_vec.bea_vectors);  // b x d'

    const std::size_t d = model_.cfg.d;
    DenseMatrix x(item_ids.size(), model_.head_input_dim());
    for (std::size_t i = 0; i < item_ids.size(); ++i) {
      float* row = x.row(i);
      std::size_t c = 0;
      auto put = [&](const float* p, std::size_t nvals) {
        std::copy(p, p + nvals, row + c);
        c += nvals;
      };
      put(user_vec.u_self.data.data(), d);
      put(user_vec.u_profile_attn.data.data(), d);
      put(item_vecs.row(i), d);
      put(bea_v.row(i), model_.cfg.bea_dprime);

      auto cat = store_.item(item_ids[i])->category_id;
      const SubSequence* sub = subseq_of(cat);
      const PackedSignature& my_sig = sig_of(item_ids[i]);
      if (sub && !sub->empty()) {
        auto ctx = category_context(*sub);
        DenseMatrix sims(1, sub->size());
        for (std::size_t j = 0; j < sub->size(); ++j)
          sims.at(0, j) =
              static_cast<float>(similarity(my_sig, sig_of((*sub)[j].item_id)));
        DenseMatrix din = lsh_din_projected(sims, ctx->projected);
        put(din.data.data(), d);
        DenseMatrix tier = simtier(sims, model_.cfg.tier_count);
        put(tier.data.data(), model_.cfg.tier_count);
      } else {
        c += d + model_.cfg.tier_count;  // zeros
      }

      auto raw = raw_item_embedding(item_ids[i]);
      put(raw->data.data(), raw->cols);
    }
    return mlp_forward(x, model_.head);
  }

  // Equivalence between pipelines on the current snapshot. Updates listed
  // for a request index are applied to the store before that request; until
  // the nearline queue drains (after the request), comparisons are reported
  // as staleness rather than strict diffs.
  EquivReport equivalence_check(
      std::span<const Request> trace,
      const std::map<std::size_t, std::vector<ItemUpdateEvent>>& updates = {}) {
    EquivReport report;
    for (std::size_t k = 0; k < trace.size(); ++k) {
      bool pending = false;
      std::vector<ItemUpdateEvent> applied;
      if (auto it = updates.find(k); it != updates.end()) {
        for (const auto& ev : it->second) {
          store_.apply_update(ev);
          applied.push_back(ev);
        }
        invalidate_raw_items(applied);
        pending = true;
      }
      auto seq = run_sequential(trace[k]);
      auto aif = run_aif(trace[k]);
      EquivRow row;
      row.request_id = trace[k].request_id;
      for (std::size_t i = 0; i < seq.scored.size(); ++i)
        row.max_abs_diff = std::max(
            row.max_abs_diff,
            std::abs(seq.scored[i].score - aif.scored[i].score));
      row.rank_agreement = ranking_of(seq.scored) == ranking_of(aif.scored);
      row.excluded = pending;
      if (pending) {
        report.max_staleness_delta =
            std::max(report.max_staleness_delta, row.max_abs_diff);
        ++report.excluded_count;
        // drain the queue: nearline and signature tables catch up
        nearline_.apply_incremental(applied);
        for (const auto& ev : applied) signatures_.apply_update(ev, model_.plane);
      } else {
        report.max_diff_strict =
            std::max(report.max_diff_strict, row.max_abs_diff);
        if (row.max_abs_diff > 1e-6 || !row.rank_agreement)
          report.pass = false;
      }
      report.rows.push_back(std::move(row));
    }
    return report;
  }

  static std::vector<std::uint64_t> ranking_of(
      const std::vector<ScoredCandidate>& scored) {
    std::vector<std::uint64_t> order(scored.size());
    std::vector<std::size_t> idx(scored.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (scored[a].score != scored[b].score)
        return scored[a].score > scored[b].score;
      return scored[a].item_id < scored[b].item_id;
    });
    for (std::size_t i = 0; i < idx.size(); ++i) order[i] = scored[idx[i]].item_id;
    return order;
  }

  // shared_ptr copies keep wall-clock concurrent readers safe across
  // memo rehashes
  std::shared_ptr<const DenseMatrix> raw_item_embedding(
      std::uint64_t item_id) const {
    auto rec = store_.item(item_id);
    std::scoped_lock lock(memo_mu_);
    auto it = raw_items_.find(item_id);
    if (it == raw_items_.end() || it->second.first != rec->version) {
      auto emb = std::make_shared<const DenseMatrix>(
          materialize_item(*rec, store_.tables()));
      it = raw_items_.insert_or_assign(item_id,
                                       std::make_pair(rec->version, emb))
               .first;
    }
    return it->second.second;
  }

 private:
  struct CategoryContext {
    DenseMatrix projected;  // len x d, sequence rows through W_seq
  };

  // Projection of a subsequence; depends only on item/category ids, which
  // never change, so the memo never needs invalidation.
  std::shared_ptr<const CategoryContext> category_context(
      const SubSequence& sub) const {
    std::uint64_t key = 0xcafeULL;
    for (const auto& ev : sub) key = mix64(key, ev.item_id);
    key = mix64(key, sub.size());
    {
      std::scoped_lock lock(memo_mu_);
      auto it = cat_ctx_.find(key);
      if (it != cat_ctx_.end()) return it->second;
    }
    auto ctx = std::make_shared<CategoryContext>();
    DenseMatrix emb = materialize_sequence(sub, store_.tables());
    ctx->projected = matmul(emb, model_.w_seq, /*transpose_b=*/true);
    std::scoped_lock lock(memo_mu_);
    return cat_ctx_.emplace(key, std::move(ctx)).first->second;
  }

  void invalidate_raw_items(const std::vector<ItemUpdateEvent>& events) {
    std::scoped_lock lock(memo_mu_);
    for (const auto& ev : events) raw_items_.erase(ev.item_id);
  }

  FeatureStore& store_;
  const PrerankModel& model_;
  StageCostConfig cost_;
  Options opts_;
  UserAsyncEngine user_engine_;
  NearlineEngine nearline_;
  SimLruCache sim_cache_;
  SimHardStore sim_store_;
  SignatureTable signatures_;
  std::vector<std::uint64_t> sorted_item_ids_;
  std::atomic<std::uint64_t> user_forwards_{0};
  mutable std::mutex memo_mu_;
  mutable std::unordered_map<
      std::uint64_t,
      std::pair<std::uint64_t, std::shared_ptr<const DenseMatrix>>>
      raw_items_;
  mutable std::unordered_map<std::uint64_t,
                             std::shared_ptr<const CategoryContext>>
      cat_ctx_;
};

}  // namespace aif
