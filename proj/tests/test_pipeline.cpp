#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "aif/pipeline.hpp"
#include "aif/train.hpp"
#include "test_util.hpp"

using namespace aif;

namespace {

struct Fixture {
  FeatureStore store;
  PrerankModel model;

  explicit Fixture(std::uint64_t seed = 42)
      : store(FeatureStore::generate(test::small_store_config(seed))),
        model(PrerankModel::create(
            test::small_model_config(store.config()))) {}
};

Request make_request(int i, std::uint64_t user_id) {
  Request r;
  r.request_id = "req-" + std::to_string(i);
  r.user_id = user_id;
  r.arrival_ms = 10.0 * i;
  r.candidate_seed = 1000 + i;
  return r;
}

StageCostConfig quiet_costs() {
  StageCostConfig c;
  c.parse.alpha_ms = 0.0;
  c.parse.beta_ms_per_event = 0.0;
  c.prerank_forward_ms = 0.0;
  return c;
}

}  // namespace

TEST_CASE("retrieval stub is deterministic and covers the store") {
  Fixture f;
  Pipeline p(f.store, f.model);
  Request r = make_request(0, 1);
  CHECK(p.retrieval_stub(r) == p.retrieval_stub(r));

  // candidate_count >= store size -> permutation of all items
  auto ids = p.retrieval_stub(r);
  CHECK(ids.size() == f.store.num_items());
  std::set<std::uint64_t> uniq(ids.begin(), ids.end());
  CHECK(uniq.size() == ids.size());

  Pipeline::Options small_opts;
  small_opts.candidate_count = 32;
  Pipeline q(f.store, f.model, {}, small_opts);
  std::set<std::uint64_t> covered;
  for (int i = 0; i < 1000; ++i) {
    for (auto id : q.retrieval_stub(make_request(i, 1))) covered.insert(id);
  }
  CHECK(covered.size() >=
        static_cast<std::size_t>(0.95 * f.store.num_items()));
}

TEST_CASE("teacher ranks are a permutation of 1..b") {
  Fixture f;
  Pipeline p(f.store, f.model);
  auto ids = p.retrieval_stub(make_request(0, 1));
  auto ranks = p.teacher_ranks(ids);
  std::vector<std::size_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i + 1);
}

TEST_CASE("duplicate items in a batch get identical scores") {
  Fixture f;
  Pipeline p(f.store, f.model);
  auto user_vec = p.user_engine().compute(f.store.user(1), "req-dup");
  std::vector<std::uint64_t> ids = {5, 9, 5};
  auto lk = n2o_lookup(*p.nearline().published(), ids);
  DenseMatrix scores = p.prerank_score(
      user_vec, ids, lk.vectors, lk.bea_weights,
      [&](std::uint64_t id) -> const PackedSignature& {
        return p.signatures().get(id);
      },
      [&](std::uint64_t cat) { return p.sim_store().find(1, cat); },
      p.nearline().published()->model_version);
  CHECK(scores.at(0, 0) == scores.at(2, 0));
}

TEST_CASE("zeroed head weights produce a constant bias score") {
  Fixture f;
  PrerankModel zeroed = f.model;
  zeroed.head = {DenseLayer{DenseMatrix(1, zeroed.head_input_dim()),
                            DenseMatrix(1, 1, 2.5f), Activation::identity}};
  Pipeline p(f.store, zeroed);
  auto res = p.run_aif(make_request(0, 2));
  for (const auto& c : res.scored) CHECK(c.score == 2.5);
}

TEST_CASE("batch scoring equals the single-item loop oracle") {
  Fixture f;
  Pipeline p(f.store, f.model);
  auto user_vec = p.user_engine().compute(f.store.user(3), "req-loop");
  std::vector<std::uint64_t> ids = {1, 2, 3, 4, 5, 6, 7, 8};
  auto table = p.nearline().published();
  auto lk = n2o_lookup(*table, ids);
  auto sig_of = [&](std::uint64_t id) -> const PackedSignature& {
    return p.signatures().get(id);
  };
  auto sub_of = [&](std::uint64_t cat) { return p.sim_store().find(3, cat); };
  DenseMatrix batch = p.prerank_score(user_vec, ids, lk.vectors,
                                      lk.bea_weights, sig_of, sub_of,
                                      table->model_version);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<std::uint64_t> one = {ids[i]};
    auto lk1 = n2o_lookup(*table, one);
    DenseMatrix s = p.prerank_score(user_vec, one, lk1.vectors,
                                    lk1.bea_weights, sig_of, sub_of,
                                    table->model_version);
    CHECK(std::abs(batch.at(i, 0) - s.at(0, 0)) <= 1e-6f);
  }
}

TEST_CASE("model snapshot mismatch raises a consistency error") {
  Fixture f;
  Pipeline p(f.store, f.model);
  auto user_vec = p.user_engine().compute(f.store.user(1), "req-v");
  std::vector<std::uint64_t> ids = {1};
  auto lk = n2o_lookup(*p.nearline().published(), ids);
  auto sig_of = [&](std::uint64_t id) -> const PackedSignature& {
    return p.signatures().get(id);
  };
  auto sub_of = [&](std::uint64_t cat) { return p.sim_store().find(1, cat); };
  CHECK_THROWS_AS(p.prerank_score(user_vec, ids, lk.vectors, lk.bea_weights,
                                  sig_of, sub_of, /*table version*/ 99),
                  ConsistencyError);
  AsyncUserVector stale = user_vec;
  stale.model_version = 99;
  CHECK_THROWS_AS(p.prerank_score(stale, ids, lk.vectors, lk.bea_weights,
                                  sig_of, sub_of,
                                  p.nearline().published()->model_version),
                  ConsistencyError);
}

TEST_CASE("sequential latency is the chain sum: 30+10+5+8+4 = 57") {
  Fixture f;
  StageCostConfig cost = quiet_costs();
  cost.minibatch_size = 100000;  // one mini-batch
  Pipeline p(f.store, f.model, cost);
  auto res = p.run_sequential(make_request(0, 1));
  CHECK(res.latency.total == 57.0);
  CHECK(res.latency.retrieval == 30.0);
  CHECK(res.latency.cross_parse == 0.0);
}

TEST_CASE("two mini-batches charge the user side twice in counters") {
  Fixture f;
  StageCostConfig cost = quiet_costs();
  cost.minibatch_size = 64;  // 128 candidates -> 2 batches
  Pipeline p(f.store, f.model, cost);
  p.reset_counters();
  p.run_sequential(make_request(0, 1));
  CHECK(p.counters().user_forwards == 2);
  CHECK(p.counters().item_forwards == f.store.num_items());
}

TEST_CASE("aif latency overlaps the user path with retrieval") {
  Fixture f;

  SUBCASE("user path below retrieval adds zero latency") {
    StageCostConfig cost = quiet_costs();  // user path 10+5=15 < 30
    Pipeline::Options opts;
    opts.sim_precache = false;
    Pipeline p(f.store, f.model, cost, opts);
    auto res = p.run_aif(make_request(0, 1));
    // prerank path = item_fetch only (no misses, no parse, no forward)
    CHECK(res.latency.total == 30.0 + 8.0);
  }

  SUBCASE("user path above retrieval dominates") {
    StageCostConfig cost = quiet_costs();
    cost.user_fetch_ms = 30.0;
    cost.user_forward_ms = 10.0;  // user path 40 > 30
    Pipeline::Options opts;
    opts.sim_precache = false;
    Pipeline p(f.store, f.model, cost, opts);
    auto res = p.run_aif(make_request(0, 1));
    CHECK(res.latency.total == 40.0 + 8.0);
  }
}

TEST_CASE("aif latency never exceeds sequential when user path fits") {
  Fixture f;
  StageCostConfig cost;  // defaults include parse costs
  Pipeline p(f.store, f.model, cost);
  for (int i = 0; i < 10; ++i) {
    Request r = make_request(i, 1 + i % 6);
    auto seq = p.run_sequential(r);
    auto aif = p.run_aif(r);
    CHECK(aif.latency.total <= seq.latency.total);
  }
}

TEST_CASE("pipelines agree on scores for a single request") {
  Fixture f;
  Pipeline p(f.store, f.model);
  Request r = make_request(0, 4);
  auto seq = p.run_sequential(r);
  auto aif = p.run_aif(r);
  REQUIRE(seq.scored.size() == aif.scored.size());
  for (std::size_t i = 0; i < seq.scored.size(); ++i) {
    CHECK(seq.scored[i].item_id == aif.scored[i].item_id);
    CHECK(std::abs(seq.scored[i].score - aif.scored[i].score) <= 1e-6);
    CHECK(seq.scored[i].bid == aif.scored[i].bid);
  }
}

TEST_CASE("equivalence check passes on an empty trace") {
  Fixture f;
  Pipeline p(f.store, f.model);
  auto report = p.equivalence_check({});
  CHECK(report.pass);
  CHECK(report.rows.empty());
}

TEST_CASE("equivalence check passes on a 100-request frozen trace") {
  Fixture f;
  Pipeline p(f.store, f.model);
  std::vector<Request> trace;
  for (int i = 0; i < 100; ++i) trace.push_back(make_request(i, 1 + i % 6));
  auto report = p.equivalence_check(trace);
  CHECK(report.pass);
  CHECK(report.max_diff_strict <= 1e-6);
  CHECK(report.excluded_count == 0);
  for (const auto& row : report.rows) CHECK(row.rank_agreement);
}

TEST_CASE("interleaved updates are excluded and reported as staleness") {
  Fixture f;
  Pipeline p(f.store, f.model);
  std::vector<Request> trace;
  for (int i = 0; i < 4; ++i) trace.push_back(make_request(i, 1 + i % 3));
  std::map<std::size_t, std::vector<ItemUpdateEvent>> updates;
  updates[1] = make_random_events(f.store, 5, 77, 1);
  auto report = p.equivalence_check(trace, updates);
  CHECK(report.excluded_count == 1);
  CHECK(report.rows[1].excluded);
  CHECK_FALSE(report.rows[0].excluded);
  CHECK_FALSE(report.rows[2].excluded);
  // strict rows (incl. post-drain requests) still pass
  CHECK(report.pass);
  CHECK(report.max_diff_strict <= 1e-6);
}

TEST_CASE("copr loss at the indifference point equals sum dNDCG * ln 2") {
  std::vector<ScoredCandidate> scored;
  std::vector<std::size_t> ranks = {3, 1, 4, 2, 5};
  for (std::size_t i = 0; i < 5; ++i) {
    double bid = 0.5 + 0.1 * static_cast<double>(i);
    scored.push_back({i, 2.0 / bid, bid});  // y*bid identical everywhere
  }
  double want = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j)
      want += delta_ndcg(ranks[i], ranks[j]);
  want *= std::log(2.0);
  CHECK(std::abs(copr_loss(scored, ranks) - want) <= 1e-9);
}

TEST_CASE("copr loss of a single candidate is zero") {
  std::vector<ScoredCandidate> one = {{1, 2.0, 1.0}};
  CHECK(copr_loss(one, {1}) == 0.0);
}

TEST_CASE("copr loss rejects non-positive bids") {
  std::vector<ScoredCandidate> bad = {{1, 1.0, 0.0}, {2, 1.0, 1.0}};
  CHECK_THROWS_AS(copr_loss(bad, {1, 2}), std::domain_error);
}

TEST_CASE("copr loss equals a pairwise loop oracle") {
  SplitMix64 g(5);
  std::vector<ScoredCandidate> scored;
  std::vector<std::size_t> ranks = {2, 5, 1, 4, 3};
  for (std::size_t i = 0; i < 5; ++i)
    scored.push_back({i, 0.5 + g.uniform01(), 0.5 + g.uniform01()});
  double want = 0.0;
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b) {
      if (ranks[a] >= ranks[b]) continue;  // a strictly better
      double ratio = (scored[a].score * scored[a].bid) /
                     (scored[b].score * scored[b].bid);
      double g1 = 1.0 / ranks[a] - 1.0 / ranks[b];
      double d1 = 1.0 / std::log2(1.0 + ranks[a]) -
                  1.0 / std::log2(1.0 + ranks[b]);
      want += std::abs(g1) * std::abs(d1) *
              std::log(1.0 + std::exp(-(ratio - 1.0)));
    }
  CHECK(std::abs(copr_loss(scored, ranks) - want) <= 1e-9);
  CHECK(copr_loss(scored, ranks) >= 0.0);
}

TEST_CASE("copr gradient matches central finite differences") {
  SplitMix64 g(6);
  std::vector<ScoredCandidate> scored;
  std::vector<std::size_t> ranks = {4, 1, 3, 2};
  for (std::size_t i = 0; i < 4; ++i)
    scored.push_back({i, 0.5 + g.uniform01(), 0.5 + g.uniform01()});
  auto grad = copr_loss_grad(scored, ranks);
  const double h = 1e-7;
  for (std::size_t k = 0; k < 4; ++k) {
    auto plus = scored;
    auto minus = scored;
    plus[k].score += h;
    minus[k].score -= h;
    double fd = (copr_loss(plus, ranks) - copr_loss(minus, ranks)) / (2 * h);
    CHECK(std::abs(grad[k] - fd) <=
          1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("toy train with lr=0 keeps the loss flat") {
  auto problem = ToyTrainProblem::make(1);
  auto res = toy_train(problem, 5, 0.0);
  for (double l : res.loss_trajectory)
    CHECK(l == res.loss_trajectory.front());
  CHECK_FALSE(res.diverged);
}

TEST_CASE("finite-difference descent solves a quadratic sanity problem") {
  // minimize (x - 3)^2 with the same central-difference scheme the toy
  // trainer uses for bridge parameters
  double x = 10.0;
  const double h = 1e-6, lr = 0.2;
  auto f = [](double v) { return (v - 3.0) * (v - 3.0); };
  for (int step = 0; step < 100; ++step)
    x -= lr * (f(x + h) - f(x - h)) / (2 * h);
  CHECK(std::abs(x - 3.0) <= 1e-3);
}

TEST_CASE("analytic head gradient matches finite differences") {
  auto problem = ToyTrainProblem::make(2);
  auto analytic = problem.head_grad();
  SplitMix64 g(9);
  const double h = 1e-6;
  int checked = 0;
  while (checked < 10) {
    std::size_t li = g.next() % problem.head.size();
    std::size_t k = g.next() % problem.head[li].weight.data.size();
    double saved = problem.head[li].weight.data[k];
    problem.head[li].weight.data[k] = saved + h;
    double lp = problem.loss();
    problem.head[li].weight.data[k] = saved - h;
    double lm = problem.loss();
    problem.head[li].weight.data[k] = saved;
    double fd = (lp - lm) / (2 * h);
    double an = analytic.dweight[li].data[k];
    if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;  // dead relu
    CHECK(std::abs(an - fd) <= 1e-3 * std::max(1.0, std::abs(fd)));
    ++checked;
  }
}

TEST_CASE("toy training decreases the loss most of the time") {
  auto problem = ToyTrainProblem::make(3);
  auto res = toy_train(problem, 50, 1e-3);
  int decreasing = 0;
  for (std::size_t s = 1; s < res.loss_trajectory.size(); ++s)
    if (res.loss_trajectory[s] <= res.loss_trajectory[s - 1]) ++decreasing;
  CHECK(decreasing >= 40);
  CHECK_FALSE(res.diverged);
}

TEST_CASE("ranking helper sorts by score with id tiebreak") {
  std::vector<ScoredCandidate> scored = {
      {10, 1.0, 1.0}, {20, 3.0, 1.0}, {30, 1.0, 1.0}};
  auto order = Pipeline::ranking_of(scored);
  CHECK(order == std::vector<std::uint64_t>{20, 10, 30});
}
