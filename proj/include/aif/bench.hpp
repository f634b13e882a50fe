#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <future>
#include <iomanip>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "aif/pipeline.hpp"
#include "aif/rng.hpp"

namespace aif {

// --- workload ----------------------------------------------------------

// Trace line format: request_id,user_id,arrival_ms,candidate_seed
inline std::string format_trace(const std::vector<Request>& trace) {
  std::ostringstream os;
  os << "request_id,user_id,arrival_ms,candidate_seed\n";
  for (const auto& r : trace) {
    os << r.request_id << ',' << r.user_id << ','
       << std::fixed << std::setprecision(6) << r.arrival_ms << ','
       << r.candidate_seed << '\n';
  }
  return os.str();
}

inline void save_trace(const std::vector<Request>& trace,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << format_trace(trace);
}

inline std::vector<Request> parse_trace(std::istream& in) {
  std::vector<Request> trace;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("request_id", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    Request r;
    std::string field;
    std::getline(ls, r.request_id, ',');
    std::getline(ls, field, ',');
    r.user_id = std::stoull(field);
    std::getline(ls, field, ',');
    r.arrival_ms = std::stod(field);
    std::getline(ls, field, ',');
    r.candidate_seed = std::stoull(field);
    trace.push_back(std::move(r));
  }
  return trace;
}

inline std::vector<Request> load_trace(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open trace: " + path);
  return parse_trace(f);
}

// Poisson arrivals at rate_qps, users drawn uniformly.
inline std::vector<Request> generate_workload(std::size_t users,
                                              std::size_t requests,
                                              std::uint64_t seed,
                                              double rate_qps = 50.0) {
  if (users == 0 || requests == 0)
    throw std::invalid_argument("generate_workload: counts must be positive");
  SplitMix64 g(seed);
  std::vector<Request> trace;
  trace.reserve(requests);
  double t = 0.0;
  const double mean_gap_ms = 1000.0 / rate_qps;
  for (std::size_t i = 0; i < requests; ++i) {
    t += -mean_gap_ms * std::log(g.uniform01());
    Request r;
    r.request_id = "req-" + std::to_string(i);
    r.user_id = 1 + g.next() % users;
    r.arrival_ms = t;
    r.candidate_seed = g.next();
    trace.push_back(std::move(r));
  }
  return trace;
}

// --- latency statistics ------------------------------------------------

// Nearest-rank percentile on a copy of the sample.
inline double percentile_nearest_rank(std::vector<double> sample, double p) {
  if (sample.empty()) return 0.0;
  std::sort(sample.begin(), sample.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(sample.size())));
  if (rank == 0) rank = 1;
  return sample[rank - 1];
}

// FIFO queue with a fixed worker pool; returns per-request response times
// (wait + service).
inline std::vector<double> simulate_queue(const std::vector<double>& arrivals,
                                          const std::vector<double>& service,
                                          std::size_t workers) {
  std::priority_queue<double, std::vector<double>, std::greater<>> free_at;
  for (std::size_t w = 0; w < workers; ++w) free_at.push(0.0);
  std::vector<double> rt(arrivals.size());
  for (std::size_t i = 0; i < arrivals.size(); ++i) {
    double worker = free_at.top();
    free_at.pop();
    double start = std::max(arrivals[i], worker);
    double end = start + service[i];
    free_at.push(end);
    rt[i] = end - arrivals[i];
  }
  return rt;
}

// --- reports -----------------------------------------------------------

enum class PipelineKind { sequential, aif };
enum class BenchMode { virtual_clock, wall_clock };

struct LatencyReport {
  double avg_rt_ms = 0.0;
  double p99_rt_ms = 0.0;
  double median_rt_ms = 0.0;
  double max_qps = 0.0;
  double rt_variance = 0.0;
  LatencyBreakdown stage_totals;  // summed over requests
  PipelineCounters counters;
  std::size_t requests = 0;
};

struct BenchSettings {
  std::size_t workers = 8;
  double sla_p99_ms = 100.0;
};

inline LatencyReport summarize(const std::vector<double>& arrivals,
                               const std::vector<double>& service,
                               const BenchSettings& settings) {
  LatencyReport rep;
  rep.requests = service.size();
  auto rt = simulate_queue(arrivals, service, settings.workers);
  double sum = 0.0, sum2 = 0.0;
  for (double v : rt) {
    sum += v;
    sum2 += v * v;
  }
  if (!rt.empty()) {
    rep.avg_rt_ms = sum / static_cast<double>(rt.size());
    rep.rt_variance = sum2 / static_cast<double>(rt.size()) -
                      rep.avg_rt_ms * rep.avg_rt_ms;
  }
  rep.p99_rt_ms = percentile_nearest_rank(rt, 99.0);
  rep.median_rt_ms = percentile_nearest_rank(rt, 50.0);

  // maxQPS: largest offered rate whose p99 stays under the SLA; arrivals
  // are rescaled, service times reused (they are rate-independent here).
  if (!arrivals.empty() && arrivals.back() > 0.0) {
    double base_rate =
        static_cast<double>(arrivals.size()) / (arrivals.back() / 1000.0);
    auto p99_at = [&](double rate) {
      double scale = base_rate / rate;
      std::vector<double> scaled(arrivals.size());
      for (std::size_t i = 0; i < arrivals.size(); ++i)
        scaled[i] = arrivals[i] * scale;
      return percentile_nearest_rank(
          simulate_queue(scaled, service, settings.workers), 99.0);
    };
    double lo = 0.0, hi = base_rate;
    // grow until saturated, then 8 bisection steps
    while (p99_at(hi) <= settings.sla_p99_ms && hi < base_rate * 1e6) {
      lo = hi;
      hi *= 2.0;
    }
    for (int iter = 0; iter < 8; ++iter) {
      double mid = 0.5 * (lo + hi);
      if (p99_at(mid) <= settings.sla_p99_ms)
        lo = mid;
      else
        hi = mid;
    }
    rep.max_qps = lo;
  }
  return rep;
}

inline LatencyReport run_benchmark(Pipeline& pipeline,
                                   const std::vector<Request>& trace,
                                   PipelineKind kind, BenchMode mode,
                                   const BenchSettings& settings) {
  std::vector<double> arrivals(trace.size());
  std::vector<double> service(trace.size());
  LatencyBreakdown totals;
  auto run_one = [&](const Request& r) {
    return kind == PipelineKind::sequential ? pipeline.run_sequential(r)
                                            : pipeline.run_aif(r);
  };
  if (mode == BenchMode::virtual_clock) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
      arrivals[i] = trace[i].arrival_ms;
      auto res = run_one(trace[i]);
      service[i] = res.latency.total;
      totals.retrieval += res.latency.retrieval;
      totals.user_fetch += res.latency.user_fetch;
      totals.user_forward += res.latency.user_forward;
      totals.item_fetch += res.latency.item_fetch;
      totals.item_forward += res.latency.item_forward;
      totals.cross_parse += res.latency.cross_parse;
      totals.prerank_forward += res.latency.prerank_forward;
      totals.total += res.latency.total;
    }
  } else {
    // wall mode: bounded worker pool over real threads; numbers are
    // informational and machine-dependent
    std::vector<std::future<double>> futures;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      double busy = 0.0;
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= trace.size()) break;
        auto t0 = std::chrono::steady_clock::now();
        auto res = run_one(trace[i]);
        auto t1 = std::chrono::steady_clock::now();
        service[i] =
            std::chrono::duration<double, std::milli>(t1 - t0).count();
        busy += service[i];
        (void)res;
      }
      return busy;
    };
    for (std::size_t w = 0; w < settings.workers; ++w)
      futures.push_back(std::async(std::launch::async, worker));
    for (auto& f : futures) f.get();
    for (std::size_t i = 0; i < trace.size(); ++i)
      arrivals[i] = trace[i].arrival_ms;
  }
  LatencyReport rep = summarize(arrivals, service, settings);
  rep.stage_totals = totals;
  rep.counters = pipeline.counters();
  return rep;
}

// CSV with a stable column order plus a human-readable table.
inline std::string report_csv(const LatencyReport& r) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "metric,value\n";
  os << "requests," << r.requests << "\n";
  os << "avg_rt_ms," << r.avg_rt_ms << "\n";
  os << "p99_rt_ms," << r.p99_rt_ms << "\n";
  os << "median_rt_ms," << r.median_rt_ms << "\n";
  os << "max_qps," << r.max_qps << "\n";
  os << "rt_variance," << r.rt_variance << "\n";
  os << "stage_retrieval_ms," << r.stage_totals.retrieval << "\n";
  os << "stage_user_fetch_ms," << r.stage_totals.user_fetch << "\n";
  os << "stage_user_forward_ms," << r.stage_totals.user_forward << "\n";
  os << "stage_item_fetch_ms," << r.stage_totals.item_fetch << "\n";
  os << "stage_item_forward_ms," << r.stage_totals.item_forward << "\n";
  os << "stage_cross_parse_ms," << r.stage_totals.cross_parse << "\n";
  os << "stage_prerank_forward_ms," << r.stage_totals.prerank_forward << "\n";
  os << "counter_user_forwards," << r.counters.user_forwards << "\n";
  os << "counter_item_forwards," << r.counters.item_forwards << "\n";
  os << "counter_user_cache_hits," << r.counters.user_cache_hits << "\n";
  os << "counter_user_cache_misses," << r.counters.user_cache_misses << "\n";
  os << "counter_user_cache_evictions," << r.counters.user_cache_evictions
     << "\n";
  os << "counter_user_cache_recomputes," << r.counters.user_cache_recomputes
     << "\n";
  os << "counter_sim_hits," << r.counters.sim_hits << "\n";
  os << "counter_sim_misses," << r.counters.sim_misses << "\n";
  os << "counter_sim_evictions," << r.counters.sim_evictions << "\n";
  os << "counter_n2o_misses," << r.counters.n2o_misses << "\n";
  return os.str();
}

inline std::string report_table(const LatencyReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "  requests : " << r.requests << "\n";
  os << "  avgRT    : " << r.avg_rt_ms << " ms\n";
  os << "  p99RT    : " << r.p99_rt_ms << " ms\n";
  os << "  maxQPS   : " << r.max_qps << "\n";
  os << "  counters : user_fwd=" << r.counters.user_forwards
     << " item_fwd=" << r.counters.item_forwards
     << " sim_hit=" << r.counters.sim_hits
     << " sim_miss=" << r.counters.sim_misses
     << " n2o_miss=" << r.counters.n2o_misses << "\n";
  return os.str();
}

inline void emit_report(const LatencyReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << report_csv(r);
  if (!f) throw IoError("write failed: " + path);
}

inline std::unordered_map<std::string, double> parse_report(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open report: " + path);
  std::unordered_map<std::string, double> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  return out;
}

}  // namespace aif
