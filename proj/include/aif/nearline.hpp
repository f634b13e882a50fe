#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aif/bea.hpp"
#include "aif/feature_store.hpp"
#include "aif/io.hpp"
#include "aif/matrix.hpp"
#include "aif/model.hpp"

namespace aif {

struct N2OMissError : std::runtime_error {
  std::uint64_t item_id;
  explicit N2OMissError(std::uint64_t id)
      : std::runtime_error("N2O miss for item " + std::to_string(id)),
        item_id(id) {}
};

struct N2OEntry {
  DenseMatrix vector;       // 1 x d
  DenseMatrix bea_weights;  // 1 x n
  std::uint64_t version = 0;

  bool operator==(const N2OEntry&) const = default;
};

struct N2OIndexTable {
  // ordered map so file serialization and iteration are deterministic
  std::map<std::uint64_t, N2OEntry> entries;
  std::uint64_t table_epoch = 0;
  std::uint64_t model_version = 0;
};

// Eq. 4: I_hat = MLP(I).
inline DenseMatrix reduce_item(const DenseMatrix& item_embedding,
                               const Mlp& model) {
  return mlp_forward(item_embedding, model);
}

struct NearlineMetrics {
  std::atomic<std::uint64_t> item_forwards{0};
  std::atomic<std::uint64_t> misses{0};
};

// Nearline item-side engine. One rebuild task at a time; publication is a
// single atomic swap of an immutable table.
class NearlineEngine {
 public:
  NearlineEngine(const FeatureStore& store, const PrerankModel& model)
      : store_(store), model_(model) {}

  N2OEntry compute_entry(const ItemRecord& rec) const {
    DenseMatrix item_emb = materialize_item(rec, store_.tables());
    N2OEntry e;
    e.vector = reduce_item(item_emb, model_.item_mlp);
    e.bea_weights = bea_item_phase(model_.bridges.b, e.vector);
    e.version = rec.version;
    metrics_.item_forwards.fetch_add(1, std::memory_order_relaxed);
    return e;
  }

  // Full rebuild: one entry per item, epoch advanced, atomic publication.
  std::shared_ptr<const N2OIndexTable> rebuild_full() {
    std::scoped_lock rebuild_lock(rebuild_mu_);
    auto table = std::make_shared<N2OIndexTable>();
    for (auto id : store_.item_ids())
      table->entries.emplace(id, compute_entry(*store_.item(id)));
    table->model_version = model_.model_version;
    table->table_epoch = next_epoch();
    publish(table);
    return table;
  }

  // Incremental: only touched item ids recomputed against the current store.
  std::shared_ptr<const N2OIndexTable> apply_incremental(
      std::span<const ItemUpdateEvent> events) {
    std::scoped_lock rebuild_lock(rebuild_mu_);
    auto prior = published();
    if (events.empty()) return prior;
    auto table = std::make_shared<N2OIndexTable>();
    if (prior) *table = *prior;
    for (const auto& ev : events)
      table->entries.insert_or_assign(ev.item_id,
                                      compute_entry(*store_.item(ev.item_id)));
    table->model_version = model_.model_version;
    table->table_epoch = next_epoch();
    publish(table);
    return table;
  }

  std::shared_ptr<const N2OIndexTable> published() const {
    std::scoped_lock lock(publish_mu_);
    return published_;
  }

  NearlineMetrics& metrics() const { return metrics_; }

  void reset_metrics() {
    metrics_.item_forwards = 0;
    metrics_.misses = 0;
  }

 private:
  std::uint64_t next_epoch() { return ++epoch_; }

  void publish(std::shared_ptr<const N2OIndexTable> table) {
    std::scoped_lock lock(publish_mu_);
    published_ = std::move(table);
  }

  const FeatureStore& store_;
  const PrerankModel& model_;
  std::mutex rebuild_mu_;
  mutable std::mutex publish_mu_;
  std::shared_ptr<const N2OIndexTable> published_;
  std::uint64_t epoch_ = 0;
  mutable NearlineMetrics metrics_;
};

struct N2OLookupResult {
  DenseMatrix vectors;      // b x d
  DenseMatrix bea_weights;  // b x n
};

// Rows in request order; a missing id raises N2OMissError (the pipeline
// falls back to a synchronous reduce and records the miss).
inline N2OLookupResult n2o_lookup(const N2OIndexTable& table,
                                  std::span<const std::uint64_t> item_ids) {
  N2OLookupResult out;
  bool first = true;
  std::size_t row = 0;
  for (auto id : item_ids) {
    auto it = table.entries.find(id);
    if (it == table.entries.end()) throw N2OMissError(id);
    if (first) {
      out.vectors = DenseMatrix(item_ids.size(), it->second.vector.cols);
      out.bea_weights = DenseMatrix(item_ids.size(), it->second.bea_weights.cols);
      first = false;
    }
    std::copy(it->second.vector.data.begin(), it->second.vector.data.end(),
              out.vectors.row(row));
    std::copy(it->second.bea_weights.data.begin(),
              it->second.bea_weights.data.end(), out.bea_weights.row(row));
    ++row;
  }
  return out;
}

// file: magic "N2O1", u32 format version, u32 d, u32 n, u64 count,
// records (u64 item_id, u64 version, d f32, n f32)
inline void save_n2o(const N2OIndexTable& table, const std::string& path) {
  ByteWriter w;
  w.raw("N2O1", 4);
  w.u32(1);
  std::uint32_t d = 0, n = 0;
  if (!table.entries.empty()) {
    d = static_cast<std::uint32_t>(table.entries.begin()->second.vector.cols);
    n = static_cast<std::uint32_t>(
        table.entries.begin()->second.bea_weights.cols);
  }
  w.u32(d);
  w.u32(n);
  w.u64(table.entries.size());
  for (const auto& [id, e] : table.entries) {
    w.u64(id);
    w.u64(e.version);
    for (float f : e.vector.data) w.f32(f);
    for (float f : e.bea_weights.data) w.f32(f);
  }
  write_file(path, w.bytes());
}

inline N2OIndexTable load_n2o(const std::string& path) {
  auto bytes = read_file(path);
  ByteReader r(bytes);
  char magic[4];
  for (auto& c : magic) c = static_cast<char>(r.u8());
  if (std::string(magic, 4) != "N2O1") throw DecodeError("bad N2O magic", 0);
  if (r.u32() != 1) throw DecodeError("unsupported N2O format version", 4);
  std::uint32_t d = r.u32();
  std::uint32_t n = r.u32();
  std::uint64_t count = r.u64();
  N2OIndexTable table;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t id = r.u64();
    N2OEntry e;
    e.version = r.u64();
    e.vector = DenseMatrix(1, d);
    for (auto& f : e.vector.data) f = r.f32();
    e.bea_weights = DenseMatrix(1, n);
    for (auto& f : e.bea_weights.data) f = r.f32();
    table.entries.emplace(id, std::move(e));
  }
  return table;
}

}  // namespace aif
