#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "aif/feature_store.hpp"
#include "aif/io.hpp"
#include "aif/matrix.hpp"
#include "aif/rng.hpp"

namespace aif {

// Random hyperplanes, shared across all embeddings and fixed after creation.
struct HashPlane {
  DenseMatrix w_hash;  // d' x d_mm
  std::uint64_t seed = 0;

  static HashPlane create(std::uint64_t seed, std::size_t bits,
                          std::size_t d_mm) {
    HashPlane p;
    p.seed = seed;
    p.w_hash = DenseMatrix(bits, d_mm);
    fill_normal(p.w_hash.data, mix64(seed, 0x15a5ULL));
    return p;
  }
};

// d' bits packed MSB-first into bytes; d' must be a multiple of 8.
struct PackedSignature {
  std::vector<std::uint8_t> bytes;
  std::uint32_t bits = 0;

  bool operator==(const PackedSignature&) const = default;
};

struct PopcountLut {
  std::array<std::uint8_t, 256> table{};

  PopcountLut() {
    for (int k = 0; k < 256; ++k) {
      int c = 0;
      for (int b = 0; b < 8; ++b) c += (k >> b) & 1;
      table[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(c);
    }
  }
};

inline const PopcountLut& popcount_lut() {
  static const PopcountLut lut;
  return lut;
}

// bit_k = 1 iff (m * W_hash^T)_k > 0; Sign(0) maps to 0.
inline std::vector<std::uint8_t> lsh_hash(const DenseMatrix& m,
                                          const HashPlane& plane) {
  if (m.rows != 1 || m.cols != plane.w_hash.cols)
    throw ShapeError("lsh_hash: embedding/plane dim mismatch");
  DenseMatrix proj = matmul(m, plane.w_hash, /*transpose_b=*/true);
  std::vector<std::uint8_t> out(proj.cols);
  for (std::size_t k = 0; k < proj.cols; ++k)
    out[k] = proj.at(0, k) > 0.0f ? 1 : 0;
  return out;
}

inline PackedSignature pack(const std::vector<std::uint8_t>& bits) {
  if (bits.size() % 8 != 0)
    throw ShapeError("pack: bit count must be a multiple of 8");
  PackedSignature sig;
  sig.bits = static_cast<std::uint32_t>(bits.size());
  sig.bytes.resize(bits.size() / 8);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) sig.bytes[i / 8] |= static_cast<std::uint8_t>(1 << (7 - i % 8));
  return sig;
}

inline std::vector<std::uint8_t> unpack(const PackedSignature& sig) {
  std::vector<std::uint8_t> bits(sig.bits);
  for (std::size_t i = 0; i < bits.size(); ++i)
    bits[i] = (sig.bytes[i / 8] >> (7 - i % 8)) & 1;
  return bits;
}

// Fraction of matching bits: (1/d') * sum_bytes lut[255 - (a XOR b)].
inline double similarity(const PackedSignature& a, const PackedSignature& b,
                         const PopcountLut& lut = popcount_lut()) {
  if (a.bits != b.bits) throw ShapeError("similarity: signature length mismatch");
  std::uint32_t matches = 0;
  for (std::size_t i = 0; i < a.bytes.size(); ++i)
    matches += lut.table[255 - (a.bytes[i] ^ b.bytes[i])];
  return static_cast<double>(matches) / static_cast<double>(a.bits);
}

inline DenseMatrix similarity_matrix(const std::vector<PackedSignature>& items,
                                     const std::vector<PackedSignature>& seq,
                                     const PopcountLut& lut = popcount_lut()) {
  DenseMatrix out(items.size(), seq.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = 0; j < seq.size(); ++j)
      out.at(i, j) = static_cast<float>(similarity(items[i], seq[j], lut));
  return out;
}

inline DenseMatrix lsh_din_projected(const DenseMatrix& m_sim,
                                     const DenseMatrix& projected_seq) {
  return matmul(m_sim, projected_seq);
}

// M_sim * (U_seq * W_seq^T)
inline DenseMatrix lsh_din(const DenseMatrix& u_seq, const DenseMatrix& m_sim,
                           const DenseMatrix& w_seq) {
  DenseMatrix projected = matmul(u_seq, w_seq, /*transpose_b=*/true);
  return lsh_din_projected(m_sim, projected);
}

// Histogram of similarity scores over N uniform tiers on [0,1]; the top
// tier is closed at 1.0.
inline DenseMatrix simtier(const float* scores, std::size_t count,
                           std::size_t tiers) {
  if (tiers < 1) throw ShapeError("simtier: need at least one tier");
  DenseMatrix h(1, tiers);
  for (std::size_t i = 0; i < count; ++i) {
    float s = scores[i];
    if (s < 0.0f || s > 1.0f)
      throw std::domain_error("simtier: score outside [0,1]: " +
                              std::to_string(s));
    std::size_t t = static_cast<std::size_t>(
        static_cast<double>(s) * static_cast<double>(tiers));
    if (t >= tiers) t = tiers - 1;
    h.at(0, t) += 1.0f;
  }
  return h;
}

inline DenseMatrix simtier(const DenseMatrix& sim_row, std::size_t tiers) {
  if (sim_row.rows != 1) throw ShapeError("simtier: expected a single row");
  return simtier(sim_row.row(0), sim_row.cols, tiers);
}

// --- complexity accounting --------------------------------------------

struct ComplexityRow {
  std::string method;
  std::uint64_t multiply_adds = 0;
  double reduction_pct = 0.0;  // vs baseline, negative means cheaper
};

inline std::vector<ComplexityRow> complexity_report(std::uint64_t b,
                                                    std::uint64_t l,
                                                    std::uint64_t d_id,
                                                    std::uint64_t d_mm,
                                                    std::uint64_t d_lsh) {
  const std::uint64_t base = b * l * (d_id + d_mm);
  auto row = [&](std::string name, std::uint64_t ops) {
    ComplexityRow r;
    r.method = std::move(name);
    r.multiply_adds = ops;
    r.reduction_pct =
        (static_cast<double>(ops) / static_cast<double>(base) - 1.0) * 100.0;
    return r;
  };
  return {
      row("DIN + SimTier", base),
      row("LSH-DIN + SimTier", b * l * (d_lsh + d_mm)),
      row("DIN + LSH-SimTier", b * l * (d_id + d_lsh)),
      row("MM-DIN + SimTier", b * l * d_mm),
      row("LSH-DIN + LSH-SimTier (AIF)", b * l * d_lsh),
  };
}

// --- signature table ---------------------------------------------------

// Signatures are computed once per item and only touched again when an
// update event carries a new multi-modal embedding.
class SignatureTable {
 public:
  SignatureTable() = default;

  static SignatureTable build(const FeatureStore& store,
                              const HashPlane& plane) {
    SignatureTable t;
    for (auto id : store.item_ids()) {
      auto rec = store.item(id);
      DenseMatrix mm(1, rec->mm_embedding.size());
      mm.data = rec->mm_embedding;
      t.sigs_.emplace(id, pack(lsh_hash(mm, plane)));
    }
    return t;
  }

  void apply_update(const ItemUpdateEvent& ev, const HashPlane& plane) {
    if (!ev.new_mm_embedding) return;
    DenseMatrix mm(1, ev.new_mm_embedding->size());
    mm.data = *ev.new_mm_embedding;
    sigs_[ev.item_id] = pack(lsh_hash(mm, plane));
  }

  const PackedSignature& get(std::uint64_t item_id) const {
    auto it = sigs_.find(item_id);
    if (it == sigs_.end())
      throw std::out_of_range("no signature for item " +
                              std::to_string(item_id));
    return it->second;
  }

  bool contains(std::uint64_t item_id) const {
    return sigs_.count(item_id) != 0;
  }

  std::size_t size() const { return sigs_.size(); }

  const std::unordered_map<std::uint64_t, PackedSignature>& entries() const {
    return sigs_;
  }

  // file: magic "LSH1", u32 d', u64 count, records (u64 item_id, bytes)
  void save(const std::string& path, std::uint32_t bits) const {
    ByteWriter w;
    w.raw("LSH1", 4);
    w.u32(bits);
    w.u64(sigs_.size());
    for (const auto& [id, sig] : sigs_) {
      w.u64(id);
      w.raw(sig.bytes.data(), sig.bytes.size());
    }
    write_file(path, w.bytes());
  }

  static SignatureTable load(const std::string& path) {
    auto bytes = read_file(path);
    ByteReader r(bytes);
    char magic[4];
    for (auto& c : magic) c = static_cast<char>(r.u8());
    if (std::string(magic, 4) != "LSH1")
      throw DecodeError("bad signature table magic", 0);
    std::uint32_t bits = r.u32();
    std::uint64_t count = r.u64();
    SignatureTable t;
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t id = r.u64();
      PackedSignature sig;
      sig.bits = bits;
      sig.bytes.resize(bits / 8);
      for (auto& b : sig.bytes) b = r.u8();
      t.sigs_.emplace(id, std::move(sig));
    }
    return t;
  }

 private:
  std::unordered_map<std::uint64_t, PackedSignature> sigs_;
};

// Angular-fidelity sample point: for unit vectors at angle theta, the
// expected bit-match fraction is 1 - theta/pi.
struct CalibrationPoint {
  double theta = 0.0;
  double theory = 0.0;
  double empirical = 0.0;
};

inline std::vector<CalibrationPoint> lsh_calibration_curve(
    std::size_t bits, std::size_t d_mm, std::size_t pairs,
    std::uint64_t seed) {
  HashPlane plane = HashPlane::create(seed, bits, d_mm);
  SplitMix64 g(mix64(seed, 0xca11b8ULL));
  std::vector<CalibrationPoint> out;
  out.reserve(pairs);
  for (std::size_t p = 0; p < pairs; ++p) {
    DenseMatrix u(1, d_mm), v(1, d_mm);
    double nu = 0.0, nv = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < d_mm; ++j) {
      u.at(0, j) = static_cast<float>(g.normal());
      v.at(0, j) = static_cast<float>(g.normal());
    }
    for (std::size_t j = 0; j < d_mm; ++j) {
      nu += static_cast<double>(u.at(0, j)) * u.at(0, j);
      nv += static_cast<double>(v.at(0, j)) * v.at(0, j);
      dot += static_cast<double>(u.at(0, j)) * v.at(0, j);
    }
    double cosang = dot / (std::sqrt(nu) * std::sqrt(nv));
    cosang = std::clamp(cosang, -1.0, 1.0);
    CalibrationPoint pt;
    pt.theta = std::acos(cosang);
    pt.theory = 1.0 - pt.theta / M_PI;
    pt.empirical = similarity(pack(lsh_hash(u, plane)), pack(lsh_hash(v, plane)));
    out.push_back(pt);
  }
  return out;
}

}  // namespace aif
