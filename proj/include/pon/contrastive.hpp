#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pon/core_math.hpp"

// Memory bank of projection embeddings and the memory-bank contrastive loss.
// One slot per sample id, refreshed each forward pass, so the contrast range
// is the whole dataset rather than the current batch.

namespace pon {

/// Unit-normalized projector output. Normalization happens at construction,
/// so cosine similarity between projections is a plain dot product.
class Projection {
 public:
  explicit Projection(std::vector<double> values) : values_(std::move(values)) {
    detail::require(!values_.empty(), "Projection: empty vector");
    double sq = 0.0;
    for (double v : values_) {
      detail::require_finite(v, "Projection entry");
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    detail::require(norm > 0.0 && std::isfinite(norm), "Projection: zero-norm vector");
    for (double& v : values_) v /= norm;
  }

  /// Trusted path for vectors that are already unit-normalized (fresh
  /// normalizer output, reloaded state). Bytes are preserved exactly, which
  /// keeps save/load and resume bit-identical.
  static Projection from_unit(std::vector<double> values) {
    double sq = 0.0;
    for (double v : values) {
      detail::require_finite(v, "Projection entry");
      sq += v * v;
    }
    detail::require(std::abs(sq - 1.0) <= 1e-9, "Projection::from_unit: vector is not unit norm");
    Projection p;
    p.values_ = std::move(values);
    return p;
  }

  int dim() const { return static_cast<int>(values_.size()); }
  const std::vector<double>& values() const { return values_; }

 private:
  Projection() = default;
  std::vector<double> values_;
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct BankEntry {
  std::int64_t id = 0;
  std::vector<double> projection;  // unit norm
  int label = 0;
};

struct Neighbor {
  std::int64_t id = 0;
  std::vector<double> projection;
  int label = 0;
  double similarity = 0.0;
};

/// Fixed-capacity store of (projection, label) pairs keyed by sample id.
/// Single writer (the training loop); concurrent read-only queries between
/// updates are fine.
class MemoryBank {
 public:
  MemoryBank(std::int64_t capacity, int proj_dim) : capacity_(capacity), proj_dim_(proj_dim) {
    detail::require(capacity >= 1, "MemoryBank: capacity must be positive");
    detail::require(proj_dim >= 1, "MemoryBank: projection dim must be positive");
  }

  std::int64_t capacity() const { return capacity_; }
  int proj_dim() const { return proj_dim_; }
  std::int64_t size() const { return static_cast<std::int64_t>(ids_.size()); }
  bool contains(std::int64_t id) const { return slot_of_.count(id) > 0; }

  /// Insert or replace the entry for a sample id. The projection is stored
  /// unit-normalized (the Projection type guarantees it).
  void update(std::int64_t id, const Projection& proj, const ClassLabel& label) {
    detail::require(proj.dim() == proj_dim_, "MemoryBank::update: projection dim mismatch");
    auto it = slot_of_.find(id);
    std::size_t slot;
    if (it != slot_of_.end()) {
      slot = it->second;
    } else {
      detail::require(size() < capacity_, "MemoryBank::update: bank is full for new id " +
                                              std::to_string(id));
      slot = ids_.size();
      ids_.push_back(id);
      labels_.push_back(0);
      data_.resize(data_.size() + static_cast<std::size_t>(proj_dim_));
      slot_of_.emplace(id, slot);
    }
    std::copy(proj.values().begin(), proj.values().end(),
              data_.begin() + static_cast<std::ptrdiff_t>(slot * static_cast<std::size_t>(proj_dim_)));
    labels_[slot] = label.index();
  }

  /// The min(q, available) entries most cosine-similar to the query, the
  /// query's own entry excluded. Descending similarity, ties broken by
  /// ascending sample id, so results do not depend on insertion order.
  std::vector<Neighbor> query_nearest(const Projection& query, int q,
                                      std::int64_t exclude_id) const {
    detail::require(q >= 1, "MemoryBank::query_nearest: q must be >= 1");
    detail::require(query.dim() == proj_dim_, "MemoryBank::query_nearest: dim mismatch");
    struct Scored {
      double sim;
      std::size_t slot;
    };
    std::vector<Scored> scored;
    scored.reserve(ids_.size());
    const std::size_t d = static_cast<std::size_t>(proj_dim_);
    const double* qv = query.values().data();
    for (std::size_t slot = 0; slot < ids_.size(); ++slot) {
      if (ids_[slot] == exclude_id) continue;
      const double* row = data_.data() + slot * d;
      double sim = 0.0;
      for (std::size_t i = 0; i < d; ++i) sim += qv[i] * row[i];
      scored.push_back({sim, slot});
    }
    const auto better = [this](const Scored& a, const Scored& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return ids_[a.slot] < ids_[b.slot];
    };
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(q), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                      scored.end(), better);
    std::vector<Neighbor> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t slot = scored[i].slot;
      const double* row = data_.data() + slot * d;
      out.push_back({ids_[slot], std::vector<double>(row, row + d), labels_[slot],
                     scored[i].sim});
    }
    return out;
  }

  /// All entries sorted by id, for serialization.
  std::vector<BankEntry> snapshot() const {
    std::vector<BankEntry> out;
    out.reserve(ids_.size());
    const std::size_t d = static_cast<std::size_t>(proj_dim_);
    for (std::size_t slot = 0; slot < ids_.size(); ++slot) {
      const double* row = data_.data() + slot * d;
      out.push_back({ids_[slot], std::vector<double>(row, row + d), labels_[slot]});
    }
    std::sort(out.begin(), out.end(),
              [](const BankEntry& a, const BankEntry& b) { return a.id < b.id; });
    return out;
  }

  void clear() {
    ids_.clear();
    labels_.clear();
    data_.clear();
    slot_of_.clear();
  }

 private:
  std::int64_t capacity_;
  int proj_dim_;
  std::vector<std::int64_t> ids_;
  std::vector<int> labels_;
  std::vector<double> data_;  // row-major size() x proj_dim_
  std::unordered_map<std::int64_t, std::size_t> slot_of_;
};

struct MclResult {
  double value = 0.0;
  std::vector<double> grad_wrt_query;  // same length as the query
};

/// Memory-bank contrastive loss
///   -(sum_{same label} e^{sim_i}) / (sum_all e^{sim_i}),  in [-1, 0],
/// with sim_i the dot product between the (unit) query and stored neighbor
/// projections. Neighbors are stale snapshots and receive no gradient; the
/// gradient is with respect to the query coordinates only. An empty neighbor
/// list contributes zero loss and zero gradient (cold-start rule).
///
/// The log variant -log(mass) is InfoNCE-style and kept for comparison; with
/// no same-label neighbor the variant also contributes zero.
inline MclResult mcl_loss(const std::vector<double>& query, const ClassLabel& label,
                          const std::vector<Neighbor>& neighbors, bool log_variant = false) {
  MclResult out;
  out.grad_wrt_query.assign(query.size(), 0.0);
  if (neighbors.empty()) return out;
  for (double v : query) detail::require_finite(v, "mcl_loss query entry");

  std::vector<double> weights(neighbors.size());
  double total = 0.0;
  double same = 0.0;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    detail::require(neighbors[i].projection.size() == query.size(),
                    "mcl_loss: neighbor dim mismatch");
    const double w = std::exp(dot(query, neighbors[i].projection));
    weights[i] = w;
    total += w;
    if (neighbors[i].label == label.index()) same += w;
  }

  if (log_variant) {
    if (same == 0.0) return out;  // no positive in range; skip
    out.value = std::log(total) - std::log(same);
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
      const bool is_same = neighbors[i].label == label.index();
      const double coeff = weights[i] / total - (is_same ? weights[i] / same : 0.0);
      for (std::size_t j = 0; j < query.size(); ++j) {
        out.grad_wrt_query[j] += coeff * neighbors[i].projection[j];
      }
    }
    return out;
  }

  out.value = -same / total;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const bool is_same = neighbors[i].label == label.index();
    const double coeff = weights[i] * (same / (total * total) - (is_same ? 1.0 / total : 0.0));
    for (std::size_t j = 0; j < query.size(); ++j) {
      out.grad_wrt_query[j] += coeff * neighbors[i].projection[j];
    }
  }
  return out;
}

inline MclResult mcl_loss(const Projection& query, const ClassLabel& label,
                          const std::vector<Neighbor>& neighbors, bool log_variant = false) {
  return mcl_loss(query.values(), label, neighbors, log_variant);
}

}  // namespace pon
