#pragma once

// Structured sparsity at initialization: channel/filter (CF), crossbar-column
// (XCS) and crossbar-row (XRS) masks, the compaction transforms that remove
// pruned structure before tiling, and the crossbar-compression-rate metric.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xbarsim/error.hpp"
#include "xbarsim/model_spec.hpp"
#include "xbarsim/rng.hpp"
#include "xbarsim/tiling.hpp"

namespace xbarsim {

enum class PruneMethod { none, cf, xcs, xrs };

inline const char* to_string(PruneMethod m) {
  switch (m) {
    case PruneMethod::none: return "none";
    case PruneMethod::cf: return "cf";
    case PruneMethod::xcs: return "xcs";
    case PruneMethod::xrs: return "xrs";
  }
  return "?";
}

inline PruneMethod parse_prune_method(const std::string& s) {
  if (s == "none" || s == "unpruned") return PruneMethod::none;
  if (s == "cf") return PruneMethod::cf;
  if (s == "xcs") return PruneMethod::xcs;
  if (s == "xrs") return PruneMethod::xrs;
  throw UsageError("unknown pruning method '" + s + "' (expected none|cf|xcs|xrs)");
}

struct SparsityPattern {
  PruneMethod method = PruneMethod::none;
  double s = 0.0;
  std::uint64_t seed = 0;
  int tile_size = 0;                        // segment length for XCS/XRS
  std::vector<Matrix> masks;                // 0/1, aligned with each layer's WeightMatrix
  std::vector<std::vector<int>> pruned;     // pruned units per layer (filters, or segment ids)

  bool empty() const { return method == PruneMethod::none; }
};

/// floor(s * units), robust to representation error in s.
inline int pruned_count(double s, int units) {
  return static_cast<int>(std::floor(s * units + 1e-9));
}

namespace detail {

inline void check_ratio(double s) {
  require(std::isfinite(s) && s >= 0.0 && s < 1.0, "sparsity ratio s must lie in [0, 1)");
}

inline std::vector<Matrix> ones_masks(const std::vector<TrainableShape>& shapes) {
  std::vector<Matrix> m;
  for (const auto& sh : shapes) m.push_back(Matrix::Ones(sh.rows, sh.cols));
  return m;
}

}  // namespace detail

/// Channel/filter pruning. floor(s * out_channels) filters of every layer but
/// the classifier are chosen uniformly at random; their columns are zeroed and
/// so are the unrolled rows of the next layer that read those channels.
inline SparsityPattern gen_mask_cf(const ModelSpec& spec, double s, std::uint64_t seed) {
  detail::check_ratio(s);
  const auto shapes = spec.trainable_shapes();
  SparsityPattern p;
  p.method = PruneMethod::cf;
  p.s = s;
  p.seed = seed;
  p.masks = detail::ones_masks(shapes);
  p.pruned.resize(shapes.size());
  for (std::size_t l = 0; l + 1 < shapes.size(); ++l) {
    const int units = shapes[l].cols;
    const int k = pruned_count(s, units);
    if (k >= units)
      throw UsageError("cf pruning would remove every filter of " + shapes[l].name);
    const auto& next = shapes[l + 1];
    detail::require(next.in_units == units, "cf pruning: " + next.name +
                                                " does not consume the outputs of " +
                                                shapes[l].name);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(l)}));
    p.pruned[l] = rng.choose(units, k);
    for (int u : p.pruned[l]) {
      p.masks[l].col(u).setZero();
      p.masks[l + 1].middleRows(u * next.rows_per_in_unit, next.rows_per_in_unit).setZero();
    }
  }
  return p;
}

/// Crossbar-column sparsity: the (ceil(rows/n) x cols) grid of length-n
/// column segments, aligned to index 0, loses floor(s * count) segments.
inline SparsityPattern gen_mask_xcs(const ModelSpec& spec, double s, int n, std::uint64_t seed) {
  detail::check_ratio(s);
  detail::require(n >= 1, "segment length n must be >= 1");
  const auto shapes = spec.trainable_shapes();
  SparsityPattern p;
  p.method = PruneMethod::xcs;
  p.s = s;
  p.seed = seed;
  p.tile_size = n;
  p.masks = detail::ones_masks(shapes);
  p.pruned.resize(shapes.size());
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const int blocks = ceil_div(shapes[l].rows, n);
    const int count = blocks * shapes[l].cols;
    const int k = pruned_count(s, count);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(l)}));
    p.pruned[l] = rng.choose(count, k);
    for (int seg : p.pruned[l]) {
      const int rb = seg / shapes[l].cols;
      const int c = seg % shapes[l].cols;
      for (int r : block_range(rb, n, shapes[l].rows)) p.masks[l](r, c) = 0.0;
    }
  }
  return p;
}

/// Crossbar-row sparsity: the (rows x ceil(cols/n)) grid of length-n row
/// segments loses floor(s * count) segments.
inline SparsityPattern gen_mask_xrs(const ModelSpec& spec, double s, int n, std::uint64_t seed) {
  detail::check_ratio(s);
  detail::require(n >= 1, "segment length n must be >= 1");
  const auto shapes = spec.trainable_shapes();
  SparsityPattern p;
  p.method = PruneMethod::xrs;
  p.s = s;
  p.seed = seed;
  p.tile_size = n;
  p.masks = detail::ones_masks(shapes);
  p.pruned.resize(shapes.size());
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const int blocks = ceil_div(shapes[l].cols, n);
    const int count = shapes[l].rows * blocks;
    const int k = pruned_count(s, count);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(l)}));
    p.pruned[l] = rng.choose(count, k);
    for (int seg : p.pruned[l]) {
      const int r = seg / blocks;
      const int cb = seg % blocks;
      for (int c : block_range(cb, n, shapes[l].cols)) p.masks[l](r, c) = 0.0;
    }
  }
  return p;
}

inline SparsityPattern gen_mask(const ModelSpec& spec, PruneMethod method, double s, int n,
                                std::uint64_t seed) {
  switch (method) {
    case PruneMethod::cf: return gen_mask_cf(spec, s, seed);
    case PruneMethod::xcs: return gen_mask_xcs(spec, s, n, seed);
    case PruneMethod::xrs: return gen_mask_xrs(spec, s, n, seed);
    case PruneMethod::none: break;
  }
  SparsityPattern p;
  p.masks = detail::ones_masks(spec.trainable_shapes());
  p.pruned.resize(p.masks.size());
  return p;
}

inline Matrix apply_mask(const Matrix& w, const Matrix& mask) {
  detail::require(w.rows() == mask.rows() && w.cols() == mask.cols(),
                  "apply_mask: shape mismatch");
  return w.cwiseProduct(mask);
}

/// Everything needed to undo a compaction. For CF the kept rows and columns
/// of the source matrix; for XCS/XRS the packed tile placements, which index
/// the source matrix directly.
struct CompactionDescriptor {
  PruneMethod method = PruneMethod::none;
  int source_rows = 0;
  int source_cols = 0;
  std::vector<int> kept_rows;
  std::vector<int> kept_cols;
  int segment = 0;
  std::vector<TilePlacement> packed;
};

/// CF descriptor from a mask: rows and columns that are not entirely zero.
inline CompactionDescriptor cf_descriptor(const Matrix& mask) {
  CompactionDescriptor d;
  d.method = PruneMethod::cf;
  d.source_rows = static_cast<int>(mask.rows());
  d.source_cols = static_cast<int>(mask.cols());
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    if ((mask.row(r).array() != 0.0).any()) d.kept_rows.push_back(static_cast<int>(r));
  for (Eigen::Index c = 0; c < mask.cols(); ++c)
    if ((mask.col(c).array() != 0.0).any()) d.kept_cols.push_back(static_cast<int>(c));
  return d;
}

inline Matrix compact(const Matrix& w, const CompactionDescriptor& d) {
  detail::require(d.method == PruneMethod::cf, "compact: only CF compaction yields a dense matrix");
  detail::require(w.rows() == d.source_rows && w.cols() == d.source_cols,
                  "compact: matrix shape does not match descriptor");
  Matrix out(static_cast<Eigen::Index>(d.kept_rows.size()),
             static_cast<Eigen::Index>(d.kept_cols.size()));
  for (std::size_t a = 0; a < d.kept_rows.size(); ++a)
    for (std::size_t b = 0; b < d.kept_cols.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = w(d.kept_rows[a], d.kept_cols[b]);
  return out;
}

/// Inverse of compact(): zeros reinserted at removed rows and columns.
inline Matrix expand(const Matrix& wc, const CompactionDescriptor& d) {
  detail::require(d.method == PruneMethod::cf, "expand: only CF compaction yields a dense matrix");
  detail::require(wc.rows() == static_cast<Eigen::Index>(d.kept_rows.size()) &&
                      wc.cols() == static_cast<Eigen::Index>(d.kept_cols.size()),
                  "expand: compacted shape does not match descriptor");
  Matrix out = Matrix::Zero(d.source_rows, d.source_cols);
  for (std::size_t a = 0; a < d.kept_rows.size(); ++a)
    for (std::size_t b = 0; b < d.kept_cols.size(); ++b)
      out(d.kept_rows[a], d.kept_cols[b]) = wc(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  return out;
}

struct CfCompaction {
  Matrix w_layer;
  Matrix w_next;
  CompactionDescriptor layer;
  CompactionDescriptor next;
};

/// Removes the pruned columns of layer `l` and the matching unrolled rows of
/// layer `l + 1`. Throws if the two masks disagree about which filters are gone.
inline CfCompaction compact_cf(const Matrix& w_l, const Matrix& w_next, const SparsityPattern& p,
                               std::size_t l) {
  detail::require(p.method == PruneMethod::cf, "compact_cf: pattern is not CF");
  detail::require(l + 1 < p.masks.size(), "compact_cf: layer has no successor");
  const Matrix& m_l = p.masks[l];
  const Matrix& m_n = p.masks[l + 1];
  detail::require(w_l.rows() == m_l.rows() && w_l.cols() == m_l.cols() &&
                      w_next.rows() == m_n.rows() && w_next.cols() == m_n.cols(),
                  "compact_cf: weights do not match masks");
  detail::require(m_n.rows() % m_l.cols() == 0, "compact_cf: inconsistent masks (row grouping)");
  const auto rpu = m_n.rows() / m_l.cols();
  for (Eigen::Index u = 0; u < m_l.cols(); ++u) {
    const bool col_dead = (m_l.col(u).array() == 0.0).all();
    const bool rows_dead = (m_n.middleRows(u * rpu, rpu).array() == 0.0).all();
    if (col_dead != rows_dead)
      throw UsageError("compact_cf: inconsistent masks at unit " + std::to_string(u));
  }
  CfCompaction out;
  out.layer = cf_descriptor(m_l);
  out.next = cf_descriptor(m_n);
  out.w_layer = compact(w_l, out.layer);
  out.w_next = compact(w_next, out.next);
  return out;
}

/// XCS packing: per row block, surviving length-n column segments are packed
/// left to right into tiles of n columns.
inline CompactionDescriptor compact_xcs(const Matrix& mask, int n) {
  detail::require(n >= 1, "compact_xcs: n must be >= 1");
  CompactionDescriptor d;
  d.method = PruneMethod::xcs;
  d.source_rows = static_cast<int>(mask.rows());
  d.source_cols = static_cast<int>(mask.cols());
  d.segment = n;
  for (int rb = 0; rb < ceil_div(d.source_rows, n); ++rb) {
    const auto rows = block_range(rb, n, d.source_rows);
    std::vector<int> survivors;
    for (int c = 0; c < d.source_cols; ++c) {
      bool alive = false;
      for (int r : rows) alive = alive || mask(r, c) != 0.0;
      if (alive) survivors.push_back(c);
    }
    for (int t = 0; t * n < static_cast<int>(survivors.size()); ++t) {
      TilePlacement pl{rb, t, rows, {}};
      for (int k = t * n; k < std::min<int>((t + 1) * n, static_cast<int>(survivors.size())); ++k)
        pl.cols.push_back(survivors[static_cast<std::size_t>(k)]);
      d.packed.push_back(std::move(pl));
    }
  }
  return d;
}

/// XRS packing: per column block, surviving length-n row segments are packed
/// top to bottom into tiles of n rows.
inline CompactionDescriptor compact_xrs(const Matrix& mask, int n) {
  detail::require(n >= 1, "compact_xrs: n must be >= 1");
  CompactionDescriptor d;
  d.method = PruneMethod::xrs;
  d.source_rows = static_cast<int>(mask.rows());
  d.source_cols = static_cast<int>(mask.cols());
  d.segment = n;
  for (int cb = 0; cb < ceil_div(d.source_cols, n); ++cb) {
    const auto cols = block_range(cb, n, d.source_cols);
    std::vector<int> survivors;
    for (int r = 0; r < d.source_rows; ++r) {
      bool alive = false;
      for (int c : cols) alive = alive || mask(r, c) != 0.0;
      if (alive) survivors.push_back(r);
    }
    for (int t = 0; t * n < static_cast<int>(survivors.size()); ++t) {
      TilePlacement pl{t, cb, {}, cols};
      for (int k = t * n; k < std::min<int>((t + 1) * n, static_cast<int>(survivors.size())); ++k)
        pl.rows.push_back(survivors[static_cast<std::size_t>(k)]);
      d.packed.push_back(std::move(pl));
    }
  }
  return d;
}

/// Descriptor for layer `l` of a pattern, or nothing for unpruned models.
inline std::optional<CompactionDescriptor> layer_compaction(const SparsityPattern& p,
                                                            std::size_t l, int n) {
  switch (p.method) {
    case PruneMethod::cf: return cf_descriptor(p.masks[l]);
    case PruneMethod::xcs: return compact_xcs(p.masks[l], n);
    case PruneMethod::xrs: return compact_xrs(p.masks[l], n);
    case PruneMethod::none: break;
  }
  return std::nullopt;
}

inline int tiles_after_compaction(const std::optional<CompactionDescriptor>& d, int rows, int cols,
                                  int n) {
  if (!d) return ceil_div(rows, n) * ceil_div(cols, n);
  if (d->method == PruneMethod::cf)
    return ceil_div(static_cast<int>(d->kept_rows.size()), n) *
           ceil_div(static_cast<int>(d->kept_cols.size()), n);
  return static_cast<int>(d->packed.size());
}

/// Tiles needed for the unpruned model divided by tiles after compaction,
/// both with n x n tiles and summed over layers.
inline double compression_rate(const ModelSpec& spec, const SparsityPattern& p, int n) {
  detail::require(n >= 1, "compression_rate: n must be >= 1");
  const auto shapes = spec.trainable_shapes();
  if (p.method == PruneMethod::none) return 1.0;
  detail::require(p.masks.size() == shapes.size(), "compression_rate: pattern does not match model");
  long dense = 0, packed = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    dense += ceil_div(shapes[l].rows, n) * ceil_div(shapes[l].cols, n);
    packed += tiles_after_compaction(layer_compaction(p, l, n), shapes[l].rows, shapes[l].cols, n);
  }
  detail::require(packed > 0, "compression_rate: every weight pruned");
  return static_cast<double>(dense) / static_cast<double>(packed);
}

}  // namespace xbarsim
