#pragma once

// Weight matrix <-> crossbar tile conversion.
//
// Forward chain for one layer:
//   W --T (CF compaction)--> W_c --R (column rearrangement)--> working matrix
//     --partition--> n x n weight tiles --encode--> conductance tiles
// XCS/XRS compaction skips the dense intermediate: its packed placements index
// W directly. recombine() walks the chain backwards.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

#include "xbarsim/circuit.hpp"
#include "xbarsim/error.hpp"
#include "xbarsim/pruning.hpp"
#include "xbarsim/rng.hpp"
#include "xbarsim/tiling.hpp"

namespace xbarsim {

using WeightMatrix = Eigen::MatrixXd;
using SignMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>;

inline SignMatrix signs_of(const Matrix& w) {
  return w.unaryExpr([](double x) -> std::int8_t { return x > 0 ? 1 : (x < 0 ? -1 : 0); });
}

enum class RearrangeOrder { ascending, center_out };

struct MappingRecord {
  int tile_size = 0;
  int source_rows = 0;
  int source_cols = 0;
  int working_rows = 0;  // shape after compaction and rearrangement
  int working_cols = 0;
  double w_scale = 1.0;  // per-layer max |w|
  SignMatrix signs;      // source shape
  int row_pad = 0;
  int col_pad = 0;
  std::vector<TilePlacement> tile_placements;  // index the working matrix
  std::optional<std::vector<int>> column_permutation;  // working col k <- column perm[k]
  std::optional<CompactionDescriptor> pruning_compaction;

  /// Source coordinates of a working-matrix entry.
  std::pair<int, int> source_index(int r, int c) const {
    if (column_permutation) c = (*column_permutation)[static_cast<std::size_t>(c)];
    if (pruning_compaction && pruning_compaction->method == PruneMethod::cf)
      return {pruning_compaction->kept_rows[static_cast<std::size_t>(r)],
              pruning_compaction->kept_cols[static_cast<std::size_t>(c)]};
    return {r, c};
  }

  /// Sign sub-matrix of tile `t`; padding is 0.
  SignMatrix tile_signs(std::size_t t) const {
    const TilePlacement& p = tile_placements.at(t);
    SignMatrix s = SignMatrix::Zero(tile_size, tile_size);
    for (std::size_t a = 0; a < p.rows.size(); ++a)
      for (std::size_t b = 0; b < p.cols.size(); ++b) {
        if (p.rows[a] < 0 || p.cols[b] < 0) continue;
        const auto [r, c] = source_index(p.rows[a], p.cols[b]);
        s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = signs(r, c);
      }
    return s;
  }
};

struct EncodedTile {
  ConductanceTile tile;
  SignMatrix signs;
};

/// G = g_min + |W| / w_scale * (g_max - g_min), sign tracked digitally.
inline EncodedTile weights_to_conductances(const Matrix& w_tile, double w_scale,
                                           const CrossbarParams& params) {
  if (!(w_scale > 0.0) || !std::isfinite(w_scale))
    throw UsageError("weights_to_conductances: w_scale must be positive");
  detail::require(w_tile.allFinite(), "weights_to_conductances: non-finite weight");
  detail::require(w_tile.cwiseAbs().maxCoeff() <= w_scale * (1.0 + 1e-12),
                  "weights_to_conductances: |w| exceeds w_scale");
  const double span = params.g_max - params.g_min;
  EncodedTile out;
  out.tile.g = (params.g_min + (w_tile.cwiseAbs() / w_scale).array().min(1.0) * span).matrix();
  out.signs = signs_of(w_tile);
  return out;
}

/// Inverse affine map; entries with sign 0 come back as exactly 0.
inline Matrix conductances_to_weights(const Matrix& g_eff, const SignMatrix& signs, double w_scale,
                                      const CrossbarParams& params) {
  detail::require(g_eff.rows() == signs.rows() && g_eff.cols() == signs.cols(),
                  "conductances_to_weights: dimension mismatch");
  const double span = params.g_max - params.g_min;
  Matrix w(g_eff.rows(), g_eff.cols());
  for (Eigen::Index j = 0; j < g_eff.cols(); ++j)
    for (Eigen::Index i = 0; i < g_eff.rows(); ++i) {
      const int s = signs(i, j);
      w(i, j) = s == 0 ? 0.0 : s * ((g_eff(i, j) - params.g_min) / span * w_scale);
    }
  return w;
}

inline Matrix conductances_to_weights(const Matrix& g_eff, const MappingRecord& record,
                                      std::size_t tile_index, const CrossbarParams& params) {
  return conductances_to_weights(g_eff, record.tile_signs(tile_index), record.w_scale, params);
}

inline double layer_scale(const Matrix& w) {
  const double m = w.size() ? w.cwiseAbs().maxCoeff() : 0.0;
  return m > 0.0 ? m : 1.0;
}

/// Plain tiling of `w` into ceil(rows/n) x ceil(cols/n) zero-padded tiles.
inline std::pair<std::vector<Matrix>, MappingRecord> partition(const WeightMatrix& w, int n) {
  detail::require(n >= 1, "partition: tile size must be >= 1");
  if (w.size() == 0) throw UsageError("partition: empty matrix");
  MappingRecord rec;
  rec.tile_size = n;
  rec.source_rows = rec.working_rows = static_cast<int>(w.rows());
  rec.source_cols = rec.working_cols = static_cast<int>(w.cols());
  rec.w_scale = layer_scale(w);
  rec.signs = signs_of(w);
  rec.row_pad = ceil_div(rec.working_rows, n) * n - rec.working_rows;
  rec.col_pad = ceil_div(rec.working_cols, n) * n - rec.working_cols;
  rec.tile_placements = grid_placements(rec.working_rows, rec.working_cols, n);
  std::vector<Matrix> tiles;
  tiles.reserve(rec.tile_placements.size());
  for (const auto& p : rec.tile_placements) tiles.push_back(gather_tile(w, p, n));
  return {std::move(tiles), std::move(rec)};
}

/// Reassembles source-shaped weights: padding dropped, rearrangement undone,
/// pruned positions restored as zeros.
inline WeightMatrix recombine(const std::vector<Matrix>& tiles, const MappingRecord& rec) {
  if (tiles.size() != rec.tile_placements.size())
    throw UsageError("recombine: " + std::to_string(tiles.size()) + " tiles for " +
                     std::to_string(rec.tile_placements.size()) + " placements");
  for (const auto& t : tiles)
    detail::require(t.rows() == rec.tile_size && t.cols() == rec.tile_size,
                    "recombine: tile has wrong dimensions");
  Matrix working = Matrix::Zero(rec.working_rows, rec.working_cols);
  for (std::size_t k = 0; k < tiles.size(); ++k) scatter_tile(working, rec.tile_placements[k], tiles[k]);
  if (rec.column_permutation) {
    const auto& perm = *rec.column_permutation;
    detail::require(perm.size() == static_cast<std::size_t>(rec.working_cols),
                    "recombine: permutation length mismatch");
    Matrix un(working.rows(), working.cols());
    for (std::size_t k = 0; k < perm.size(); ++k) un.col(perm[k]) = working.col(static_cast<Eigen::Index>(k));
    working = std::move(un);
  }
  if (rec.pruning_compaction && rec.pruning_compaction->method == PruneMethod::cf)
    return expand(working, *rec.pruning_compaction);
  return working;
}

/// sqrt(mean * stddev) of the absolute values (population stddev).
inline double column_metric(const Eigen::Ref<const Eigen::VectorXd>& column) {
  detail::require(column.size() > 0, "column_metric: empty column");
  const Eigen::ArrayXd a = column.cwiseAbs().array();
  const double mu = a.mean();
  const double var = (a - mu).square().mean();
  return std::sqrt(mu * std::sqrt(var));
}

struct Rearrangement {
  WeightMatrix w;
  std::vector<int> permutation;  // w.col(k) == source.col(permutation[k])
};

/// Sorts columns by ascending column_metric (stable). With center_out the
/// smallest metrics go to the middle columns and the largest to the edges.
inline Rearrangement rearrange_columns(const WeightMatrix& w,
                                       RearrangeOrder order = RearrangeOrder::ascending) {
  detail::require(w.cols() >= 1, "rearrange_columns: no columns");
  const auto cols = static_cast<std::size_t>(w.cols());
  std::vector<double> metric(cols);
  for (std::size_t c = 0; c < cols; ++c) metric[c] = column_metric(w.col(static_cast<Eigen::Index>(c)));
  std::vector<int> sorted(cols);
  std::iota(sorted.begin(), sorted.end(), 0);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [&](int a, int b) { return metric[static_cast<std::size_t>(a)] < metric[static_cast<std::size_t>(b)]; });
  Rearrangement out;
  if (order == RearrangeOrder::ascending) {
    out.permutation = sorted;
  } else {
    std::vector<int> positions(cols);
    std::iota(positions.begin(), positions.end(), 0);
    const double mid = (static_cast<double>(cols) - 1.0) / 2.0;
    std::stable_sort(positions.begin(), positions.end(), [&](int a, int b) {
      return std::fabs(a - mid) < std::fabs(b - mid);
    });
    out.permutation.assign(cols, 0);
    for (std::size_t k = 0; k < cols; ++k)
      out.permutation[static_cast<std::size_t>(positions[k])] = sorted[k];
  }
  out.w.resize(w.rows(), w.cols());
  for (std::size_t k = 0; k < cols; ++k)
    out.w.col(static_cast<Eigen::Index>(k)) = w.col(out.permutation[k]);
  return out;
}

/// Forward half of the chain without any circuit simulation: the working
/// matrix's tiles plus the record that inverts them.
inline std::pair<std::vector<Matrix>, MappingRecord> plan_mapping(
    const WeightMatrix& w, int n, bool rearrange, RearrangeOrder order,
    const std::optional<CompactionDescriptor>& compaction,
    std::optional<double> w_scale = std::nullopt) {
  detail::require(n >= 1, "tile size must be >= 1");
  if (w_scale)
    detail::require(*w_scale > 0 && std::isfinite(*w_scale), "mapping: w_scale must be positive");
  const double scale = w_scale ? *w_scale : layer_scale(w);
  if (w.size() == 0) throw UsageError("mapping: empty matrix");
  detail::require(w.allFinite(), "mapping: non-finite weight");
  if (compaction)
    detail::require(compaction->source_rows == w.rows() && compaction->source_cols == w.cols(),
                    "mapping: compaction descriptor does not match the layer shape");

  if (compaction && compaction->method != PruneMethod::cf) {
    if (rearrange) throw UsageError("column rearrangement is not defined for segment-packed (XCS/XRS) layers");
    detail::require(compaction->segment == n,
                    "mapping: segment packing length differs from the tile size");
    MappingRecord rec;
    rec.tile_size = n;
    rec.source_rows = rec.working_rows = static_cast<int>(w.rows());
    rec.source_cols = rec.working_cols = static_cast<int>(w.cols());
    rec.w_scale = scale;
    rec.signs = signs_of(w);
    rec.tile_placements = compaction->packed;
    rec.pruning_compaction = compaction;
    std::vector<Matrix> tiles;
    for (const auto& p : rec.tile_placements) tiles.push_back(gather_tile(w, p, n));
    return {std::move(tiles), std::move(rec)};
  }

  Matrix working = compaction ? compact(w, *compaction) : w;
  std::optional<std::vector<int>> perm;
  if (rearrange && working.cols() > 0) {
    auto r = rearrange_columns(working, order);
    working = std::move(r.w);
    perm = std::move(r.permutation);
  }
  MappingRecord rec;
  rec.tile_size = n;
  rec.source_rows = static_cast<int>(w.rows());
  rec.source_cols = static_cast<int>(w.cols());
  rec.working_rows = static_cast<int>(working.rows());
  rec.working_cols = static_cast<int>(working.cols());
  rec.w_scale = scale;
  rec.signs = signs_of(w);
  rec.column_permutation = std::move(perm);
  rec.pruning_compaction = compaction;
  std::vector<Matrix> tiles;
  if (working.size() > 0) {
    rec.row_pad = ceil_div(rec.working_rows, n) * n - rec.working_rows;
    rec.col_pad = ceil_div(rec.working_cols, n) * n - rec.working_cols;
    rec.tile_placements = grid_placements(rec.working_rows, rec.working_cols, n);
    for (const auto& p : rec.tile_placements) tiles.push_back(gather_tile(working, p, n));
  }
  return {std::move(tiles), std::move(rec)};
}

struct LayerMapOptions {
  bool rearrange = false;
  RearrangeOrder order = RearrangeOrder::ascending;
  std::optional<CompactionDescriptor> compaction;
  std::uint64_t master_seed = 0;
  int layer_index = 0;
  int threads = 1;
  std::optional<double> w_scale;  // encoding scale; defaults to max |w| of the layer
};

struct LayerNf {
  std::vector<NfReport> tiles;
  std::optional<double> mean_tile_nf;    // mean of per-tile means (reported)
  std::optional<double> mean_column_nf;  // pooled over every included column
};

struct LayerSimulation {
  WeightMatrix w_nonideal;
  MappingRecord record;
  LayerNf nf;
};

inline LayerNf aggregate_nf(std::vector<NfReport> tiles) {
  LayerNf out;
  double tile_sum = 0.0, col_sum = 0.0;
  int tile_n = 0, col_n = 0;
  for (const auto& r : tiles) {
    if (!r.mean_nf) continue;
    tile_sum += *r.mean_nf;
    ++tile_n;
    for (double v : r.per_column_nf)
      if (!std::isnan(v)) {
        col_sum += v;
        ++col_n;
      }
  }
  if (tile_n) out.mean_tile_nf = tile_sum / tile_n;
  if (col_n) out.mean_column_nf = col_sum / col_n;
  out.tiles = std::move(tiles);
  return out;
}

/// Runs `job(k)` for k in [0, count) on up to `threads` workers.
template <class Job>
void parallel_for(std::size_t count, int threads, Job&& job) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t k = 0; k < count; ++k) job(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(workers, count); ++t)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count && !failed; k = next++) {
        try {
          job(k);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Full non-ideal mapping of one layer. Each tile's variation stream is
/// derived from (master_seed, layer_index, row_block, col_block), so the
/// result does not depend on the thread count.
inline LayerSimulation simulate_layer(const WeightMatrix& w, const CrossbarParams& params,
                                      const LayerMapOptions& opt = {}) {
  params.validate();
  detail::require(params.n_rows == params.n_cols, "simulate_layer: tiles must be square");
  const int n = params.n_rows;
  auto [tiles, rec] = plan_mapping(w, n, opt.rearrange, opt.order, opt.compaction, opt.w_scale);

  std::vector<Matrix> out_tiles(tiles.size());
  std::vector<NfReport> reports(tiles.size());
  const Eigen::VectorXd probe = Eigen::VectorXd::Constant(n, params.v_read);
  parallel_for(tiles.size(), opt.threads, [&](std::size_t k) {
    const auto& pl = rec.tile_placements[k];
    const EncodedTile enc = weights_to_conductances(tiles[k], rec.w_scale, params);
    Rng rng(derive_seed(opt.master_seed, {static_cast<std::uint64_t>(opt.layer_index),
                                          static_cast<std::uint64_t>(pl.row_block),
                                          static_cast<std::uint64_t>(pl.col_block)}));
    const ConductanceTile varied = apply_device_variation(enc.tile, params.sigma_dev, rng);
    const Matrix g_eff = extract_effective_conductance(varied, params);
    out_tiles[k] = conductances_to_weights(g_eff, enc.signs, rec.w_scale, params);
    reports[k] = tile_nf(enc.tile, g_eff, probe);
  });

  LayerSimulation sim;
  sim.w_nonideal = recombine(out_tiles, rec);
  sim.record = std::move(rec);
  sim.nf = aggregate_nf(std::move(reports));
  return sim;
}

}  // namespace xbarsim
