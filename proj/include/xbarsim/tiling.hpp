#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <vector>

#include "xbarsim/error.hpp"

namespace xbarsim {

using Matrix = Eigen::MatrixXd;

/// Where one crossbar tile takes its entries from. Tile entry (a, b) holds
/// matrix entry (rows[a], cols[b]); index -1 marks padding. `rows`/`cols`
/// have at most n entries; a tile is always n x n.
struct TilePlacement {
  int row_block = 0;
  int col_block = 0;
  std::vector<int> rows;
  std::vector<int> cols;

  bool operator==(const TilePlacement&) const = default;
};

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

/// Consecutive [block*n, min((block+1)*n, extent)) index range.
inline std::vector<int> block_range(int block, int n, int extent) {
  std::vector<int> idx;
  for (int k = block * n; k < std::min((block + 1) * n, extent); ++k) idx.push_back(k);
  return idx;
}

/// Plain grid of ceil(rows/n) x ceil(cols/n) placements, row-block major.
inline std::vector<TilePlacement> grid_placements(int rows, int cols, int n) {
  std::vector<TilePlacement> out;
  for (int rb = 0; rb < ceil_div(rows, n); ++rb)
    for (int cb = 0; cb < ceil_div(cols, n); ++cb)
      out.push_back({rb, cb, block_range(rb, n, rows), block_range(cb, n, cols)});
  return out;
}

/// n x n tile gathered from `m`; padding is 0.
inline Matrix gather_tile(const Matrix& m, const TilePlacement& p, int n) {
  Matrix t = Matrix::Zero(n, n);
  for (std::size_t a = 0; a < p.rows.size(); ++a) {
    if (p.rows[a] < 0) continue;
    for (std::size_t b = 0; b < p.cols.size(); ++b) {
      if (p.cols[b] < 0) continue;
      t(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = m(p.rows[a], p.cols[b]);
    }
  }
  return t;
}

/// Writes the non-padding part of `tile` back into `m`.
inline void scatter_tile(Matrix& m, const TilePlacement& p, const Matrix& tile) {
  detail::require(tile.rows() >= static_cast<Eigen::Index>(p.rows.size()) &&
                      tile.cols() >= static_cast<Eigen::Index>(p.cols.size()),
                  "scatter_tile: tile smaller than its placement");
  for (std::size_t a = 0; a < p.rows.size(); ++a) {
    if (p.rows[a] < 0) continue;
    detail::require(p.rows[a] < m.rows(), "scatter_tile: row index out of range");
    for (std::size_t b = 0; b < p.cols.size(); ++b) {
      if (p.cols[b] < 0) continue;
      detail::require(p.cols[b] < m.cols(), "scatter_tile: column index out of range");
      m(p.rows[a], p.cols[b]) = tile(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  }
}

}  // namespace xbarsim
