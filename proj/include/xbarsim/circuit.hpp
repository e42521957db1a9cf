#pragma once

// Resistive-network model of a single crossbar tile.
//
// Topology (one wire segment per cell):
//   row node r(i,j) and column node c(i,j) per cell, device G_ij between them;
//   r_wire_row between r(i,j) and r(i,j+1); r_wire_col between c(i,j) and
//   c(i+1,j); source V_i through r_driver into r(i,0); c(n_rows-1,j) through
//   r_sense to ground. Column current I_j is the current through that column's
//   sense resistor.
//
// Zero-valued resistances are treated as shorts: the nodes they join are
// merged before the nodal system is assembled, so the ideal limit (all
// parasitics zero) needs no special casing.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "xbarsim/error.hpp"
#include "xbarsim/rng.hpp"

namespace xbarsim {

struct CrossbarParams {
  int n_rows = 64;
  int n_cols = 64;
  double r_driver = 400.0;  // ohms
  double r_wire_row = 2.5;  // ohms per cell segment
  double r_wire_col = 2.5;  // ohms per cell segment
  double r_sense = 400.0;   // ohms
  double g_min = 5e-6;     // siemens (R_max = 200 kOhm)
  double g_max = 5e-5;     // siemens (R_min = 20 kOhm)
  double sigma_dev = 0.1;  // std. dev. of multiplicative device variation
  double v_read = 1.0;     // volts

  double on_off_ratio() const { return g_max / g_min; }

  bool parasitics_free() const {
    return r_driver == 0.0 && r_wire_row == 0.0 && r_wire_col == 0.0 && r_sense == 0.0;
  }

  CrossbarParams with_size(int rows, int cols) const {
    CrossbarParams p = *this;
    p.n_rows = rows;
    p.n_cols = cols;
    return p;
  }

  CrossbarParams with_size(int n) const { return with_size(n, n); }

  /// Same device range, no parasitics and no variation.
  CrossbarParams ideal() const {
    CrossbarParams p = *this;
    p.r_driver = p.r_wire_row = p.r_wire_col = p.r_sense = 0.0;
    p.sigma_dev = 0.0;
    return p;
  }

  void validate() const {
    auto finite = [](double x) { return std::isfinite(x); };
    detail::require(n_rows >= 1 && n_rows <= 1024 && n_cols >= 1 && n_cols <= 1024,
                    "crossbar dimensions must lie in [1, 1024]");
    detail::require(finite(r_driver) && finite(r_wire_row) && finite(r_wire_col) &&
                        finite(r_sense) && finite(g_min) && finite(g_max) &&
                        finite(sigma_dev) && finite(v_read),
                    "crossbar parameters must be finite");
    detail::require(r_driver >= 0 && r_wire_row >= 0 && r_wire_col >= 0 && r_sense >= 0,
                    "parasitic resistances must be non-negative");
    detail::require(g_min > 0 && g_max > g_min, "require g_max > g_min > 0");
    detail::require(sigma_dev >= 0 && sigma_dev < 1.0 / 3.0,
                    "sigma_dev must lie in [0, 1/3)");
    detail::require(v_read > 0, "v_read must be positive");
  }
};

/// Programmed synapse conductances of one tile, in siemens.
struct ConductanceTile {
  Eigen::MatrixXd g;

  int rows() const { return static_cast<int>(g.rows()); }
  int cols() const { return static_cast<int>(g.cols()); }
};

/// I_j = sum_i G_ij V_i.
inline Eigen::VectorXd ideal_mac(const ConductanceTile& tile, const Eigen::VectorXd& v) {
  detail::require(v.size() == tile.g.rows(), "ideal_mac: input length != tile rows");
  detail::require(v.allFinite(), "ideal_mac: non-finite input");
  return tile.g.transpose() * v;
}

struct CrossbarSolution {
  Eigen::VectorXd currents;
  // Voltages of r(i,j) at [i*C + j] and c(i,j) at [R*C + i*C + j].
  std::vector<long double> node_voltages;
};

/// Assembled and factorized nodal system for one tile. The factorization is
/// reused by every solve, so extracting the effective conductance costs one
/// factorization plus n_rows right-hand sides.
class CrossbarSolver {
 public:
  CrossbarSolver(const ConductanceTile& tile, const CrossbarParams& params)
      : g_(tile.g), params_(params) {
    params_.validate();
    rows_ = tile.rows();
    cols_ = tile.cols();
    detail::require(rows_ >= 1 && cols_ >= 1, "solve_crossbar: empty tile");
    detail::require(rows_ == params.n_rows && cols_ == params.n_cols,
                    "solve_crossbar: tile dimensions do not match params");
    detail::require(g_.allFinite() && (g_.array() >= 0.0).all(),
                    "solve_crossbar: conductances must be finite and non-negative");
    build();
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int unknowns() const { return n_unknown_; }

  CrossbarSolution solve(const Eigen::VectorXd& v) const {
    detail::require(v.size() == rows_, "solve_crossbar: input length != tile rows");
    detail::require(v.allFinite(), "solve_crossbar: non-finite input");
    const LdMatrix x = solve_unknowns(v);
    CrossbarSolution out;
    out.currents = currents_from(x, v, 0);
    out.node_voltages.resize(static_cast<std::size_t>(2 * rows_ * cols_));
    for (int n = 0; n < 2 * rows_ * cols_; ++n)
      out.node_voltages[static_cast<std::size_t>(n)] = node_voltage(n, x, v, 0);
    return out;
  }

  /// Column currents for each input vector (columns of `inputs`); result is
  /// n_cols x inputs.cols().
  Eigen::MatrixXd solve_currents(const Eigen::MatrixXd& inputs) const {
    detail::require(inputs.rows() == rows_, "solve_crossbar: input length != tile rows");
    detail::require(inputs.allFinite(), "solve_crossbar: non-finite input");
    const LdMatrix x = solve_unknowns(inputs);
    Eigen::MatrixXd out(cols_, inputs.cols());
    for (Eigen::Index k = 0; k < inputs.cols(); ++k)
      out.col(k) = currents_from(x, inputs.col(k), static_cast<int>(k));
    return out;
  }

  /// G'_ij = I_j(V = v_read e_i) / v_read.
  Eigen::MatrixXd effective_conductance() const {
    const Eigen::MatrixXd basis =
        params_.v_read * Eigen::MatrixXd::Identity(rows_, rows_);
    return solve_currents(basis).transpose() / params_.v_read;
  }

  /// Per-node KCL residual |sum of branch currents| divided by the sum of
  /// absolute branch currents, for every node that is not held at a fixed
  /// potential. Nodes joined by shorts are checked as one merged node.
  std::vector<double> kcl_relative_residuals(const CrossbarSolution& sol,
                                             const Eigen::VectorXd& v) const {
    auto volt = [&](int node) -> long double {
      if (node < 2 * rows_ * cols_) return sol.node_voltages[static_cast<std::size_t>(node)];
      if (node == ground_node()) return 0.0L;
      return static_cast<long double>(v(node - 2 * rows_ * cols_));
    };
    std::vector<long double> net(static_cast<std::size_t>(n_unknown_), 0.0L);
    std::vector<long double> mag(static_cast<std::size_t>(n_unknown_), 0.0L);
    for (const auto& e : edges_) {
      const int ca = class_of_[static_cast<std::size_t>(e.a)];
      const int cb = class_of_[static_cast<std::size_t>(e.b)];
      if (ca == cb) continue;
      const long double i_ab = static_cast<long double>(e.g) * (volt(e.a) - volt(e.b));
      const int ua = unknown_of_class_[static_cast<std::size_t>(ca)];
      const int ub = unknown_of_class_[static_cast<std::size_t>(cb)];
      if (ua >= 0) {
        net[static_cast<std::size_t>(ua)] += i_ab;
        mag[static_cast<std::size_t>(ua)] += std::fabs(i_ab);
      }
      if (ub >= 0) {
        net[static_cast<std::size_t>(ub)] -= i_ab;
        mag[static_cast<std::size_t>(ub)] += std::fabs(i_ab);
      }
    }
    std::vector<double> out(static_cast<std::size_t>(n_unknown_));
    for (std::size_t u = 0; u < out.size(); ++u)
      out[u] = mag[u] > 0 ? static_cast<double>(std::fabs(net[u]) / mag[u]) : 0.0;
    return out;
  }

 private:
  using LdMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

  struct Edge {
    int a;
    int b;
    double g;
  };

  int row_node(int i, int j) const { return i * cols_ + j; }
  int col_node(int i, int j) const { return rows_ * cols_ + i * cols_ + j; }
  int source_node(int i) const { return 2 * rows_ * cols_ + i; }
  int ground_node() const { return 2 * rows_ * cols_ + rows_; }

  static int find(std::vector<int>& parent, int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }

  void build() {
    const int n_nodes = 2 * rows_ * cols_ + rows_ + 1;
    std::vector<int> parent(static_cast<std::size_t>(n_nodes));
    std::iota(parent.begin(), parent.end(), 0);
    auto unite = [&](int a, int b) {
      a = find(parent, a);
      b = find(parent, b);
      if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    };
    auto add = [&](int a, int b, double r) {
      if (r == 0.0)
        unite(a, b);
      else
        edges_.push_back({a, b, 1.0 / r});
    };

    for (int i = 0; i < rows_; ++i) {
      add(source_node(i), row_node(i, 0), params_.r_driver);
      for (int j = 0; j < cols_; ++j) {
        if (g_(i, j) > 0.0) edges_.push_back({row_node(i, j), col_node(i, j), g_(i, j)});
        if (j + 1 < cols_) add(row_node(i, j), row_node(i, j + 1), params_.r_wire_row);
        if (i + 1 < rows_) add(col_node(i, j), col_node(i + 1, j), params_.r_wire_col);
      }
    }
    for (int j = 0; j < cols_; ++j) add(col_node(rows_ - 1, j), ground_node(), params_.r_sense);

    // Classify merged nodes: fixed at a source, fixed at ground, or unknown.
    class_of_.resize(static_cast<std::size_t>(n_nodes));
    std::vector<int> root_to_class(static_cast<std::size_t>(n_nodes), -1);
    int n_classes = 0;
    for (int n = 0; n < n_nodes; ++n) {
      const int r = find(parent, n);
      if (root_to_class[static_cast<std::size_t>(r)] < 0)
        root_to_class[static_cast<std::size_t>(r)] = n_classes++;
      class_of_[static_cast<std::size_t>(n)] = root_to_class[static_cast<std::size_t>(r)];
    }
    fixed_source_.assign(static_cast<std::size_t>(n_classes), -1);
    std::vector<char> fixed(static_cast<std::size_t>(n_classes), 0);
    auto pin = [&](int node, int source) {
      const auto c = static_cast<std::size_t>(class_of_[static_cast<std::size_t>(node)]);
      if (fixed[c] && fixed_source_[c] != source)
        throw NumericError("solve_crossbar: a source is shorted to another potential");
      fixed[c] = 1;
      fixed_source_[c] = source;
    };
    for (int i = 0; i < rows_; ++i) pin(source_node(i), i);
    pin(ground_node(), -1);

    unknown_of_class_.assign(static_cast<std::size_t>(n_classes), -1);
    n_unknown_ = 0;
    for (int c = 0; c < n_classes; ++c)
      if (!fixed[static_cast<std::size_t>(c)])
        unknown_of_class_[static_cast<std::size_t>(c)] = n_unknown_++;

    // Every unknown must reach a fixed potential through conductive edges.
    {
      std::vector<std::vector<int>> adj(static_cast<std::size_t>(n_classes));
      for (const auto& e : edges_) {
        const int ca = class_of_[static_cast<std::size_t>(e.a)];
        const int cb = class_of_[static_cast<std::size_t>(e.b)];
        if (ca == cb) continue;
        adj[static_cast<std::size_t>(ca)].push_back(cb);
        adj[static_cast<std::size_t>(cb)].push_back(ca);
      }
      std::vector<char> seen(fixed);
      std::vector<int> stack;
      for (int c = 0; c < n_classes; ++c)
        if (fixed[static_cast<std::size_t>(c)]) stack.push_back(c);
      while (!stack.empty()) {
        const int c = stack.back();
        stack.pop_back();
        for (int d : adj[static_cast<std::size_t>(c)])
          if (!seen[static_cast<std::size_t>(d)]) {
            seen[static_cast<std::size_t>(d)] = 1;
            stack.push_back(d);
          }
      }
      for (int c = 0; c < n_classes; ++c)
        if (!seen[static_cast<std::size_t>(c)])
          throw NumericError("solve_crossbar: singular system (floating node)");
    }

    std::vector<Eigen::Triplet<double>> a_trip;
    std::vector<Eigen::Triplet<double>> p_trip;
    a_trip.reserve(edges_.size() * 4);
    for (const auto& e : edges_) {
      const int ca = class_of_[static_cast<std::size_t>(e.a)];
      const int cb = class_of_[static_cast<std::size_t>(e.b)];
      if (ca == cb) continue;
      const int ua = unknown_of_class_[static_cast<std::size_t>(ca)];
      const int ub = unknown_of_class_[static_cast<std::size_t>(cb)];
      if (ua >= 0) a_trip.emplace_back(ua, ua, e.g);
      if (ub >= 0) a_trip.emplace_back(ub, ub, e.g);
      if (ua >= 0 && ub >= 0) {
        a_trip.emplace_back(ua, ub, -e.g);
        a_trip.emplace_back(ub, ua, -e.g);
      } else if (ua >= 0 && fixed_source_[static_cast<std::size_t>(cb)] >= 0) {
        p_trip.emplace_back(ua, fixed_source_[static_cast<std::size_t>(cb)], e.g);
      } else if (ub >= 0 && fixed_source_[static_cast<std::size_t>(ca)] >= 0) {
        p_trip.emplace_back(ub, fixed_source_[static_cast<std::size_t>(ca)], e.g);
      }
    }
    a_.resize(n_unknown_, n_unknown_);
    a_.setFromTriplets(a_trip.begin(), a_trip.end());
    p_.resize(n_unknown_, rows_);
    p_.setFromTriplets(p_trip.begin(), p_trip.end());
    if (n_unknown_ > 0) {
      ldlt_.compute(a_);
      if (ldlt_.info() != Eigen::Success)
        throw NumericError("solve_crossbar: nodal matrix factorization failed");
    }
  }

  // Double-precision factorization followed by iterative refinement with
  // long double residuals, so that KCL holds well below double round-off of
  // the node voltages.
  LdMatrix solve_unknowns(const Eigen::MatrixXd& inputs) const {
    const Eigen::Index k = inputs.cols();
    LdMatrix x = LdMatrix::Zero(n_unknown_, k);
    if (n_unknown_ == 0) return x;
    const LdMatrix in_ld = inputs.cast<long double>();
    LdMatrix rhs = LdMatrix::Zero(n_unknown_, k);
    for (int c = 0; c < p_.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(p_, c); it; ++it)
        rhs.row(it.row()) += static_cast<long double>(it.value()) * in_ld.row(c);

    x = ldlt_.solve(rhs.cast<double>()).cast<long double>();
    LdMatrix res(n_unknown_, k);
    for (int iter = 0; iter < 4; ++iter) {
      res = rhs;
      for (int c = 0; c < a_.outerSize(); ++c)
        for (Eigen::SparseMatrix<double>::InnerIterator it(a_, c); it; ++it)
          res.row(it.row()) -= static_cast<long double>(it.value()) * x.row(c);
      const Eigen::MatrixXd corr = ldlt_.solve(res.cast<double>());
      x += corr.cast<long double>();
      const long double scale = x.cwiseAbs().maxCoeff();
      if (corr.cwiseAbs().maxCoeff() <= 1e-19L * (scale > 0 ? scale : 1.0L)) break;
    }
    return x;
  }

  template <class Vec>
  long double node_voltage(int node, const LdMatrix& x, const Vec& v, int k) const {
    const auto c = static_cast<std::size_t>(class_of_[static_cast<std::size_t>(node)]);
    const int u = unknown_of_class_[c];
    if (u >= 0) return x(u, k);
    const int s = fixed_source_[c];
    return s >= 0 ? static_cast<long double>(v(s)) : 0.0L;
  }

  // Sense current equals the total device current entering the column chain.
  template <class Vec>
  Eigen::VectorXd currents_from(const LdMatrix& x, const Vec& v, int k) const {
    Eigen::VectorXd out(cols_);
    for (int j = 0; j < cols_; ++j) {
      long double sum = 0.0L;
      for (int i = 0; i < rows_; ++i) {
        if (g_(i, j) == 0.0) continue;
        sum += static_cast<long double>(g_(i, j)) *
               (node_voltage(row_node(i, j), x, v, k) - node_voltage(col_node(i, j), x, v, k));
      }
      out(j) = static_cast<double>(sum);
    }
    return out;
  }

  Eigen::MatrixXd g_;
  CrossbarParams params_;
  int rows_ = 0;
  int cols_ = 0;
  int n_unknown_ = 0;
  std::vector<Edge> edges_;
  std::vector<int> class_of_;
  std::vector<int> unknown_of_class_;
  std::vector<int> fixed_source_;  // source row index, or -1 for ground
  Eigen::SparseMatrix<double> a_;
  Eigen::SparseMatrix<double> p_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
};

inline CrossbarSolution solve_crossbar(const ConductanceTile& tile, const CrossbarParams& params,
                                       const Eigen::VectorXd& v) {
  return CrossbarSolver(tile, params).solve(v);
}

/// Input-independent matrix G' with I = G'^T V for the parasitic network.
inline Eigen::MatrixXd extract_effective_conductance(const ConductanceTile& tile,
                                                     const CrossbarParams& params) {
  if (params.parasitics_free()) {
    params.validate();
    detail::require(tile.rows() == params.n_rows && tile.cols() == params.n_cols,
                    "extract_effective_conductance: tile dimensions do not match params");
    return tile.g;
  }
  return CrossbarSolver(tile, params).effective_conductance();
}

/// G_ij (1 + e_ij), e_ij ~ N(0, sigma^2) truncated to [-3 sigma, 3 sigma] by
/// resampling.
inline ConductanceTile apply_device_variation(const ConductanceTile& tile, double sigma_dev,
                                              Rng& rng) {
  detail::require(std::isfinite(sigma_dev) && sigma_dev >= 0.0 && sigma_dev < 1.0 / 3.0,
                  "apply_device_variation: sigma_dev must lie in [0, 1/3)");
  if (sigma_dev == 0.0) return tile;
  ConductanceTile out = tile;
  for (Eigen::Index j = 0; j < out.g.cols(); ++j)
    for (Eigen::Index i = 0; i < out.g.rows(); ++i) {
      double e;
      do {
        e = rng.normal();
      } while (std::fabs(e) > 3.0);
      out.g(i, j) *= 1.0 + sigma_dev * e;
    }
  return out;
}

struct NfReport {
  std::vector<double> per_column_nf;  // NaN at excluded columns
  std::optional<double> mean_nf;      // empty when every column is excluded
  std::vector<int> excluded_columns;
};

inline NfReport nonideality_factor(const Eigen::VectorXd& i_ideal, const Eigen::VectorXd& i_nonideal,
                                   double eps = 1e-12) {
  detail::require(i_ideal.size() == i_nonideal.size(), "nonideality_factor: length mismatch");
  NfReport rep;
  rep.per_column_nf.resize(static_cast<std::size_t>(i_ideal.size()));
  double sum = 0.0;
  int n = 0;
  for (Eigen::Index j = 0; j < i_ideal.size(); ++j) {
    if (std::fabs(i_ideal(j)) < eps) {
      rep.per_column_nf[static_cast<std::size_t>(j)] = std::numeric_limits<double>::quiet_NaN();
      rep.excluded_columns.push_back(static_cast<int>(j));
      continue;
    }
    const double nf = (i_ideal(j) - i_nonideal(j)) / i_ideal(j);
    rep.per_column_nf[static_cast<std::size_t>(j)] = nf;
    sum += nf;
    ++n;
  }
  if (n > 0) rep.mean_nf = sum / n;
  return rep;
}

/// NF of a tile under input v: ideal currents from the programmed tile,
/// non-ideal currents from the effective conductance of the (possibly varied)
/// tile.
inline NfReport tile_nf(const ConductanceTile& programmed, const Eigen::MatrixXd& g_effective,
                        const Eigen::VectorXd& v, double eps = 1e-12) {
  detail::require(g_effective.rows() == programmed.g.rows() &&
                      g_effective.cols() == programmed.g.cols(),
                  "tile_nf: shape mismatch");
  return nonideality_factor(ideal_mac(programmed, v), g_effective.transpose() * v, eps);
}

}  // namespace xbarsim
