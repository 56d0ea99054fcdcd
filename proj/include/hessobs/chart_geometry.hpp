#pragma once

// Uniform box chart, sampled Riemannian metric, covariant Hessian and
// eigenvalues of (0,2)-tensors with respect to the metric.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hessobs/errors.hpp"

namespace hessobs {

/// Per-point vectors and matrices; n <= 3 so no heap allocation.
using SmallVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using SmallMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

class ChartGrid {
public:
  ChartGrid(int n, std::array<double, 3> lo, std::array<double, 3> hi,
            std::array<int, 3> m)
      : n_(n), lo_(lo), hi_(hi), m_(m) {
    if (n != 2 && n != 3)
      throw Error("chart grid: dimension must be 2 or 3");
    for (int a = 0; a < n; ++a) {
      if (m_[a] < 3)
        throw GridTooSmall("chart grid: axis " + std::to_string(a) +
                           " has fewer than 3 points");
      if (!(hi_[a] > lo_[a]))
        throw Error("chart grid: hi must exceed lo on every axis");
    }
    for (int a = n; a < 3; ++a) {
      m_[a] = 1;
      lo_[a] = hi_[a] = 0.0;
    }
    stride_[2] = 1;
    stride_[1] = m_[2];
    stride_[0] = m_[1] * m_[2];
    size_ = static_cast<std::size_t>(m_[0]) * m_[1] * m_[2];
    slot_.assign(size_, -1);
    for (std::size_t i = 0; i < size_; ++i)
      if (!is_boundary(i)) {
        slot_[i] = static_cast<long>(interior_.size());
        interior_.push_back(i);
      } else {
        boundary_.push_back(i);
      }
  }

  /// Square/cube grid with the same bounds and count on every axis.
  static std::shared_ptr<const ChartGrid> uniform(int n, double lo, double hi,
                                                  int m) {
    return std::make_shared<const ChartGrid>(n, std::array{lo, lo, lo},
                                             std::array{hi, hi, hi},
                                             std::array{m, m, m});
  }

  int dim() const noexcept { return n_; }
  std::size_t size() const noexcept { return size_; }
  int points(int axis) const noexcept { return m_[axis]; }
  double lo(int axis) const noexcept { return lo_[axis]; }
  double hi(int axis) const noexcept { return hi_[axis]; }
  double spacing(int axis) const noexcept {
    return (hi_[axis] - lo_[axis]) / (m_[axis] - 1);
  }
  double max_spacing() const noexcept {
    double h = 0.0;
    for (int a = 0; a < n_; ++a)
      h = std::max(h, spacing(a));
    return h;
  }
  long stride(int axis) const noexcept { return stride_[axis]; }

  std::array<int, 3> multi(std::size_t index) const noexcept {
    std::array<int, 3> ijk{0, 0, 0};
    ijk[0] = static_cast<int>(index / stride_[0]);
    index %= stride_[0];
    ijk[1] = static_cast<int>(index / stride_[1]);
    ijk[2] = static_cast<int>(index % stride_[1]);
    return ijk;
  }

  std::size_t index(const std::array<int, 3> &ijk) const noexcept {
    return static_cast<std::size_t>(ijk[0] * stride_[0] + ijk[1] * stride_[1] +
                                    ijk[2]);
  }

  SmallVector coord(std::size_t index) const {
    const auto ijk = multi(index);
    SmallVector x(n_);
    for (int a = 0; a < n_; ++a)
      x[a] = lo_[a] + ijk[a] * spacing(a);
    return x;
  }

  bool is_boundary(std::size_t index) const noexcept {
    const auto ijk = multi(index);
    for (int a = 0; a < n_; ++a)
      if (ijk[a] == 0 || ijk[a] == m_[a] - 1)
        return true;
    return false;
  }

  /// Interior point adjacent (axis or diagonal) to a boundary point.
  bool touches_boundary(std::size_t index) const noexcept {
    const auto ijk = multi(index);
    for (int a = 0; a < n_; ++a)
      if (ijk[a] <= 1 || ijk[a] >= m_[a] - 2)
        return true;
    return false;
  }

  const std::vector<std::size_t> &interior() const noexcept {
    return interior_;
  }
  const std::vector<std::size_t> &boundary() const noexcept {
    return boundary_;
  }
  std::size_t interior_count() const noexcept { return interior_.size(); }
  /// Position of a point among the interior unknowns, -1 on the boundary.
  long slot(std::size_t index) const noexcept { return slot_[index]; }

  bool operator==(const ChartGrid &o) const {
    return n_ == o.n_ && lo_ == o.lo_ && hi_ == o.hi_ && m_ == o.m_;
  }

private:
  int n_;
  std::array<double, 3> lo_, hi_;
  std::array<int, 3> m_;
  std::array<long, 3> stride_{};
  std::size_t size_ = 0;
  std::vector<std::size_t> interior_, boundary_;
  std::vector<long> slot_;
};

using GridPtr = std::shared_ptr<const ChartGrid>;

/// Scalar field on every grid point. Boundary entries carry Dirichlet data.
struct GridFunction {
  GridPtr grid;
  std::vector<double> values;

  GridFunction() = default;
  explicit GridFunction(GridPtr g, double fill = 0.0)
      : grid(std::move(g)), values(grid->size(), fill) {}
  GridFunction(GridPtr g, std::vector<double> v)
      : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid->size())
      throw Error("grid function: value count does not match grid");
  }

  static GridFunction sample(GridPtr g,
                             const std::function<double(const SmallVector &)> &fn) {
    GridFunction out(g);
    for (std::size_t i = 0; i < g->size(); ++i)
      out.values[i] = fn(g->coord(i));
    return out;
  }

  double operator[](std::size_t i) const { return values[i]; }
  double &operator[](std::size_t i) { return values[i]; }

  /// Copies the boundary entries of `data` into this function.
  void pin_boundary(const GridFunction &data) {
    for (std::size_t b : grid->boundary())
      values[b] = data.values[b];
  }
};

/// Symmetric n x n matrix per grid point, stored as its upper triangle.
class TensorField2 {
public:
  TensorField2() = default;
  TensorField2(GridPtr g) : grid_(std::move(g)), data_(grid_->size()) {
    for (auto &d : data_)
      d.fill(0.0);
  }

  SmallMatrix at(std::size_t index) const {
    const int n = grid_->dim();
    SmallMatrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        m(i, j) = m(j, i) = data_[index][slot(i, j)];
    return m;
  }

  /// Stores the symmetric part of `m`.
  void set(std::size_t index, const SmallMatrix &m) {
    const int n = grid_->dim();
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        data_[index][slot(i, j)] = 0.5 * (m(i, j) + m(j, i));
  }

  double entry(std::size_t index, int i, int j) const {
    return data_[index][slot(std::min(i, j), std::max(i, j))];
  }

  const GridPtr &grid() const noexcept { return grid_; }

private:
  static int slot(int i, int j) {
    static constexpr int table[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
    return table[i][j];
  }
  GridPtr grid_;
  std::vector<std::array<double, 6>> data_;
};

// ---------------------------------------------------------------------------
// Finite differences at interior points (second-order centered)

namespace fd {

inline SmallVector gradient(const std::vector<double> &u, const ChartGrid &grid,
                            std::size_t p) {
  const int n = grid.dim();
  SmallVector g(n);
  for (int a = 0; a < n; ++a) {
    const long s = grid.stride(a);
    g[a] = (u[p + s] - u[p - s]) / (2.0 * grid.spacing(a));
  }
  return g;
}

inline SmallMatrix hessian(const std::vector<double> &u, const ChartGrid &grid,
                           std::size_t p) {
  const int n = grid.dim();
  SmallMatrix H(n, n);
  for (int a = 0; a < n; ++a) {
    const long s = grid.stride(a);
    const double h = grid.spacing(a);
    H(a, a) = (u[p + s] - 2.0 * u[p] + u[p - s]) / (h * h);
    for (int b = a + 1; b < n; ++b) {
      const long t = grid.stride(b);
      const double k = grid.spacing(b);
      H(a, b) = H(b, a) = (u[p + s + t] - u[p + s - t] - u[p - s + t] +
                           u[p - s - t]) /
                          (4.0 * h * k);
    }
  }
  return H;
}

/// Sparse row of a linear stencil: sum_ij M_ij d_ij + sum_k b_k d_k + c.
/// Calls emit(offset, weight) for each grid neighbour (offset relative to p).
template <class Emit>
void stencil(const ChartGrid &grid, const SmallMatrix &M, const SmallVector &b,
             double c, Emit &&emit) {
  const int n = grid.dim();
  double center = c;
  for (int a = 0; a < n; ++a) {
    const long s = grid.stride(a);
    const double h = grid.spacing(a);
    const double w2 = M(a, a) / (h * h);
    const double w1 = b[a] / (2.0 * h);
    emit(s, w2 + w1);
    emit(-s, w2 - w1);
    center -= 2.0 * w2;
    for (int q = a + 1; q < n; ++q) {
      const long t = grid.stride(q);
      const double w = 2.0 * M(a, q) / (4.0 * h * grid.spacing(q));
      emit(s + t, w);
      emit(s - t, -w);
      emit(-s + t, -w);
      emit(-s - t, w);
    }
  }
  emit(0, center);
}

} // namespace fd

// ---------------------------------------------------------------------------
// Metric

/// Christoffel symbols at one point: gamma[k](i, j) = Gamma^k_ij.
using Christoffel = std::array<SmallMatrix, 3>;

/// Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij) from finite
/// differences of the sampled metric. Centered in the interior, one-sided
/// second order on boundary points.
inline std::vector<Christoffel>
christoffel_from_metric(const std::vector<SmallMatrix> &g,
                        const ChartGrid &grid) {
  const int n = grid.dim();
  if (g.size() != grid.size())
    throw Error("christoffel_from_metric: metric field does not match grid");
  std::vector<Christoffel> out(grid.size());
  std::vector<SmallMatrix> dg(n); // dg[a] = d_a g
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const auto ijk = grid.multi(p);
    for (int a = 0; a < n; ++a) {
      const long s = grid.stride(a);
      const double h = grid.spacing(a);
      const int i = ijk[a];
      const int last = grid.points(a) - 1;
      if (i > 0 && i < last)
        dg[a] = (g[p + s] - g[p - s]) / (2.0 * h);
      else if (i == 0)
        dg[a] = (-3.0 * g[p] + 4.0 * g[p + s] - g[p + 2 * s]) / (2.0 * h);
      else
        dg[a] = (3.0 * g[p] - 4.0 * g[p - s] + g[p - 2 * s]) / (2.0 * h);
    }
    Eigen::LLT<SmallMatrix> llt(g[p]);
    if (llt.info() != Eigen::Success)
      throw NotSPD("christoffel_from_metric: metric not positive definite");
    const SmallMatrix ginv = llt.solve(SmallMatrix::Identity(n, n));
    for (int k = 0; k < n; ++k) {
      SmallMatrix G = SmallMatrix::Zero(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          double v = 0.0;
          for (int l = 0; l < n; ++l)
            v += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
          G(i, j) = G(j, i) = 0.5 * v;
        }
      out[p][k] = G;
    }
    for (int k = n; k < 3; ++k)
      out[p][k] = SmallMatrix::Zero(n, n);
  }
  return out;
}

class MetricField {
public:
  using Callback = std::function<SmallMatrix(const SmallVector &)>;

  static MetricField flat(GridPtr grid) {
    MetricField m;
    m.grid_ = grid;
    m.flat_ = true;
    const int n = grid->dim();
    m.g_.assign(grid->size(), SmallMatrix::Identity(n, n));
    m.g_inv_ = m.g_;
    m.chol_ = m.g_;
    m.christoffel_.assign(grid->size(), Christoffel{SmallMatrix::Zero(n, n),
                                                    SmallMatrix::Zero(n, n),
                                                    SmallMatrix::Zero(n, n)});
    m.g_floor_ = 1.0;
    return m;
  }

  /// Samples the metric callback once per grid point.
  static MetricField sample(GridPtr grid, const Callback &metric) {
    std::vector<SmallMatrix> g(grid->size());
    for (std::size_t p = 0; p < grid->size(); ++p)
      g[p] = metric(grid->coord(p));
    return from_values(std::move(grid), std::move(g));
  }

  static MetricField from_values(GridPtr grid, std::vector<SmallMatrix> g) {
    MetricField m;
    m.grid_ = grid;
    m.flat_ = false;
    const int n = grid->dim();
    if (g.size() != grid->size())
      throw Error("metric field: value count does not match grid");
    m.g_floor_ = std::numeric_limits<double>::infinity();
    m.g_inv_.resize(g.size());
    m.chol_.resize(g.size());
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (g[p].rows() != n || g[p].cols() != n)
        throw Error("metric field: wrong matrix size");
      g[p] = 0.5 * (g[p] + g[p].transpose()).eval();
      Eigen::LLT<SmallMatrix> llt(g[p]);
      if (llt.info() != Eigen::Success)
        throw NotSPD("metric field: g not positive definite at point " +
                     std::to_string(p));
      Eigen::SelfAdjointEigenSolver<SmallMatrix> eig(g[p],
                                                     Eigen::EigenvaluesOnly);
      const double lmin = eig.eigenvalues().minCoeff();
      if (!(lmin > 0.0))
        throw NotSPD("metric field: g not positive definite at point " +
                     std::to_string(p));
      m.g_floor_ = std::min(m.g_floor_, lmin);
      m.chol_[p] = llt.matrixL();
      m.g_inv_[p] = llt.solve(SmallMatrix::Identity(n, n));
    }
    m.christoffel_ = christoffel_from_metric(g, *grid);
    m.g_ = std::move(g);
    return m;
  }

  bool is_flat() const noexcept { return flat_; }
  const GridPtr &grid() const noexcept { return grid_; }
  const SmallMatrix &g(std::size_t p) const { return g_[p]; }
  const SmallMatrix &g_inv(std::size_t p) const { return g_inv_[p]; }
  /// Lower Cholesky factor L of g = L L^T.
  const SmallMatrix &cholesky(std::size_t p) const { return chol_[p]; }
  const Christoffel &christoffel(std::size_t p) const { return christoffel_[p]; }
  double g_floor() const noexcept { return g_floor_; }

  /// Squared norm g^{ij} p_i p_j of a covector.
  double covector_norm_sq(std::size_t p, const SmallVector &v) const {
    return v.dot(g_inv_[p] * v);
  }

private:
  GridPtr grid_;
  bool flat_ = true;
  std::vector<SmallMatrix> g_, g_inv_, chol_;
  std::vector<Christoffel> christoffel_;
  double g_floor_ = 1.0;
};

// ---------------------------------------------------------------------------
// Covariant Hessian

/// (nabla^2 u)_ij = d_ij u - Gamma^k_ij d_k u at a single interior point,
/// given the raw finite-difference Hessian and gradient.
inline SmallMatrix covariant_from_raw(const SmallMatrix &raw,
                                      const SmallVector &grad,
                                      const Christoffel &gamma, int n) {
  SmallMatrix H = raw;
  for (int k = 0; k < n; ++k)
    H -= grad[k] * gamma[k];
  return H;
}

/// Covariant Hessian at interior points; boundary entries are left zero.
inline TensorField2 covariant_hessian(const GridFunction &u,
                                      const MetricField &geo,
                                      const ChartGrid &grid) {
  for (int a = 0; a < grid.dim(); ++a)
    if (grid.points(a) < 3)
      throw GridTooSmall("covariant_hessian: need at least 3 points per axis");
  TensorField2 out(u.grid);
  const int n = grid.dim();
  for (std::size_t p : grid.interior()) {
    const SmallMatrix raw = fd::hessian(u.values, grid, p);
    if (geo.is_flat()) {
      out.set(p, raw);
      continue;
    }
    const SmallVector grad = fd::gradient(u.values, grid, p);
    out.set(p, covariant_from_raw(raw, grad, geo.christoffel(p), n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Eigenvalues with respect to g

struct MetricEigen {
  SmallVector lambda; // descending
  SmallMatrix frame;  // columns v_i with X v_i = lambda_i g v_i, V^T g V = I
};

/// Solves X v = lambda g v through g = L L^T and the symmetric eigenproblem
/// of L^{-1} X L^{-T}. `chol` may be supplied to skip the factorization.
inline MetricEigen eigen_wrt_metric(const SmallMatrix &X, const SmallMatrix &g,
                                    const SmallMatrix *chol = nullptr) {
  const int n = static_cast<int>(X.rows());
  SmallMatrix L;
  if (chol) {
    L = *chol;
  } else {
    Eigen::LLT<SmallMatrix> llt(g);
    if (llt.info() != Eigen::Success)
      throw NotSPD("eigen_wrt_metric: metric not positive definite");
    L = llt.matrixL();
  }
  const auto Lv = L.triangularView<Eigen::Lower>();
  SmallMatrix T = Lv.solve(X);                            // L^{-1} X
  SmallMatrix S = Lv.solve(T.transpose()).transpose();    // L^{-1} X L^{-T}
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<SmallMatrix> eig(S);
  MetricEigen out;
  out.lambda.resize(n);
  out.frame.resize(n, n);
  const SmallMatrix V = L.transpose().triangularView<Eigen::Upper>().solve(
      eig.eigenvectors());
  for (int i = 0; i < n; ++i) {
    out.lambda[i] = eig.eigenvalues()[n - 1 - i];
    out.frame.col(i) = V.col(n - 1 - i);
  }
  return out;
}

/// Flat-metric shortcut (g = identity).
inline MetricEigen eigen_flat(const SmallMatrix &X) {
  const int n = static_cast<int>(X.rows());
  Eigen::SelfAdjointEigenSolver<SmallMatrix> eig(X);
  MetricEigen out;
  out.lambda.resize(n);
  out.frame.resize(n, n);
  for (int i = 0; i < n; ++i) {
    out.lambda[i] = eig.eigenvalues()[n - 1 - i];
    out.frame.col(i) = eig.eigenvectors().col(n - 1 - i);
  }
  return out;
}

} // namespace hessobs
