// Copyright 2026 The voxrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied. See the License for the specific language governing
// permissions and limitations under the License.

#ifndef VOXRECON_SPARSE_HPP
#define VOXRECON_SPARSE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxrecon/errors.hpp"

namespace voxrecon {

/// Stimuli-by-voxels response matrix with a trailing intercept column of
/// ones: m rows (training images) by n+1 columns (n voxels + intercept).
struct DesignMatrix {
  Eigen::MatrixXd data;

  DesignMatrix() = default;

  explicit DesignMatrix(Eigen::MatrixXd values) : data(std::move(values)) { validate(); }

  /// Appends the intercept column to an m x n response block.
  static DesignMatrix from_responses(const Eigen::MatrixXd& responses) {
    Eigen::MatrixXd full(responses.rows(), responses.cols() + 1);
    full.leftCols(responses.cols()) = responses;
    full.col(responses.cols()).setOnes();
    return DesignMatrix(std::move(full));
  }

  Eigen::Index rows() const { return data.rows(); }
  /// Number of voxels (intercept column excluded).
  Eigen::Index voxels() const { return data.cols() - 1; }
  Eigen::Index cols() const { return data.cols(); }

  void validate() const {
    if (data.rows() < 1 || data.cols() < 2)
      throw data_error("DesignMatrix: need m >= 1 rows and n >= 1 voxel columns");
    if (!data.allFinite()) throw data_error("DesignMatrix: non-finite entry");
    for (Eigen::Index i = 0; i < data.rows(); ++i)
      if (data(i, data.cols() - 1) != 1.0)
        throw data_error("DesignMatrix: intercept column must be exactly 1.0 (row " +
                         std::to_string(i) + ")");
  }
};

/// Sparse coefficient vector over [0, n]; index n is the intercept slot.
/// Entries are strictly increasing by index with nonzero finite values.
class SparseWeights {
public:
  SparseWeights() = default;

  SparseWeights(std::size_t dim, std::vector<std::pair<std::uint32_t, double>> entries)
      : dim_(dim), entries_(std::move(entries)) {
    std::uint32_t prev = 0;
    bool first = true;
    for (const auto& [index, coeff] : entries_) {
      if (!first && index <= prev)
        throw data_error("SparseWeights: indices must be strictly increasing");
      if (index >= dim_) throw data_error("SparseWeights: index out of range");
      if (coeff == 0.0 || !std::isfinite(coeff))
        throw data_error("SparseWeights: coefficients must be nonzero and finite");
      prev = index;
      first = false;
    }
  }

  std::size_t dim() const { return dim_; }
  std::size_t support_size() const { return entries_.size(); }
  const std::vector<std::pair<std::uint32_t, double>>& entries() const { return entries_; }

  /// Voxel indices in the support, intercept slot excluded.
  std::vector<std::uint32_t> voxel_support() const {
    std::vector<std::uint32_t> s;
    for (const auto& [index, coeff] : entries_)
      if (index + 1 != dim_) s.push_back(index);
    return s;
  }

  double intercept() const {
    if (!entries_.empty() && entries_.back().first + 1 == dim_) return entries_.back().second;
    return 0.0;
  }

  double coefficient(std::uint32_t index) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                               [](const auto& e, std::uint32_t i) { return e.first < i; });
    return (it != entries_.end() && it->first == index) ? it->second : 0.0;
  }

  double dot(const Eigen::VectorXd& row) const {
    if (static_cast<std::size_t>(row.size()) != dim_)
      throw data_error("SparseWeights::dot: row length mismatch");
    double acc = 0.0;
    for (const auto& [index, coeff] : entries_) acc += coeff * row[index];
    return acc;
  }

  Eigen::VectorXd dense() const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    for (const auto& [index, coeff] : entries_) v[index] = coeff;
    return v;
  }

  double l1_norm() const {
    double s = 0.0;
    for (const auto& [index, coeff] : entries_) s += std::abs(coeff);
    return s;
  }

private:
  std::size_t dim_ = 0;
  std::vector<std::pair<std::uint32_t, double>> entries_;
};

enum class SolverKind { romp, l1_admm };

struct SolverConfig {
  SolverKind solver = SolverKind::romp;
  /// ROMP per-iteration selection size; pursuit halts at support 2k.
  std::size_t sparsity_k = 32;
  double residual_tol = 1e-6;
  std::size_t max_iterations = 10000;
  /// ADMM penalty; adapted by residual balancing during the run.
  double rho = 1.0;
  /// Noise allowance as a fraction of ||y||; 0 keeps the equality constraint.
  double delta_rel = 0.0;
  /// Debias the ADMM result by least squares on its support when that does
  /// not worsen feasibility.
  bool polish = true;

  void validate() const {
    if (sparsity_k < 1) throw config_error("SolverConfig: sparsity_k must be >= 1");
    if (residual_tol <= 0) throw config_error("SolverConfig: residual_tol must be > 0");
    if (rho <= 0) throw config_error("SolverConfig: rho must be > 0");
    if (delta_rel < 0) throw config_error("SolverConfig: delta must be >= 0");
  }
};

struct SolveOutcome {
  SparseWeights weights;
  bool converged = false;
  std::size_t iterations = 0;
  bool rank_deficient = false;
};

struct LeastSquaresResult {
  Eigen::VectorXd coefficients; // one per support index, in the given order
  bool rank_deficient = false;
};

/// Minimum-norm least squares of y against the selected columns of X.
inline LeastSquaresResult least_squares_on_support(const DesignMatrix& X,
                                                   const Eigen::VectorXd& y,
                                                   const std::vector<std::uint32_t>& support) {
  if (y.size() != X.rows()) throw data_error("least_squares_on_support: length mismatch");
  if (support.size() > static_cast<std::size_t>(X.rows()))
    throw data_error("least_squares_on_support: support larger than sample count");
  LeastSquaresResult out;
  if (support.empty()) {
    out.coefficients = Eigen::VectorXd();
    return out;
  }
  Eigen::MatrixXd sub(X.rows(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t j = 0; j < support.size(); ++j) {
    if (support[j] >= X.cols())
      throw data_error("least_squares_on_support: index out of range");
    sub.col(static_cast<Eigen::Index>(j)) = X.data.col(support[j]);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sub);
  out.coefficients = cod.solve(y);
  out.rank_deficient = cod.rank() < sub.cols();
  return out;
}

namespace detail {

struct ColumnScaling {
  Eigen::VectorXd mean;  // per voxel column
  Eigen::VectorXd sigma; // 1.0 where the column is constant
};

inline ColumnScaling column_scaling(const Eigen::MatrixXd& X) {
  const Eigen::Index m = X.rows(), n = X.cols() - 1;
  ColumnScaling s;
  s.mean = X.leftCols(n).colwise().mean();
  s.sigma.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double var = 0.0;
    if (m > 1) {
      var = (X.col(j).array() - s.mean[j]).square().sum() / static_cast<double>(m - 1);
    }
    s.sigma[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return s;
}

/// z-scored voxel columns (intercept column untouched, kept last).
inline Eigen::MatrixXd scaled_design(const Eigen::MatrixXd& X, const ColumnScaling& s) {
  const Eigen::Index n = X.cols() - 1;
  Eigen::MatrixXd Z(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < n; ++j)
    Z.col(j) = (X.col(j).array() - s.mean[j]) / s.sigma[j];
  Z.col(n).setOnes();
  return Z;
}

/// Maps (scaled coefficients, scaled intercept) back to the raw coordinates
/// and prunes entries below 1e-10 of the largest magnitude.
inline SparseWeights unscale_weights(const std::vector<std::uint32_t>& support,
                                     const Eigen::VectorXd& scaled_coeffs,
                                     double scaled_intercept, const ColumnScaling& s,
                                     std::size_t n) {
  std::vector<std::pair<std::uint32_t, double>> raw;
  double intercept = scaled_intercept;
  for (std::size_t j = 0; j < support.size(); ++j) {
    const std::uint32_t v = support[j];
    const double coeff = scaled_coeffs[static_cast<Eigen::Index>(j)] / s.sigma[v];
    raw.emplace_back(v, coeff);
    intercept -= coeff * s.mean[v];
  }
  raw.emplace_back(static_cast<std::uint32_t>(n), intercept);

  double max_abs = 0.0;
  for (const auto& [index, coeff] : raw) max_abs = std::max(max_abs, std::abs(coeff));
  const double cutoff = 1e-10 * max_abs;
  std::vector<std::pair<std::uint32_t, double>> kept;
  for (const auto& [index, coeff] : raw)
    if (std::abs(coeff) > cutoff && coeff != 0.0) kept.emplace_back(index, coeff);
  std::sort(kept.begin(), kept.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return SparseWeights(n + 1, std::move(kept));
}

/// Least squares of y against [Z_support, intercept]; returns coefficients
/// in support order with the intercept last.
inline Eigen::VectorXd scaled_refit(const Eigen::MatrixXd& Z,
                                    const std::vector<std::uint32_t>& support,
                                    const Eigen::VectorXd& y, bool* rank_deficient) {
  Eigen::MatrixXd sub(Z.rows(), static_cast<Eigen::Index>(support.size()) + 1);
  for (std::size_t j = 0; j < support.size(); ++j)
    sub.col(static_cast<Eigen::Index>(j)) = Z.col(support[j]);
  sub.col(sub.cols() - 1).setOnes();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sub);
  if (rank_deficient && cod.rank() < sub.cols()) *rank_deficient = true;
  return cod.solve(y);
}

/// ROMP's regularization step: among the k strongest correlations, pick the
/// contiguous comparable-magnitude band (max <= 2 min) of maximal energy.
inline std::vector<std::uint32_t> regularized_band(
    const std::vector<std::pair<double, std::uint32_t>>& by_magnitude_desc) {
  std::size_t best_lo = 0, best_hi = 0;
  double best_energy = -1.0;
  const std::size_t k = by_magnitude_desc.size();
  for (std::size_t lo = 0; lo < k; ++lo) {
    double energy = 0.0;
    for (std::size_t hi = lo; hi < k; ++hi) {
      if (by_magnitude_desc[lo].first > 2.0 * by_magnitude_desc[hi].first) break;
      energy += by_magnitude_desc[hi].first * by_magnitude_desc[hi].first;
      if (energy > best_energy) {
        best_energy = energy;
        best_lo = lo;
        best_hi = hi;
      }
    }
  }
  std::vector<std::uint32_t> band;
  for (std::size_t i = best_lo; i <= best_hi; ++i) band.push_back(by_magnitude_desc[i].second);
  return band;
}

} // namespace detail

/// Regularized orthogonal matching pursuit. Greedy support growth with a
/// comparable-magnitude selection band per iteration and a least-squares
/// refit (intercept always included) on the accumulated support.
inline SolveOutcome romp_solve(const DesignMatrix& X, const Eigen::VectorXd& y,
                               const SolverConfig& cfg) {
  cfg.validate();
  if (y.size() != X.rows()) throw data_error("romp_solve: length of y != rows of X");
  if (!y.allFinite()) throw data_error("romp_solve: non-finite target");

  const std::size_t n = static_cast<std::size_t>(X.voxels());
  const double y_norm = y.norm();
  SolveOutcome out;
  if (y_norm == 0.0) {
    out.weights = SparseWeights(n + 1, {});
    out.converged = true;
    return out;
  }

  const auto scaling = detail::column_scaling(X.data);
  const Eigen::MatrixXd Z = detail::scaled_design(X.data, scaling);
  const double stop_resid = std::max(cfg.residual_tol * y_norm, cfg.delta_rel * y_norm);

  std::vector<std::uint32_t> support;
  std::vector<bool> selected(n, false);
  Eigen::VectorXd coeffs;                   // support order, intercept last
  double intercept_scaled = y.mean();       // intercept-only starting fit
  Eigen::VectorXd residual = y.array() - intercept_scaled;

  const std::size_t support_cap = 2 * cfg.sparsity_k;
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    if (residual.norm() <= stop_resid) {
      out.converged = true;
      break;
    }
    if (support.size() >= support_cap) break;
    out.iterations = it + 1;

    const Eigen::VectorXd u = Z.leftCols(static_cast<Eigen::Index>(n)).transpose() * residual;
    std::vector<std::pair<double, std::uint32_t>> candidates;
    candidates.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (selected[j]) continue;
      const double mag = std::abs(u[static_cast<Eigen::Index>(j)]);
      if (mag > 0.0) candidates.emplace_back(mag, static_cast<std::uint32_t>(j));
    }
    if (candidates.empty()) break; // nothing left to explain the residual

    const std::size_t k = std::min(cfg.sparsity_k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(k),
                      candidates.end(), [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    candidates.resize(k);

    for (std::uint32_t j : detail::regularized_band(candidates)) {
      support.push_back(j);
      selected[j] = true;
    }
    std::sort(support.begin(), support.end());

    coeffs = detail::scaled_refit(Z, support, y, &out.rank_deficient);
    residual = y;
    for (std::size_t j = 0; j < support.size(); ++j)
      residual -= coeffs[static_cast<Eigen::Index>(j)] * Z.col(support[j]);
    residual -= Eigen::VectorXd::Constant(y.size(), coeffs[coeffs.size() - 1]);
    intercept_scaled = coeffs[coeffs.size() - 1];
  }
  if (residual.norm() <= stop_resid) out.converged = true;

  if (support.empty()) {
    // best effort: intercept-only fit
    out.weights = detail::unscale_weights({}, Eigen::VectorXd(), intercept_scaled, scaling, n);
  } else {
    Eigen::VectorXd head = coeffs.head(static_cast<Eigen::Index>(support.size()));
    out.weights =
        detail::unscale_weights(support, head, coeffs[coeffs.size() - 1], scaling, n);
  }
  return out;
}

/// Alternating-direction solver for min ||w||_1 s.t. ||Xw - y|| <= delta,
/// with delta = 0 the equality-constrained basis pursuit. The intercept
/// column is never penalized. Internally the target is normalized to unit
/// norm so iteration behavior is scale-free.
inline SolveOutcome l1_admm_solve(const DesignMatrix& X, const Eigen::VectorXd& y,
                                  const SolverConfig& cfg) {
  cfg.validate();
  if (y.size() != X.rows()) throw data_error("l1_admm_solve: length of y != rows of X");
  if (!y.allFinite()) throw data_error("l1_admm_solve: non-finite target");

  const Eigen::Index m = X.rows();
  const std::size_t n = static_cast<std::size_t>(X.voxels());
  const double y_norm = y.norm();
  SolveOutcome out;
  if (y_norm == 0.0) {
    out.weights = SparseWeights(n + 1, {});
    out.converged = true;
    return out;
  }

  const auto scaling = detail::column_scaling(X.data);
  const Eigen::MatrixXd A = detail::scaled_design(X.data, scaling);
  const Eigen::VectorXd yn = y / y_norm;
  const double delta = cfg.delta_rel; // already relative to ||y||

  const Eigen::MatrixXd M =
      Eigen::MatrixXd::Identity(m, m) + A * A.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw numeric_error("l1_admm_solve: Gram factorization failed");

  const Eigen::Index d = A.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd u1 = Eigen::VectorXd::Zero(d); // scaled dual for w = z
  Eigen::VectorXd u2 = Eigen::VectorXd::Zero(m); // scaled dual for Aw - r = y
  double rho = cfg.rho;

  const double tol = cfg.residual_tol;
  bool admm_ok = false;
  std::size_t it = 0;
  for (; it < cfg.max_iterations; ++it) {
    const Eigen::VectorXd a = z - u1;
    const Eigen::VectorXd b = yn + r - u2;
    w = a + A.transpose() * llt.solve(b - A * a);

    const Eigen::VectorXd z_old = z;
    const Eigen::VectorXd wz = w + u1;
    const double thresh = 1.0 / rho;
    for (Eigen::Index j = 0; j < d - 1; ++j) {
      const double v = wz[j];
      z[j] = v > thresh ? v - thresh : (v < -thresh ? v + thresh : 0.0);
    }
    z[d - 1] = wz[d - 1]; // intercept: no shrinkage

    const Eigen::VectorXd r_old = r;
    const Eigen::VectorXd Aw = A * w;
    if (delta > 0.0) {
      const Eigen::VectorXd v = Aw - yn + u2;
      const double vn = v.norm();
      r = vn > delta ? Eigen::VectorXd(v * (delta / vn)) : v;
    } // else r stays zero

    u1 += w - z;
    u2 += Aw - yn - r;

    const double pri = std::sqrt((w - z).squaredNorm() + (Aw - yn - r).squaredNorm());
    const double dual =
        rho * std::sqrt((z - z_old).squaredNorm() + (A.transpose() * (r - r_old)).squaredNorm());
    const double pri_scale = std::max({w.norm(), z.norm() + r.norm(), 1.0});
    const double dual_scale =
        std::max(1.0, rho * std::sqrt(u1.squaredNorm() + (A.transpose() * u2).squaredNorm()));
    if (pri <= tol * pri_scale && dual <= tol * dual_scale) {
      admm_ok = true;
      ++it;
      break;
    }
    if ((it + 1) % 50 == 0) {
      // residual balancing keeps the two convergence rates comparable
      if (pri > 10.0 * dual) {
        rho *= 2.0;
        u1 *= 0.5;
        u2 *= 0.5;
      } else if (dual > 10.0 * pri) {
        rho *= 0.5;
        u1 *= 2.0;
        u2 *= 2.0;
      }
    }
  }
  out.iterations = it;

  // Report in raw coordinates; the sparse iterate carries the support.
  Eigen::VectorXd zs = z * y_norm;
  std::vector<std::uint32_t> support;
  double zmax = 0.0;
  for (Eigen::Index j = 0; j < d - 1; ++j) zmax = std::max(zmax, std::abs(zs[j]));
  for (Eigen::Index j = 0; j < d - 1; ++j)
    if (std::abs(zs[j]) > 1e-10 * zmax && zs[j] != 0.0)
      support.push_back(static_cast<std::uint32_t>(j));

  Eigen::VectorXd coeffs(static_cast<Eigen::Index>(support.size()));
  for (std::size_t j = 0; j < support.size(); ++j)
    coeffs[static_cast<Eigen::Index>(j)] = zs[support[j]];
  SparseWeights candidate =
      detail::unscale_weights(support, coeffs, zs[d - 1], scaling, n);

  auto raw_residual = [&](const SparseWeights& weights) {
    Eigen::VectorXd pred = Eigen::VectorXd::Zero(m);
    for (const auto& [index, coeff] : weights.entries()) pred += coeff * X.data.col(index);
    return (pred - y).norm();
  };
  double best_resid = raw_residual(candidate);

  if (cfg.polish && !support.empty() &&
      support.size() <= static_cast<std::size_t>(m)) {
    bool rank_flag = false;
    const Eigen::VectorXd refit = detail::scaled_refit(A, support, yn, &rank_flag);
    Eigen::VectorXd head =
        refit.head(static_cast<Eigen::Index>(support.size())) * y_norm;
    SparseWeights polished = detail::unscale_weights(
        support, head, refit[refit.size() - 1] * y_norm, scaling, n);
    const double polished_resid = raw_residual(polished);
    if (polished_resid <= std::max(delta * y_norm, best_resid)) {
      candidate = std::move(polished);
      best_resid = polished_resid;
      out.rank_deficient = rank_flag;
    }
  }

  out.weights = std::move(candidate);
  out.converged =
      admm_ok && best_resid <= std::max(delta * y_norm, cfg.residual_tol * y_norm);
  return out;
}

/// Dispatch on cfg.solver.
inline SolveOutcome sparse_solve(const DesignMatrix& X, const Eigen::VectorXd& y,
                                 const SolverConfig& cfg) {
  return cfg.solver == SolverKind::romp ? romp_solve(X, y, cfg) : l1_admm_solve(X, y, cfg);
}

} // namespace voxrecon

#endif // VOXRECON_SPARSE_HPP
