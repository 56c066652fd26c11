#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "hdicv/common.hpp"
#include "hdicv/estimators.hpp"

// Rotation-equivariant nonlinear shrinkage of the self-normalized matrix Xi~:
// keep its eigenvectors, replace its eigenvalues.

namespace hdicv::shrink {

/// Eigenvectors as columns, eigenvalues descending.
struct SpectralDecomp {
  Matrix vectors;
  Vector values;

  int p() const { return static_cast<int>(values.size()); }
};

inline SpectralDecomp decompose(const Matrix& symmetric) {
  require(symmetric.rows() == symmetric.cols(), ErrorKind::invalid_input, "decomposition needs a square matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(symmetric));
  require(es.info() == Eigen::Success, ErrorKind::convergence, "symmetric eigensolver failed");
  return {es.eigenvectors().rowwise().reverse(), es.eigenvalues().reverse()};
}

inline Matrix reconstruct(const SpectralDecomp& decomp, const Vector& diagonal) {
  return symmetrized(decomp.vectors * diagonal.asDiagonal() * decomp.vectors.transpose());
}

/// d_i = u_i^T target u_i, the Frobenius-optimal diagonal for fixed eigenvectors.
inline Vector projected_diagonal(const Matrix& vectors, const Matrix& target) {
  return (vectors.transpose() * target * vectors).diagonal();
}

/// theta_hat * U diag(d) U^T for externally supplied d.
inline CovEstimate ns_with_values(const SpectralDecomp& decomp, const Vector& d, double theta_hat) {
  require(d.size() == decomp.p(), ErrorKind::dimension_mismatch, "shrinkage values and eigenvectors disagree");
  return {theta_hat * reconstruct(decomp, d), EstimatorTag::shrunk_ns, theta_hat};
}

/// Oracle NS: eigenvalues replaced by u_i^T Sigma_breve u_i (needs the true Sigma_breve).
inline CovEstimate oracle_ns(const SpectralDecomp& decomp, const Matrix& sigma_breve, double theta_hat) {
  require(sigma_breve.rows() == decomp.p() && sigma_breve.cols() == decomp.p(), ErrorKind::dimension_mismatch,
          "Sigma_breve and eigenvectors disagree");
  return ns_with_values(decomp, projected_diagonal(decomp.vectors, sigma_breve), theta_hat);
}

// ---------------------------------------------------------------------------
// ANS: permutation-averaged sample splitting
// ---------------------------------------------------------------------------

/// The seven raw split sizes for M_tau increments, rounded and clamped to
/// [2, M_tau - 2]; duplicates kept so entry k is the k-th candidate.
inline std::vector<int> candidate_set(int m_tau) {
  const double m = m_tau;
  const double r = std::sqrt(m);
  const double raw[] = {2.0 * r, 0.2 * m, 0.4 * m, 0.6 * m, 0.8 * m, m - 2.5 * r, m - 1.5 * r};
  std::vector<int> out;
  for (double v : raw) out.push_back(std::clamp(static_cast<int>(std::lround(v)), 2, m_tau - 2));
  return out;
}

struct SplitPlan {
  int m_tau = 0;
  std::vector<int> candidates;  ///< deduplicated, in candidate order
  std::optional<int> chosen;    ///< fixed split size; selected by the criterion when empty
  int permutations = 50;
  std::uint64_t seed = 0;
};

inline SplitPlan make_split_plan(int m_tau, int permutations, std::uint64_t seed) {
  require(m_tau >= 8, ErrorKind::insufficient_data, "ANS needs at least 8 increments");
  require(permutations >= 1, ErrorKind::invalid_input, "need at least one permutation");
  SplitPlan plan{m_tau, {}, std::nullopt, permutations, seed};
  for (int c : candidate_set(m_tau))
    if (std::find(plan.candidates.begin(), plan.candidates.end(), c) == plan.candidates.end())
      plan.candidates.push_back(c);
  return plan;
}

/// Seeded Fisher-Yates permutations of 0..m-1.
inline std::vector<std::vector<int>> permutations(int m, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> out(count, std::vector<int>(m));
  for (auto& perm : out) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = m - 1; i > 0; --i) {
      const int j = std::uniform_int_distribution<int>(0, i)(rng);
      std::swap(perm[i], perm[j]);
    }
  }
  return out;
}

struct AnsResult {
  CovEstimate estimate;
  int split = 0;                                ///< M_tau1 used
  std::vector<std::pair<int, double>> criteria; ///< (candidate, criterion value)
};

namespace detail {

struct SplitAverage {
  Matrix mean_ans;    ///< (1/B) sum_k Xi_ANS^(k)
  double criterion;   ///< ||(1/B) sum_k (Xi_ANS^(k) - Xi_2^(k))||_F^2
};

inline SplitAverage split_average(const Matrix& deltas, int split, const std::vector<std::vector<int>>& perms) {
  const int p = static_cast<int>(deltas.rows());
  const int m = static_cast<int>(deltas.cols());
  Matrix sum_ans = Matrix::Zero(p, p);
  Matrix sum_diff = Matrix::Zero(p, p);
  for (const auto& perm : perms) {
    const std::vector<int> first(perm.begin(), perm.begin() + split);
    const std::vector<int> second(perm.begin() + split, perm.end());
    const Matrix xi1 = (static_cast<double>(p) / split) * self_normalized_sum(deltas, first);
    const Matrix xi2 = (static_cast<double>(p) / (m - split)) * self_normalized_sum(deltas, second);
    const auto dec = decompose(xi1);
    const Matrix ans = reconstruct(dec, projected_diagonal(dec.vectors, xi2));
    sum_ans += ans;
    sum_diff += ans - xi2;
  }
  const double b = static_cast<double>(perms.size());
  return {sum_ans / b, (sum_diff / b).squaredNorm()};
}

}  // namespace detail

/// theta_hat * (1/B) sum_k U1 diag(U1^T Xi2 U1) U1^T. Every candidate is scored
/// on the same B permutations; ties go to the smallest split.
inline AnsResult ans(const IncrementSeries& increments, double theta_hat, const SplitPlan& plan) {
  const int m = increments.count();
  require(m >= 8, ErrorKind::insufficient_data, "ANS needs at least 8 increments");
  require(plan.m_tau == m, ErrorKind::dimension_mismatch, "split plan built for a different increment count");
  require(any_nonzero_column(increments.deltas), ErrorKind::degenerate_input, "all increments are zero");
  const auto perms = permutations(m, plan.permutations, plan.seed);

  AnsResult out;
  std::optional<detail::SplitAverage> best;
  if (plan.chosen) {
    require(*plan.chosen >= 1 && *plan.chosen <= m - 1, ErrorKind::invalid_input, "split size out of range");
    best = detail::split_average(increments.deltas, *plan.chosen, perms);
    out.split = *plan.chosen;
    out.criteria.emplace_back(out.split, best->criterion);
  } else {
    std::vector<int> sorted = plan.candidates;
    std::sort(sorted.begin(), sorted.end());
    for (int split : sorted) {
      auto avg = detail::split_average(increments.deltas, split, perms);
      out.criteria.emplace_back(split, avg.criterion);
      if (!best || avg.criterion < best->criterion) {
        best = std::move(avg);
        out.split = split;
      }
    }
  }
  out.estimate = {theta_hat * best->mean_ans, EstimatorTag::shrunk_ans, theta_hat};
  return out;
}

// ---------------------------------------------------------------------------
// MNS: spot estimates along fixed eigen-directions
// ---------------------------------------------------------------------------

inline int default_kn(int n, double vartheta = 0.75) {
  return static_cast<int>(std::floor(vartheta * std::sqrt(static_cast<double>(n))));
}

/// Bias-corrected pre-averaged realized variance of one scalar series with
/// weights g(x) = min(x, 1 - x):
///   (12/k) sum_i (sum_{j<k} g(j/k) dy_{i+j})^2 - 6/(vartheta^2 n) sum dy^2,
/// dy_m = y_{m+1} - y_m. May be negative in finite samples.
inline double apa_spot(std::span<const double> series, int n, int kn, double vartheta) {
  require(kn >= 2 && 2 * kn <= n, ErrorKind::invalid_window, "k_n must satisfy 2 <= k_n <= n/2");
  require(static_cast<int>(series.size()) >= kn + 2, ErrorKind::insufficient_data,
          "series shorter than k_n + 2");
  require(vartheta > 0.0, ErrorKind::invalid_input, "vartheta must be positive");
  const int len = static_cast<int>(series.size());
  std::vector<double> dy(len - 1);
  for (int m = 0; m + 1 < len; ++m) dy[m] = series[m + 1] - series[m];
  std::vector<double> g(kn);
  for (int j = 1; j < kn; ++j) {
    const double x = static_cast<double>(j) / kn;
    g[j] = std::min(x, 1.0 - x);
  }
  double preavg = 0.0;
  for (int i = 0; i + kn - 1 <= len - 2; ++i) {
    double s = 0.0;
    for (int j = 1; j < kn; ++j) s += g[j] * dy[i + j];
    preavg += s * s;
  }
  double rv = 0.0;
  for (double v : dy) rv += v * v;
  return 12.0 / kn * preavg - 6.0 / (vartheta * vartheta * n) * rv;
}

/// U diag(max(d_APA, 0)) U^T with d_APA from today's stamp averages projected
/// on each eigenvector.
inline CovEstimate mns(const SpectralDecomp& decomp, const StampAverages& today, int kn, double vartheta) {
  require(today.days == 1, ErrorKind::invalid_input, "MNS takes one day of stamp averages");
  require(today.p == decomp.p(), ErrorKind::dimension_mismatch, "eigenvectors and averages disagree");
  const Matrix projected = decomp.vectors.transpose() * today.values;  // p x n
  Vector d(decomp.p());
  std::vector<double> row(today.n);
  for (int k = 0; k < decomp.p(); ++k) {
    for (int i = 0; i < today.n; ++i) row[i] = projected(k, i);
    d(k) = std::max(0.0, apa_spot(row, today.n, kn, vartheta));
  }
  return {reconstruct(decomp, d), EstimatorTag::shrunk_mns, std::nullopt};
}

/// ||Q - ICV||_F / ||ICV||_F.
inline double rfl(const Matrix& estimate, const Matrix& icv) {
  require(estimate.rows() == icv.rows() && estimate.cols() == icv.cols(), ErrorKind::dimension_mismatch,
          "estimate and target dimensions differ");
  const double norm = icv.norm();
  require(norm > 0.0, ErrorKind::degenerate_input, "zero target matrix");
  return (estimate - icv).norm() / norm;
}

}  // namespace hdicv::shrink
