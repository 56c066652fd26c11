#pragma once

#include <random>
#include <vector>

#include "hdicv/common.hpp"
#include "hdicv/panel.hpp"

namespace hdicv::fixtures {

/// Small panel with random counts in [1, max_l] (or all equal when `sync`) and
/// normal prices.
inline TickPanel random_panel(int p, int n, int days, int max_l, std::uint64_t seed, bool sync = false) {
  Rng rng(seed);
  std::uniform_int_distribution<int> count(1, max_l);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<int> counts;
  std::vector<double> prices;
  for (int d = 0; d < days; ++d)
    for (int i = 0; i < n; ++i) {
      const int shared = count(rng);
      for (int q = 0; q < p; ++q) {
        const int l = sync ? shared : count(rng);
        counts.push_back(l);
        for (int j = 0; j < l; ++j) prices.push_back(normal(rng));
      }
    }
  return {p, n, days, std::move(counts), std::move(prices)};
}

inline Matrix random_spd(int p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(p, p + 3);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = normal(rng);
  return a * a.transpose() / static_cast<double>(a.cols());
}

inline Matrix random_normal(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

inline Matrix random_orthogonal(int p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(p, p);
}

inline double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

}  // namespace hdicv::fixtures
