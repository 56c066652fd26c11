#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "hdicv/common.hpp"

namespace hdicv::spectral {

using Complex = std::complex<double>;

/// Empirical spectral distribution F(x) = #{lambda_j <= x} / p.
struct ESD {
  std::vector<double> eigenvalues;  ///< ascending

  int p() const { return static_cast<int>(eigenvalues.size()); }

  double cdf(double x) const {
    const auto it = std::upper_bound(eigenvalues.begin(), eigenvalues.end(), x);
    return static_cast<double>(it - eigenvalues.begin()) / static_cast<double>(eigenvalues.size());
  }
};

inline ESD esd(const Matrix& a) {
  require(a.rows() == a.cols() && a.rows() >= 1, ErrorKind::invalid_input, "ESD needs a square matrix");
  require(is_symmetric(a, 1e-10), ErrorKind::invalid_input, "ESD needs a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorKind::convergence, "symmetric eigensolver failed");
  const Vector& v = es.eigenvalues();
  ESD out{{v.data(), v.data() + v.size()}};
  std::sort(out.eigenvalues.begin(), out.eigenvalues.end());
  return out;
}

struct EsdGridPoint {
  double x;
  double f1;
  double f2;
};

/// Both step functions on 2p equally spaced points spanning the joint range of
/// the two spectra.
inline std::vector<EsdGridPoint> esd_grid(const ESD& e1, const ESD& e2) {
  require(e1.p() == e2.p() && e1.p() >= 1, ErrorKind::dimension_mismatch, "ESDs must share dimension");
  const int points = 2 * e1.p();
  const double lo = std::min(e1.eigenvalues.front(), e2.eigenvalues.front());
  const double hi = std::max(e1.eigenvalues.back(), e2.eigenvalues.back());
  std::vector<EsdGridPoint> grid;
  grid.reserve(points);
  for (int k = 0; k < points; ++k) {
    const double x = k + 1 == points ? hi : lo + (hi - lo) * k / (points - 1);
    grid.push_back({x, e1.cdf(x), e2.cdf(x)});
  }
  return grid;
}

inline double max_esd_distance(const ESD& e1, const ESD& e2) {
  double best = 0.0;
  for (const auto& g : esd_grid(e1, e2)) best = std::max(best, std::abs(g.f1 - g.f2));
  return best;
}

/// Discrete probability measure sum_k w_k delta_{tau_k}.
struct DiscreteMeasure {
  std::vector<double> support;
  std::vector<double> weights;

  static DiscreteMeasure point_mass(double at) { return {{at}, {1.0}}; }

  static DiscreteMeasure uniform(std::vector<double> points) {
    require(!points.empty(), ErrorKind::invalid_input, "empty support");
    const double w = 1.0 / static_cast<double>(points.size());
    std::vector<double> weights(points.size(), w);
    return {std::move(points), std::move(weights)};
  }

  /// Uniform measure on the eigenvalues of a symmetric matrix.
  static DiscreteMeasure from_spectrum(const Matrix& a) { return uniform(esd(a).eigenvalues); }

  void validate() const {
    require(!support.empty() && support.size() == weights.size(), ErrorKind::invalid_input,
            "measure support and weights disagree");
    double total = 0.0;
    for (double w : weights) {
      require(w >= 0.0, ErrorKind::invalid_input, "measure weights must be non-negative");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-12, ErrorKind::invalid_input, "measure weights must sum to one");
  }
};

struct MpOptions {
  double tol = 1e-10;
  int max_iter = 200000;
  double damping = 0.5;
  /// Multiplies every support point: tau -> scale * tau.
  double scale = 1.0;
  /// Starting value; -1/z when empty.
  std::optional<Complex> start;
};

struct MPSolution {
  Complex z;
  Complex m;
  double residual = 0.0;
  int iterations = 0;
};

/// Right-hand side of m = int dH(tau) / (s tau (1 - c (1 + z m)) - z).
inline Complex mp_map(const DiscreteMeasure& h, double c, Complex z, Complex m, double scale = 1.0) {
  const Complex k = 1.0 - c * (1.0 + z * m);
  Complex sum = 0.0;
  for (std::size_t j = 0; j < h.support.size(); ++j) sum += h.weights[j] / (scale * h.support[j] * k - z);
  return sum;
}

/// Companion map u -> -1 / (z - c int s tau dH / (1 + s tau u)), where
/// u = -(1 - c)/z + c m. It sends the upper half plane into itself.
inline Complex mp_companion_map(const DiscreteMeasure& h, double c, Complex z, Complex u, double scale = 1.0) {
  Complex sum = 0.0;
  for (std::size_t j = 0; j < h.support.size(); ++j) {
    const double t = scale * h.support[j];
    sum += h.weights[j] * t / (1.0 + t * u);
  }
  return -1.0 / (z - c * sum);
}

/// Stieltjes transform of the Marcenko-Pastur limit for population measure H
/// and ratio c. The damped fixed-point iteration runs on the companion
/// transform (the direct form can settle on a root with Im m < 0 when c > 1);
/// convergence is judged by plugging m back into the direct equation.
inline MPSolution mp_stieltjes(const DiscreteMeasure& h, double c, Complex z, const MpOptions& opt = {}) {
  h.validate();
  require(c > 0.0, ErrorKind::invalid_input, "dimension ratio must be positive");
  require(z.imag() > 0.0, ErrorKind::invalid_input, "query point must lie in the upper half plane");
  require(opt.damping > 0.0 && opt.damping <= 1.0, ErrorKind::invalid_input, "damping must lie in (0, 1]");

  const Complex shift = -(1.0 - c) / z;
  auto to_m = [&](Complex u) { return (u - shift) / c; };
  MPSolution out{z, opt.start ? *opt.start : -1.0 / z, 0.0, 0};
  Complex u = shift + c * out.m;
  double step_tol = opt.tol * std::min(1.0, c) * 0.1;
  for (int it = 1; it <= opt.max_iter; ++it) {
    const Complex next = mp_companion_map(h, c, z, u, opt.scale);
    const double step = std::abs(next - u);
    u = (1.0 - opt.damping) * u + opt.damping * next;
    out.iterations = it;
    if (step <= step_tol) {
      out.m = to_m(u);
      out.residual = std::abs(mp_map(h, c, z, out.m, opt.scale) - out.m);
      if (out.residual <= opt.tol && out.m.imag() > 0.0) return out;
      step_tol = std::max(step_tol * 0.1, 1e-300);
    }
  }
  out.m = to_m(u);
  out.residual = std::abs(mp_map(h, c, z, out.m, opt.scale) - out.m);
  throw Error(ErrorKind::convergence,
              "Marcenko-Pastur iteration did not converge; last residual " + std::to_string(out.residual));
}

/// Density f(x) = Im m(x + i eta) / pi along a grid. Each point is started
/// from the previous point's solution.
inline std::vector<double> mp_density(const DiscreteMeasure& h, double c, const std::vector<double>& grid,
                                      double eta, MpOptions opt = {}) {
  require(eta > 0.0, ErrorKind::invalid_input, "eta must be positive");
  std::vector<double> out;
  out.reserve(grid.size());
  std::optional<Complex> warm;
  for (double x : grid) {
    opt.start = warm;
    const auto sol = mp_stieltjes(h, c, Complex(x, eta), opt);
    warm = sol.m;
    out.push_back(sol.m.imag() / std::numbers::pi);
  }
  return out;
}

/// Symmetric PSD square root through the spectral decomposition.
inline Matrix psd_sqrt(const Matrix& a) {
  require(is_symmetric(a, 1e-10), ErrorKind::invalid_input, "square root needs a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(a));
  const Vector& v = es.eigenvalues();
  const double floor = -1e-10 * std::max(std::abs(a.trace()) / a.rows(), std::numeric_limits<double>::min());
  require(v.minCoeff() >= floor, ErrorKind::invalid_input, "matrix is not positive semi-definite");
  const Vector root = v.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// S = (1/m) sum_i A Z_i Z_i^T A with A = icv^{1/2}, Z_i iid N(0, I_p).
inline Matrix sample_cov_reference(const Matrix& icv, int m, std::uint64_t seed) {
  require(m >= 1, ErrorKind::invalid_input, "sample count must be positive");
  const Matrix root = psd_sqrt(icv);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(icv.rows(), m);
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = normal(rng);
  const Matrix x = root * z;
  Matrix s = Matrix::Zero(icv.rows(), icv.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0 / m);
  return s.selfadjointView<Eigen::Lower>();
}

}  // namespace hdicv::spectral
