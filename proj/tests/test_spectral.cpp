#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hdicv/spectral.hpp"
#include "test_util.hpp"

using namespace hdicv;
using namespace hdicv::spectral;

namespace {

// Stieltjes transform of the MP law with H = delta_1: root of
// c z m^2 - (1 - c - z) m + 1 = 0 in the upper half plane.
Complex closed_form_m(double c, Complex z) {
  const Complex b = 1.0 - c - z;
  const Complex disc = std::sqrt(b * b - 4.0 * c * z);
  const Complex r1 = (b + disc) / (2.0 * c * z);
  const Complex r2 = (b - disc) / (2.0 * c * z);
  return r1.imag() > 0.0 ? r1 : r2;
}

double closed_form_density(double c, double x) {
  const double lo = std::pow(1.0 - std::sqrt(c), 2), hi = std::pow(1.0 + std::sqrt(c), 2);
  if (x <= lo || x >= hi) return 0.0;
  return std::sqrt((hi - x) * (x - lo)) / (2.0 * std::numbers::pi * c * x);
}

}  // namespace

TEST(Esd, StepFunction) {
  Matrix a = Vector((Vector(4) << 3.0, 1.0, 2.0, 2.0).finished()).asDiagonal();
  const auto e = esd(a);
  EXPECT_EQ(e.eigenvalues, (std::vector<double>{1.0, 2.0, 2.0, 3.0}));
  EXPECT_DOUBLE_EQ(e.cdf(0.5), 0.0);
  EXPECT_DOUBLE_EQ(e.cdf(1.0), 0.25);
  EXPECT_DOUBLE_EQ(e.cdf(2.0), 0.75);
  EXPECT_DOUBLE_EQ(e.cdf(2.5), 0.75);
  EXPECT_DOUBLE_EQ(e.cdf(3.0), 1.0);
}

TEST(Esd, MonotoneAndScaleCovariant) {
  const Matrix a = fixtures::random_spd(20, 3);
  const auto e = esd(a);
  const auto k = esd(4.0 * a);
  for (int j = 0; j < 20; ++j) EXPECT_NEAR(k.eigenvalues[j], 4.0 * e.eigenvalues[j], 1e-12 * k.eigenvalues.back());
  double prev = 0.0;
  for (double x = e.eigenvalues.front() - 1.0; x < e.eigenvalues.back() + 1.0; x += 0.01) {
    EXPECT_GE(e.cdf(x), prev);
    prev = e.cdf(x);
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(Esd, RejectsAsymmetric) {
  Matrix a(2, 2);
  a << 1.0, 2.0, 0.0, 1.0;
  EXPECT_THROW(esd(a), Error);
}

TEST(Esd, DistanceGridAndValues) {
  const auto a = esd(Matrix(Vector((Vector(2) << 1.0, 2.0).finished()).asDiagonal()));
  const auto b = esd(Matrix(Vector((Vector(2) << 1.5, 3.0).finished()).asDiagonal()));
  const auto grid = esd_grid(a, b);
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_DOUBLE_EQ(grid.front().x, 1.0);
  EXPECT_DOUBLE_EQ(grid.back().x, 3.0);
  EXPECT_NEAR(grid[1].x, 1.0 + 2.0 / 3.0, 1e-15);
  // x = 1: F1 = .5, F2 = 0; x = 5/3: F1 = .5, F2 = .5; x = 7/3: 1 vs .5
  EXPECT_DOUBLE_EQ(max_esd_distance(a, b), 0.5);
  EXPECT_DOUBLE_EQ(max_esd_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(max_esd_distance(a, b), max_esd_distance(b, a));
}

TEST(Esd, DisjointSpectraGiveDistanceOne) {
  const auto a = esd(Matrix::Identity(5, 5));
  const auto b = esd(Matrix(3.0 * Matrix::Identity(5, 5)));
  EXPECT_DOUBLE_EQ(max_esd_distance(a, b), 1.0);
}

TEST(Measure, Validation) {
  EXPECT_NO_THROW(DiscreteMeasure::point_mass(1.0).validate());
  EXPECT_THROW((DiscreteMeasure{{1.0, 2.0}, {0.5}}).validate(), Error);
  EXPECT_THROW((DiscreteMeasure{{1.0, 2.0}, {0.7, 0.7}}).validate(), Error);
  EXPECT_THROW((DiscreteMeasure{{1.0, 2.0}, {1.5, -0.5}}).validate(), Error);
  const auto u = DiscreteMeasure::from_spectrum(Matrix::Identity(4, 4));
  EXPECT_EQ(u.support.size(), 4u);
  EXPECT_DOUBLE_EQ(u.weights[0], 0.25);
}

TEST(MarcenkoPastur, MatchesClosedFormStieltjes) {
  const auto h = DiscreteMeasure::point_mass(1.0);
  for (double c : {0.1, 0.5, 0.9, 2.0}) {
    for (double x : {0.05, 0.3, 1.0, 2.0, 4.0}) {
      for (double eta : {1.0, 0.1, 1e-2}) {
        const Complex z(x, eta);
        const auto sol = mp_stieltjes(h, c, z);
        EXPECT_LE(sol.residual, 1e-10);
        EXPECT_GT(sol.m.imag(), 0.0);
        EXPECT_LE(std::abs(sol.m - closed_form_m(c, z)), 1e-8) << "c=" << c << " x=" << x << " eta=" << eta;
      }
    }
  }
}

TEST(MarcenkoPastur, DensityAtOneHalfRatio) {
  // Closed form at c = 1/2: sqrt((l+ - 1)(1 - l-)) / pi = 0.42107...
  EXPECT_NEAR(closed_form_density(0.5, 1.0), 0.42107, 1e-4);
  const auto f = mp_density(DiscreteMeasure::point_mass(1.0), 0.5, {1.0}, 1e-4);
  EXPECT_NEAR(f[0], closed_form_density(0.5, 1.0), 1e-3);
}

TEST(MarcenkoPastur, ScaleParameterStretchesTheLaw) {
  // H = delta_s has the law of s times the delta_1 law, so m_s(z) = m_1(z/s)/s.
  const auto h = DiscreteMeasure::point_mass(1.0);
  MpOptions opt;
  opt.scale = 2.0;
  const Complex z(1.3, 0.05);
  const auto a = mp_stieltjes(h, 0.3, z, opt);
  const auto b = mp_stieltjes(DiscreteMeasure::point_mass(2.0), 0.3, z);
  const auto ref = mp_stieltjes(h, 0.3, z / 2.0);
  EXPECT_LE(std::abs(a.m - b.m), 1e-9);
  EXPECT_LE(std::abs(a.m - ref.m / 2.0), 1e-9);
}

TEST(MarcenkoPastur, TwoPointMeasurePlugBack) {
  const DiscreteMeasure h{{1.0, 4.0}, {0.5, 0.5}};
  for (double x = 0.2; x < 10.0; x += 0.7) {
    const Complex z(x, 1e-2);
    const auto sol = mp_stieltjes(h, 0.2, z);
    EXPECT_LE(std::abs(mp_map(h, 0.2, z, sol.m) - sol.m), 1e-10);
    EXPECT_GT(sol.m.imag(), 0.0);
  }
}

TEST(MarcenkoPastur, ReportsNonConvergence) {
  MpOptions opt;
  opt.max_iter = 3;
  try {
    mp_stieltjes(DiscreteMeasure::point_mass(1.0), 0.5, Complex(1.0, 1e-3), opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::convergence);
    EXPECT_TRUE(e.numerical());
  }
  EXPECT_THROW(mp_stieltjes(DiscreteMeasure::point_mass(1.0), 0.5, Complex(1.0, 0.0)), Error);
  EXPECT_THROW(mp_stieltjes(DiscreteMeasure::point_mass(1.0), -0.5, Complex(1.0, 0.1)), Error);
}

TEST(Reference, PsdSqrt) {
  const Matrix a = fixtures::random_spd(8, 5);
  const Matrix r = psd_sqrt(a);
  EXPECT_LE((r * r - a).cwiseAbs().maxCoeff(), 1e-12);
  Matrix neg = -Matrix::Identity(2, 2);
  EXPECT_THROW(psd_sqrt(neg), Error);
}

TEST(Reference, SampleCovarianceDeterministicAndUnbiased) {
  const Matrix icv = fixtures::random_spd(4, 6);
  EXPECT_TRUE(sample_cov_reference(icv, 10, 3) == sample_cov_reference(icv, 10, 3));
  EXPECT_FALSE(sample_cov_reference(icv, 10, 3) == sample_cov_reference(icv, 10, 4));
  const Matrix big = sample_cov_reference(icv, 200000, 7);
  EXPECT_LE((big - icv).cwiseAbs().maxCoeff(), 0.02 * icv.cwiseAbs().maxCoeff());
  EXPECT_TRUE(is_symmetric(big, 0.0));
}
