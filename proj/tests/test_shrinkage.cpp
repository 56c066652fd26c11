#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hdicv/market_sim.hpp"
#include "hdicv/shrinkage.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hdicv;
using namespace hdicv::shrink;
using namespace hdicv::oracles;

namespace {

IncrementSeries series_from(const Matrix& deltas) {
  IncrementSeries s;
  s.deltas = deltas;
  s.parity = Parity::preaveraged;
  s.per_day = static_cast<int>(deltas.cols());
  s.days = 1;
  return s;
}

}  // namespace

TEST(Decompose, OrthogonalAndDescending) {
  const Matrix a = fixtures::random_spd(12, 1);
  const auto d = decompose(a);
  EXPECT_LE((d.vectors.transpose() * d.vectors - Matrix::Identity(12, 12)).norm(), 1e-10 * 12);
  for (int k = 1; k < 12; ++k) EXPECT_GE(d.values(k - 1), d.values(k));
  EXPECT_LE((reconstruct(d, d.values) - a).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OracleNs, IdentityEigenvectorsGiveDiagonal) {
  const Matrix sb = fixtures::random_spd(5, 2);
  const SpectralDecomp d{Matrix::Identity(5, 5), Vector::LinSpaced(5, 5.0, 1.0)};
  const auto est = oracle_ns(d, sb, 1.7);
  EXPECT_TRUE(est.matrix.isApprox(Matrix(1.7 * sb.diagonal().asDiagonal())));
  EXPECT_EQ(est.tag, EstimatorTag::shrunk_ns);
  EXPECT_DOUBLE_EQ(*est.theta_hat, 1.7);
}

TEST(OracleNs, IdentityTargetAnyRotation) {
  const auto d = decompose(fixtures::random_spd(6, 3));
  const auto est = oracle_ns(d, Matrix::Identity(6, 6), 2.0);
  EXPECT_LE((est.matrix - 2.0 * Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OracleNs, FrobeniusProjectionOptimality) {
  Rng rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int p = 2 + trial;
    const auto d = decompose(fixtures::random_spd(p, 100 + trial));
    const Matrix sb = fixtures::random_spd(p, 200 + trial);
    const Matrix best = oracle_ns(d, sb, 1.0).matrix;
    const double loss = (best - sb).norm();
    const Vector dor = projected_diagonal(d.vectors, sb);
    for (int k = 0; k < 100; ++k) {
      Vector pert = dor;
      for (int i = 0; i < p; ++i) pert(i) += 0.1 * normal(rng);
      EXPECT_LE(loss, (reconstruct(d, pert) - sb).norm() + 1e-12);
    }
  }
}

TEST(OracleNs, RotationEquivariance) {
  const int p = 7;
  const Matrix xi = fixtures::random_spd(p, 9), sb = fixtures::random_spd(p, 10);
  const Matrix q = fixtures::random_orthogonal(p, 11);
  const Matrix a = oracle_ns(decompose(xi), sb, 1.3).matrix;
  const Matrix b = oracle_ns(decompose(q * xi * q.transpose()), q * sb * q.transpose(), 1.3).matrix;
  EXPECT_LE((q * a * q.transpose() - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OracleNs, ExternalValuesHookAndErrors) {
  const auto d = decompose(fixtures::random_spd(4, 12));
  const Vector vals = Vector::Constant(4, 3.0);
  EXPECT_LE((ns_with_values(d, vals, 0.5).matrix - 1.5 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(ns_with_values(d, Vector::Ones(3), 1.0), Error);
  EXPECT_THROW(oracle_ns(d, Matrix::Identity(3, 3), 1.0), Error);
}

TEST(CandidateSet, RoundClampDeduplicate) {
  // M = 92: 2 sqrt(92) = 19.18, 0.2 M = 18.4, ..., M - 1.5 sqrt(92) = 77.61
  EXPECT_EQ(candidate_set(92), (std::vector<int>{19, 18, 37, 55, 74, 68, 78}));
  EXPECT_EQ(candidate_set(8), (std::vector<int>{6, 2, 3, 5, 6, 2, 4}));
  const auto plan = make_split_plan(8, 5, 1);
  EXPECT_EQ(plan.candidates, (std::vector<int>{6, 2, 3, 5, 4}));
  for (int m = 8; m < 300; ++m)
    for (int c : candidate_set(m)) {
      EXPECT_GE(c, 2);
      EXPECT_LE(c, m - 2);
    }
  EXPECT_THROW(make_split_plan(7, 5, 1), Error);
  EXPECT_THROW(make_split_plan(8, 0, 1), Error);
}

TEST(Ans, RankOneIncrementsReproduceSecondSplit) {
  const Vector v = (Vector(3) << 1.0, -2.0, 0.5).finished();
  Matrix deltas(3, 10);
  for (int k = 0; k < 10; ++k) deltas.col(k) = (k % 2 ? 1.0 : -1.5) * v;
  auto plan = make_split_plan(10, 1, 3);
  const auto res = ans(series_from(deltas), 0.8, plan);
  const Matrix xi2 = 3.0 * v * v.transpose() / v.squaredNorm();
  EXPECT_LE((res.estimate.matrix - 0.8 * xi2).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(res.estimate.tag, EstimatorTag::shrunk_ans);
}

TEST(Ans, MatchesBruteForceTwoByTwo) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Matrix deltas = fixtures::random_normal(2, 8, seed);
    const auto plan = make_split_plan(8, 7, seed * 13);
    const auto perms = permutations(8, 7, seed * 13);
    const auto res = ans(series_from(deltas), 1.0, plan);
    double best = 0.0;
    int best_split = 0;
    for (int split : {2, 3, 4, 5, 6}) {
      const auto b = brute_ans(deltas, split, perms);
      if (best_split == 0 || b.criterion < best) {
        best = b.criterion;
        best_split = split;
      }
      for (const auto& [c, v] : res.criteria) {
        if (c == split) {
          EXPECT_NEAR(v, b.criterion, 1e-11 * std::max(1.0, b.criterion));
        }
      }
    }
    EXPECT_EQ(res.split, best_split);
    const auto b = brute_ans(deltas, best_split, perms);
    EXPECT_LE((res.estimate.matrix - b.mean).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Ans, FixedSplitSymmetricPsdDeterministic) {
  const Matrix deltas = fixtures::random_normal(6, 30, 77);
  auto plan = make_split_plan(30, 20, 4);
  plan.chosen = 12;
  const auto a = ans(series_from(deltas), 2.0, plan);
  const auto b = ans(series_from(deltas), 2.0, plan);
  EXPECT_TRUE(a.estimate.matrix == b.estimate.matrix);
  EXPECT_EQ(a.split, 12);
  EXPECT_TRUE(is_symmetric(a.estimate.matrix, 1e-14));
  EXPECT_GE(fixtures::min_eigenvalue(a.estimate.matrix), -1e-12);
  plan.seed = 5;
  EXPECT_FALSE(ans(series_from(deltas), 2.0, plan).estimate.matrix == a.estimate.matrix);
}

TEST(Ans, InvariantToIncrementLabelingWithinSplit) {
  // Reordering columns then permuting with the matching composite permutation
  // leaves every split's index set unchanged.
  const Matrix deltas = fixtures::random_normal(3, 12, 8);
  const auto perms = permutations(12, 4, 21);
  const auto base = shrink::detail::split_average(deltas, 5, perms);
  std::vector<std::vector<int>> shuffled = perms;
  for (auto& perm : shuffled) {
    std::reverse(perm.begin(), perm.begin() + 5);
    std::reverse(perm.begin() + 5, perm.end());
  }
  const auto again = shrink::detail::split_average(deltas, 5, shuffled);
  EXPECT_LE((base.mean_ans - again.mean_ans).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Ans, ErrorsOnTooFewIncrements) {
  SplitPlan plan{7, {2, 3, 4, 5}, std::nullopt, 2, 1};
  try {
    ans(series_from(fixtures::random_normal(2, 7, 1)), 1.0, plan);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_data);
  }
}

TEST(ApaSpot, ConstantSeriesIsZero) {
  const std::vector<double> y(1000, 3.25);
  EXPECT_EQ(apa_spot(y, 1000, default_kn(1000), 0.75), 0.0);
}

TEST(ApaSpot, HandComputedSmallCase) {
  // n = 8, k = 3: g(1/3) = 1/3, g(2/3) = 1/3
  const std::vector<double> y{0.0, 1.0, 3.0, 2.0, 2.0, 4.0, 5.0, 3.0};
  std::vector<double> dy;
  for (int m = 0; m + 1 < 8; ++m) dy.push_back(y[m + 1] - y[m]);
  double pre = 0.0, rv = 0.0;
  for (int i = 0; i + 2 <= 6; ++i) {
    const double s = (dy[i + 1] + dy[i + 2]) / 3.0;
    pre += s * s;
  }
  for (double v : dy) rv += v * v;
  const double expected = 12.0 / 3.0 * pre - 6.0 / (0.5 * 0.5 * 8) * rv;
  EXPECT_NEAR(apa_spot(y, 8, 3, 0.5), expected, 1e-13);
}

TEST(ApaSpot, Errors) {
  const std::vector<double> y(10, 0.0);
  EXPECT_THROW(apa_spot(y, 10, 1, 0.75), Error);
  EXPECT_THROW(apa_spot(y, 10, 6, 0.75), Error);
  EXPECT_THROW(apa_spot(std::vector<double>(4, 0.0), 10, 3, 0.75), Error);
}

TEST(ApaSpot, UnitVolatilityBrownianPath) {
  const int n = 23400;
  const int kn = default_kn(n);
  ASSERT_EQ(kn, 114);
  Rng rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  // one path has a relative spread near 7%, so the 10% band applies to the mean
  double mean = 0.0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> y(n);
    double x = 0.0;
    for (int i = 0; i < n; ++i) {
      x += normal(rng) / std::sqrt(static_cast<double>(n));
      y[i] = x;
    }
    const double v = apa_spot(y, n, kn, 0.75);
    EXPECT_NEAR(v, 1.0, 0.3);
    mean += v / reps;
  }
  EXPECT_NEAR(mean, 1.0, 0.1);
}

TEST(ApaSpot, PureNoiseBiasCancels) {
  const int n = 23400, reps = 200;
  const int kn = default_kn(n);
  const double v = 0.0002;
  Rng rng(7);
  std::normal_distribution<double> normal(0.0, std::sqrt(v));
  std::vector<double> y(n), out;
  for (int r = 0; r < reps; ++r) {
    for (auto& e : y) e = normal(rng);
    out.push_back(apa_spot(y, n, kn, 0.75));
  }
  double mean = 0.0, ss = 0.0;
  for (double o : out) mean += o / reps;
  for (double o : out) ss += (o - mean) * (o - mean);
  const double se = std::sqrt(ss / (reps - 1) / reps);
  EXPECT_LE(std::abs(mean), 3.0 * se);
}

TEST(Mns, IdentityEigenvectorsDiagonalIcv) {
  const int p = 12, n = 23400;
  const Matrix lambda = Vector::LinSpaced(p, 0.5, 2.0).asDiagonal();
  const auto clock = sim::generate_clock(sim::ClockSpec::constant(1), n, p, 1, 3);
  const auto paths = sim::simulate_paths(lambda, sim::GammaSpec::constant(1.0), clock, {}, 4);
  const auto avgs = stamp_average(paths.latent);
  const SpectralDecomp d{Matrix::Identity(p, p), Vector::LinSpaced(p, 12.0, 1.0)};
  const auto est = mns(d, avgs, default_kn(n), 0.75);
  const Matrix& icv = paths.day_paths[0].realized_icv;
  double mean_ratio = 0.0;
  for (int q = 0; q < p; ++q) {
    EXPECT_NEAR(est.matrix(q, q) / icv(q, q), 1.0, 0.3);
    mean_ratio += est.matrix(q, q) / icv(q, q) / p;
  }
  EXPECT_NEAR(mean_ratio, 1.0, 0.1);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b)
      if (a != b) {
        EXPECT_EQ(est.matrix(a, b), 0.0);
      }
  EXPECT_EQ(est.tag, EstimatorTag::shrunk_mns);
}

TEST(Mns, NegativeSpotValuesFloored) {
  // Alternating series: the bias correction overshoots and the raw value is negative.
  const int n = 400;
  StampAverages avgs{1, n, 1, Matrix(1, n)};
  for (int i = 0; i < n; ++i) avgs.values(0, i) = i % 2 ? 1.0 : -1.0;
  std::vector<double> row(avgs.values.data(), avgs.values.data() + n);
  ASSERT_LT(apa_spot(row, n, 10, 0.75), 0.0);
  const SpectralDecomp d{Matrix::Identity(1, 1), Vector::Ones(1)};
  EXPECT_EQ(mns(d, avgs, 10, 0.75).matrix(0, 0), 0.0);
}

TEST(Rfl, Homogeneity) {
  const Matrix icv = fixtures::random_spd(5, 3);
  EXPECT_EQ(rfl(icv, icv), 0.0);
  EXPECT_NEAR(rfl(2.0 * icv, icv), 1.0, 1e-15);
  EXPECT_NEAR(rfl(Matrix::Zero(5, 5), icv), 1.0, 1e-15);
  EXPECT_THROW(rfl(icv, Matrix::Zero(5, 5)), Error);
  EXPECT_THROW(rfl(Matrix::Zero(4, 4), icv), Error);
}
