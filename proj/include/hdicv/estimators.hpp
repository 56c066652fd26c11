#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hdicv/common.hpp"
#include "hdicv/market_sim.hpp"
#include "hdicv/panel.hpp"

// Covariance estimators on stamp-averaged multi-transaction data. Multi-day
// inputs are pooled: increments never straddle days, and every scale factor
// is reported per day (sums over all days divided by the day count).

namespace hdicv {

enum class EstimatorTag {
  rcv,
  tva,
  atva,
  a_atva,
  pa_atva,
  pa_atva_async,
  shrunk_ns,
  shrunk_ans,
  shrunk_mns,
};

inline const char* to_string(EstimatorTag tag) {
  switch (tag) {
    case EstimatorTag::rcv: return "rcv";
    case EstimatorTag::tva: return "tva";
    case EstimatorTag::atva: return "atva";
    case EstimatorTag::a_atva: return "a_atva";
    case EstimatorTag::pa_atva: return "pa_atva";
    case EstimatorTag::pa_atva_async: return "pa_atva_async";
    case EstimatorTag::shrunk_ns: return "shrunk_ns";
    case EstimatorTag::shrunk_ans: return "shrunk_ans";
    case EstimatorTag::shrunk_mns: return "shrunk_mns";
  }
  return "unknown";
}

struct CovEstimate {
  Matrix matrix;
  EstimatorTag tag = EstimatorTag::rcv;
  std::optional<double> theta_hat;
};

/// Per-stamp averaged prices; column d * n + i holds stamp i of day d.
struct StampAverages {
  int p = 0;
  int n = 0;
  int days = 0;
  Matrix values;

  auto day(int d) const { return values.middleCols(static_cast<Eigen::Index>(d) * n, n); }
};

enum class Parity { all, even, preaveraged };

struct IncrementSeries {
  Matrix deltas;  ///< p x count, one increment per column
  Parity parity = Parity::all;
  int window = 1;             ///< pre-averaging window h (1 otherwise)
  int per_day = 0;            ///< increments per day (N, M, or n - 1)
  int days = 0;

  int p() const { return static_cast<int>(deltas.rows()); }
  int count() const { return static_cast<int>(deltas.cols()); }
};

inline StampAverages stamp_average(const TickPanel& panel) {
  StampAverages out{panel.p(), panel.n(), panel.days(), Matrix(panel.p(), panel.n() * panel.days())};
  for (int d = 0; d < panel.days(); ++d)
    for (int i = 0; i < panel.n(); ++i)
      for (int q = 0; q < panel.p(); ++q) {
        const auto prices = panel.prices(d, i, q);
        double s = 0.0;
        for (double v : prices) s += v;
        out.values(q, d * panel.n() + i) = s / static_cast<double>(prices.size());
      }
  return out;
}

/// Stamp-to-stamp increments within each day. `even` keeps the non-overlapping
/// pairs (stamp 2i minus stamp 2i-1, 1-based), N = floor(n/2) per day; `all`
/// gives the n - 1 consecutive differences.
inline IncrementSeries increments(const StampAverages& avgs, Parity parity) {
  require(avgs.n >= 2, ErrorKind::insufficient_data, "need at least two stamps per day");
  require(parity != Parity::preaveraged, ErrorKind::invalid_input, "use pre_average for pre-averaged increments");
  IncrementSeries out;
  out.parity = parity;
  out.days = avgs.days;
  out.per_day = parity == Parity::even ? avgs.n / 2 : avgs.n - 1;
  out.deltas.resize(avgs.p, static_cast<Eigen::Index>(out.per_day) * avgs.days);
  for (int d = 0; d < avgs.days; ++d) {
    const auto v = avgs.day(d);
    for (int k = 0; k < out.per_day; ++k) {
      const int hi = parity == Parity::even ? 2 * k + 1 : k + 1;
      out.deltas.col(d * out.per_day + k) = v.col(hi) - v.col(hi - 1);
    }
  }
  return out;
}

inline int default_window(int n, double xi = 1.0, double beta = 0.55) {
  return static_cast<int>(std::floor(xi * std::pow(static_cast<double>(n), beta)));
}

/// Pre-averaged increments: h-block means of stamp averages, then differences
/// of consecutive disjoint block pairs; M = floor(n / 2h) per day.
inline IncrementSeries pre_average(const StampAverages& avgs, int h) {
  require(h >= 1 && 2 * h <= avgs.n, ErrorKind::invalid_window,
          "window h=" + std::to_string(h) + " out of range for n=" + std::to_string(avgs.n));
  const int m = avgs.n / (2 * h);
  IncrementSeries out;
  out.parity = Parity::preaveraged;
  out.window = h;
  out.per_day = m;
  out.days = avgs.days;
  out.deltas.resize(avgs.p, static_cast<Eigen::Index>(m) * avgs.days);
  for (int d = 0; d < avgs.days; ++d) {
    const auto v = avgs.day(d);
    for (int i = 0; i < m; ++i) {
      const Vector first = v.middleCols(2 * i * h, h).rowwise().mean();
      const Vector second = v.middleCols((2 * i + 1) * h, h).rowwise().mean();
      out.deltas.col(d * m + i) = second - first;
    }
  }
  return out;
}

/// Sum of self-normalized outer products over the given columns; zero-norm
/// columns contribute nothing.
inline Matrix self_normalized_sum(const Matrix& deltas, const std::vector<int>& columns) {
  Matrix unit(deltas.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto col = deltas.col(columns[k]);
    const double norm = col.norm();
    if (norm > 0.0)
      unit.col(k) = col / norm;
    else
      unit.col(k).setZero();
  }
  Matrix out = Matrix::Zero(deltas.rows(), deltas.rows());
  out.selfadjointView<Eigen::Lower>().rankUpdate(unit);
  return out.selfadjointView<Eigen::Lower>();
}

inline Matrix self_normalized_sum(const Matrix& deltas) {
  std::vector<int> all(deltas.cols());
  for (int k = 0; k < static_cast<int>(all.size()); ++k) all[k] = k;
  return self_normalized_sum(deltas, all);
}

inline bool any_nonzero_column(const Matrix& deltas) {
  for (Eigen::Index k = 0; k < deltas.cols(); ++k)
    if (deltas.col(k).squaredNorm() > 0.0) return true;
  return false;
}

inline double squared_norm_sum(const Matrix& deltas) { return deltas.colwise().squaredNorm().sum(); }

inline CovEstimate rcv(const IncrementSeries& series) {
  require(series.count() >= 1, ErrorKind::insufficient_data, "no increments");
  Matrix out = Matrix::Zero(series.p(), series.p());
  out.selfadjointView<Eigen::Lower>().rankUpdate(series.deltas);
  return {Matrix(out.selfadjointView<Eigen::Lower>()) / series.days, EstimatorTag::rcv, std::nullopt};
}

/// (tr(RCV)/n) * sum of self-normalized outer products, with n the nominal
/// number of increments per day.
inline CovEstimate tva(const IncrementSeries& series) {
  require(series.count() >= 1, ErrorKind::insufficient_data, "no increments");
  require(any_nonzero_column(series.deltas), ErrorKind::degenerate_input, "all increments are zero");
  const double tr_rcv = squared_norm_sum(series.deltas) / series.days;
  Matrix m = (tr_rcv / series.per_day) * self_normalized_sum(series.deltas) / series.days;
  return {std::move(m), EstimatorTag::tva, std::nullopt};
}

struct AtvaResult {
  CovEstimate estimate;
  Matrix sigma_tilde;           ///< (p/N) sum of self-normalized outer products, tr = p
  double squared_norm_sum = 0;  ///< sum |dX_2i|^2 over all days
};

inline AtvaResult atva(const StampAverages& avgs) {
  const auto even = increments(avgs, Parity::even);
  require(even.per_day >= 1, ErrorKind::insufficient_data, "need N >= 1");
  require(any_nonzero_column(even.deltas), ErrorKind::degenerate_input, "all even increments are zero");
  AtvaResult out;
  out.sigma_tilde = (static_cast<double>(avgs.p) / even.count()) * self_normalized_sum(even.deltas);
  out.squared_norm_sum = squared_norm_sum(even.deltas);
  out.estimate = {(out.squared_norm_sum / (static_cast<double>(avgs.p) * avgs.days)) * out.sigma_tilde,
                  EstimatorTag::atva, std::nullopt};
  return out;
}

/// Piecewise transaction-count correction of the ATVA scale (single day,
/// synchronous clock). Breakpoints a_1 < ... < a_K = 1; piece k spans stamps
/// l_{k-1}+1 .. l_k with l_k = floor(n a_k).
inline CovEstimate a_atva(const StampAverages& avgs, const sim::Clock& clock,
                          const std::vector<double>& breakpoints) {
  require(avgs.days == 1, ErrorKind::unsupported, "A-ATVA is defined for a single day");
  require(clock.n == avgs.n && clock.p == avgs.p, ErrorKind::dimension_mismatch, "clock and averages disagree");
  bool sync = clock.synchronous;
  for (int i = 0; i < clock.n && sync; ++i)
    for (int q = 1; q < clock.p; ++q)
      if (clock.count(0, i, q) != clock.count(0, i, 0)) {
        sync = false;
        break;
      }
  require(sync, ErrorKind::unsupported, "A-ATVA requires a synchronous clock");
  require(!breakpoints.empty() && std::abs(breakpoints.back() - 1.0) < 1e-12, ErrorKind::invalid_breakpoints,
          "breakpoints must end at 1");

  const int n = avgs.n;
  std::vector<int> ell{0};
  double prev = 0.0;
  for (double a : breakpoints) {
    require(a > prev && a <= 1.0 + 1e-12, ErrorKind::invalid_breakpoints, "breakpoints must increase in (0, 1]");
    require(n * (a - prev) >= 3.0 - 1e-9, ErrorKind::invalid_breakpoints, "every piece needs at least 3 stamps");
    ell.push_back(static_cast<int>(std::floor(n * a + 1e-9)));
    prev = a;
  }

  const auto atv = atva(avgs);
  const auto even = increments(avgs, Parity::even);
  double scale = 0.0;
  for (std::size_t k = 1; k < ell.size(); ++k) {
    double inv_sq = 0.0;
    for (int j = ell[k - 1] + 1; j <= ell[k]; ++j) {
      const double l = clock.count(0, j - 1, 0);
      inv_sq += 1.0 / (l * l);
    }
    const double factor = 1.0 / (1.0 / 3.0 + inv_sq / (6.0 * (ell[k] - ell[k - 1])));
    double sq = 0.0;
    for (int m = (ell[k - 1] + 1) / 2 + 1; m <= ell[k] / 2; ++m) sq += even.deltas.col(m - 1).squaredNorm();
    scale += factor * sq;
  }
  return {(scale / avgs.p) * atv.sigma_tilde, EstimatorTag::a_atva, std::nullopt};
}

/// Single-piece correction for per-stock counts: 1/L^2 is replaced by its
/// cross-stock mean at each stamp. Not covered by the synchronous limit
/// theory; used to study how far the asynchronous case drifts from it.
inline CovEstimate a_atva_pooled(const StampAverages& avgs, const sim::Clock& clock) {
  require(avgs.days == 1, ErrorKind::unsupported, "A-ATVA is defined for a single day");
  require(clock.n == avgs.n && clock.p == avgs.p, ErrorKind::dimension_mismatch, "clock and averages disagree");
  double inv_sq = 0.0;
  for (int i = 0; i < clock.n; ++i) inv_sq += clock.mean_inv_sq(0, i);
  const double factor = 1.0 / (1.0 / 3.0 + inv_sq / (6.0 * clock.n));
  auto out = atva(avgs).estimate;
  out.matrix *= factor;
  out.tag = EstimatorTag::a_atva;
  return out;
}

/// theta_hat = 3 sum |dY~_2i|^2 / p, per day.
inline double theta_hat(const IncrementSeries& preavg) {
  require(preavg.count() >= 1, ErrorKind::insufficient_data, "no pre-averaged increments");
  return 3.0 * squared_norm_sum(preavg.deltas) / (static_cast<double>(preavg.p()) * preavg.days);
}

/// Xi~ = (p/M) sum of self-normalized outer products over the given series.
inline Matrix xi_tilde(const IncrementSeries& preavg) {
  require(preavg.count() >= 1, ErrorKind::insufficient_data, "no pre-averaged increments");
  require(any_nonzero_column(preavg.deltas), ErrorKind::degenerate_input, "all pre-averaged increments are zero");
  return (static_cast<double>(preavg.p()) / preavg.count()) * self_normalized_sum(preavg.deltas);
}

struct PaAtvaResult {
  CovEstimate estimate;  ///< B_M = theta_hat * Xi~
  Matrix xi_tilde;
  IncrementSeries preavg;
};

inline PaAtvaResult pa_atva(const StampAverages& avgs, int h, bool synchronous = true) {
  PaAtvaResult out;
  out.preavg = pre_average(avgs, h);
  require(out.preavg.per_day >= 1, ErrorKind::insufficient_data, "need M >= 1");
  out.xi_tilde = xi_tilde(out.preavg);
  const double th = theta_hat(out.preavg);
  out.estimate = {th * out.xi_tilde, synchronous ? EstimatorTag::pa_atva : EstimatorTag::pa_atva_async, th};
  return out;
}

inline PaAtvaResult pa_atva(const TickPanel& panel, int h) {
  return pa_atva(stamp_average(panel), h, panel.synchronous());
}

}  // namespace hdicv
