#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "hdicv/common.hpp"
#include "hdicv/estimators.hpp"
#include "hdicv/panel.hpp"
#include "hdicv/shrinkage.hpp"

// Global minimum-variance portfolios and a rolling daily backtest.

namespace hdicv::portfolio {

/// w = S^{-1} 1 / (1^T S^{-1} 1), eigenvalues below floor * tr(S)/p lifted to
/// that level first. No long-only constraint.
inline Vector min_var_weights(const Matrix& sigma, double floor = 1e-10) {
  require(sigma.rows() == sigma.cols() && sigma.rows() >= 1, ErrorKind::invalid_input,
          "covariance must be square");
  require(is_symmetric(sigma, 1e-10 * std::max(1.0, sigma.cwiseAbs().maxCoeff())), ErrorKind::invalid_input,
          "covariance must be symmetric");
  require(sigma.cwiseAbs().maxCoeff() > 0.0, ErrorKind::degenerate_input, "covariance is identically zero");
  const int p = static_cast<int>(sigma.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(sigma));
  require(es.info() == Eigen::Success, ErrorKind::convergence, "symmetric eigensolver failed");
  const double level = floor * std::abs(sigma.trace()) / p;
  Vector inv = es.eigenvalues();
  for (int k = 0; k < p; ++k) inv(k) = 1.0 / std::max(inv(k), level);
  require(inv.allFinite(), ErrorKind::degenerate_input, "covariance has no usable spectrum");
  const Vector ones = Vector::Ones(p);
  Vector w = es.eigenvectors() * inv.asDiagonal() * (es.eigenvectors().transpose() * ones);
  return w / w.sum();
}

inline Vector min_var_weights(const CovEstimate& estimate, double floor = 1e-10) {
  return min_var_weights(estimate.matrix, floor);
}

enum class Timing { open_open, close_close };

inline const char* to_string(Timing t) { return t == Timing::open_open ? "open-open" : "close-close"; }

inline Timing parse_timing(const std::string& s) {
  if (s == "open-open") return Timing::open_open;
  if (s == "close-close") return Timing::close_close;
  throw Error(ErrorKind::invalid_spec, "unknown rebalance timing: " + s);
}

enum class Strategy { pa_atva, ans, mns, equal_weight };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::pa_atva: return "pa_atva";
    case Strategy::ans: return "ans";
    case Strategy::mns: return "mns";
    case Strategy::equal_weight: return "ew";
  }
  return "unknown";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "pa_atva") return Strategy::pa_atva;
  if (s == "ans") return Strategy::ans;
  if (s == "mns") return Strategy::mns;
  if (s == "ew") return Strategy::equal_weight;
  throw Error(ErrorKind::invalid_spec, "unknown backtest estimator: " + s);
}

struct BacktestConfig {
  Strategy strategy = Strategy::pa_atva;
  int window_days = 10;
  Timing timing = Timing::open_open;
  int h = 90;                  ///< pre-averaging window in stamps
  int kn = 36;                 ///< MNS spot window in stamps
  double vartheta = 0.75;
  int permutations = 50;
  std::uint64_t seed = 0;
  int annualization = 252;
  double floor = 1e-10;
};

struct BacktestDay {
  int day = 0;  ///< 0-based index of the evaluation day
  Vector weights;
  double ret = 0.0;
  double max_abs_weight = 0.0;
};

struct BacktestReport {
  std::vector<BacktestDay> days;
  double mu = 0.0;
  double sigma = 0.0;
  double sharpe = 0.0;
  double ame = 0.0;
  int window_days = 0;
  Timing timing = Timing::open_open;
  Strategy strategy = Strategy::pa_atva;
};

/// Annualized mean, sqrt(base)-scaled sample standard deviation, their ratio
/// (0 when the deviation vanishes) and the mean of max |w|.
inline void summarize(BacktestReport& report, int base) {
  const int d = static_cast<int>(report.days.size());
  require(d >= 1, ErrorKind::insufficient_data, "empty backtest");
  double sum = 0.0, ame = 0.0;
  for (const auto& day : report.days) {
    sum += day.ret;
    ame += day.max_abs_weight;
  }
  const double mean = sum / d;
  double ss = 0.0;
  for (const auto& day : report.days) ss += (day.ret - mean) * (day.ret - mean);
  report.mu = base * mean;
  report.sigma = d > 1 ? std::sqrt(base * ss / (d - 1)) : 0.0;
  report.sharpe = report.sigma > 0.0 ? report.mu / report.sigma : 0.0;
  report.ame = ame / d;
}

/// Hex FNV-1a digest of the weights printed at full precision.
inline std::string weights_digest(const Vector& w) {
  std::string text;
  char buf[40];
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g;", w(k));
    text += buf;
  }
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

namespace detail {

inline StampAverages concat(const std::vector<StampAverages>& days, int first, int count) {
  const auto& head = days[first];
  StampAverages out{head.p, head.n, count, Matrix(head.p, static_cast<Eigen::Index>(head.n) * count)};
  for (int k = 0; k < count; ++k) {
    const auto& d = days[first + k];
    require(d.p == head.p && d.n == head.n && d.days == 1, ErrorKind::dimension_mismatch,
            "daily panels must share p and n");
    out.values.middleCols(static_cast<Eigen::Index>(k) * head.n, head.n) = d.values;
  }
  return out;
}

}  // namespace detail

/// Covariance forecast for day `day` from the `window_days` preceding days.
/// Xi~ and eigenvectors come from the training window (MNS: all but its last
/// day); theta_hat and MNS eigenvalues come from the most recent day.
inline Matrix forecast(const std::vector<StampAverages>& daily, int day, const BacktestConfig& cfg) {
  const int p = daily[day].p;
  if (cfg.strategy == Strategy::equal_weight) return Matrix::Identity(p, p);
  const int first = day - cfg.window_days;
  const auto window = detail::concat(daily, first, cfg.window_days);
  const auto last = pre_average(daily[day - 1], cfg.h);
  const double th = theta_hat(last);

  switch (cfg.strategy) {
    case Strategy::pa_atva: return th * xi_tilde(pre_average(window, cfg.h));
    case Strategy::ans: {
      const auto inc = pre_average(window, cfg.h);
      const auto plan = shrink::make_split_plan(inc.count(), cfg.permutations,
                                                derive_seed(cfg.seed, {static_cast<std::uint64_t>(day)}));
      return shrink::ans(inc, th, plan).estimate.matrix;
    }
    case Strategy::mns: {
      require(cfg.window_days >= 2, ErrorKind::invalid_window, "MNS needs a window of at least two days");
      const auto past = detail::concat(daily, first, cfg.window_days - 1);
      const auto dec = shrink::decompose(xi_tilde(pre_average(past, cfg.h)));
      return shrink::mns(dec, daily[day - 1], cfg.kn, cfg.vartheta).matrix;
    }
    case Strategy::equal_weight: break;
  }
  return Matrix::Identity(p, p);
}

/// Rolling backtest over single-day panels. Day i (i >= window) is traded with
/// weights forecast from days [i - window, i - 1]. Open-open returns run from
/// the first stamp average of day i to that of day i + 1 (the last day closes
/// at its last stamp); close-close returns run from the last stamp average of
/// day i - 1 to that of day i.
inline BacktestReport backtest(const std::vector<TickPanel>& panels, const BacktestConfig& cfg) {
  require(cfg.window_days >= 1, ErrorKind::invalid_window, "window must be at least one day");
  require(static_cast<int>(panels.size()) >= cfg.window_days + 1, ErrorKind::insufficient_data,
          "backtest needs more days than the window");
  require(cfg.annualization >= 1, ErrorKind::invalid_spec, "annualization base must be positive");
  std::vector<StampAverages> daily;
  for (const auto& panel : panels) {
    require(panel.days() == 1, ErrorKind::invalid_input, "backtest takes one panel per day");
    require(panel.p() == panels.front().p() && panel.n() == panels.front().n(), ErrorKind::dimension_mismatch,
            "daily panels must share p and n");
    daily.push_back(stamp_average(panel));
  }
  const int total = static_cast<int>(daily.size());
  const int n = daily.front().n;

  BacktestReport report;
  report.window_days = cfg.window_days;
  report.timing = cfg.timing;
  report.strategy = cfg.strategy;
  for (int i = cfg.window_days; i < total; ++i) {
    const Vector w = cfg.strategy == Strategy::equal_weight
                         ? Vector(Vector::Constant(daily[i].p, 1.0 / daily[i].p))
                         : min_var_weights(forecast(daily, i, cfg), cfg.floor);
    Vector r;
    if (cfg.timing == Timing::open_open)
      r = (i + 1 < total ? daily[i + 1].values.col(0) : daily[i].values.col(n - 1)) - daily[i].values.col(0);
    else
      r = daily[i].values.col(n - 1) - daily[i - 1].values.col(n - 1);
    report.days.push_back({i, w, w.dot(r), w.cwiseAbs().maxCoeff()});
  }
  summarize(report, cfg.annualization);
  return report;
}

}  // namespace hdicv::portfolio
