#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "hdicv/common.hpp"
#include "hdicv/panel.hpp"

// Synthetic class-C markets: dX_t = mu_t dt + gamma_t Lambda dW_t observed
// through multi-transaction clocks and additive microstructure noise.

namespace hdicv::sim {

// ---------------------------------------------------------------------------
// Lambda
// ---------------------------------------------------------------------------

struct LambdaSpec {
  enum class Kind { toeplitz_half, spiked };

  Kind kind = Kind::toeplitz_half;
  int p = 1;
  /// Replacement leading eigenvalues of Lambda (spiked kind), largest first.
  std::vector<double> leading;
  bool rescale_trace = false;

  static LambdaSpec toeplitz(int p, bool rescale = false) {
    return {Kind::toeplitz_half, p, {}, rescale};
  }
  /// Spiked variants always rescale so that tr(Lambda Lambda^T) = p.
  static LambdaSpec spiked(int p, std::vector<double> leading) {
    return {Kind::spiked, p, std::move(leading), true};
  }
};

inline Matrix toeplitz_half(int p) {
  Matrix a(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = std::pow(0.5, std::abs(i - j));
  return a;
}

/// Builds Lambda. Spiked kinds replace the top eigenvalues of the symmetric
/// Toeplitz base, then the whole spectrum is scaled so tr(Lambda Lambda^T) = p.
inline Matrix build_lambda(const LambdaSpec& spec) {
  require(spec.p >= 1, ErrorKind::invalid_spec, "Lambda dimension must be positive");
  require(static_cast<int>(spec.leading.size()) <= spec.p, ErrorKind::invalid_spec,
          "more replacement eigenvalues than dimensions");
  for (double v : spec.leading)
    require(v > 0.0, ErrorKind::invalid_spec, "replacement eigenvalues must be positive");

  Matrix lambda = toeplitz_half(spec.p);
  if (spec.kind == LambdaSpec::Kind::spiked && !spec.leading.empty()) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(lambda);
    Vector values = es.eigenvalues();  // ascending
    const Matrix& vectors = es.eigenvectors();
    for (std::size_t k = 0; k < spec.leading.size(); ++k)
      values(spec.p - 1 - static_cast<int>(k)) = spec.leading[k];
    lambda = vectors * values.asDiagonal() * vectors.transpose();
    lambda = symmetrized(lambda);
  }
  if (spec.rescale_trace || spec.kind == LambdaSpec::Kind::spiked) {
    const double tr = (lambda * lambda.transpose()).trace();
    lambda *= std::sqrt(static_cast<double>(spec.p) / tr);
  }
  return lambda;
}

// ---------------------------------------------------------------------------
// gamma process: d gamma = -rho (gamma - mu_t) dt + sigma dW~
// ---------------------------------------------------------------------------

inline double u_shaped_level(double t) {
  return 2.0 * std::sqrt(0.0009 + 0.0008 * std::cos(2.0 * std::numbers::pi * t));
}

struct GammaSpec {
  double rho = 10.0;
  double sigma = 0.05;
  std::function<double(double)> mu = u_shaped_level;
  /// Initial value; defaults to mu(0).
  std::optional<double> gamma0;

  static GammaSpec constant(double level) {
    GammaSpec g;
    g.sigma = 0.0;
    g.mu = [level](double) { return level; };
    g.gamma0 = level;
    return g;
  }

  double initial() const { return gamma0 ? *gamma0 : mu(0.0); }

  void validate() const {
    require(rho > 0.0, ErrorKind::invalid_spec, "gamma mean reversion rate must be positive");
    require(sigma >= 0.0, ErrorKind::invalid_spec, "gamma vol-of-vol must be non-negative");
    require(static_cast<bool>(mu), ErrorKind::invalid_spec, "gamma target level function missing");
  }
};

// ---------------------------------------------------------------------------
// transaction clock
// ---------------------------------------------------------------------------

struct PoissonPiece {
  double end_fraction;  ///< piece covers stamps with t_i in (previous end, end_fraction]
  double lambda;
};

struct ClockSpec {
  enum class Kind { constant, shifted_poisson, piecewise_poisson };

  Kind kind = Kind::constant;
  int L = 1;              ///< constant kind
  double lambda = 5.0;    ///< shifted_poisson: L - 1 ~ Poisson(lambda)
  std::vector<PoissonPiece> pieces;  ///< piecewise_poisson: L - 1 ~ Poisson(lambda of the piece)
  /// Per-stock asynchronous counts L_i^(q) ~ U{1, ..., L_i} over the base clock.
  bool per_stock_uniform = false;

  static ClockSpec constant(int L) { return {Kind::constant, L, 0.0, {}, false}; }
  static ClockSpec shifted_poisson(double lambda) { return {Kind::shifted_poisson, 1, lambda, {}, false}; }
  static ClockSpec piecewise(std::vector<PoissonPiece> pieces) {
    return {Kind::piecewise_poisson, 1, 0.0, std::move(pieces), false};
  }
  /// Poisson(20) over the first and last hour of a 6.5 hour session, Poisson(5) otherwise.
  static ClockSpec session_u_shape() {
    return piecewise({{1.0 / 6.5, 20.0}, {5.5 / 6.5, 5.0}, {1.0, 20.0}});
  }
  ClockSpec asynchronous() const {
    auto c = *this;
    c.per_stock_uniform = true;
    return c;
  }

  bool synchronous() const { return !per_stock_uniform; }

  void validate() const {
    switch (kind) {
      case Kind::constant:
        require(L >= 1, ErrorKind::invalid_spec, "constant clock needs L >= 1");
        break;
      case Kind::shifted_poisson:
        require(lambda >= 0.0, ErrorKind::invalid_spec, "Poisson rate must be non-negative");
        break;
      case Kind::piecewise_poisson: {
        require(!pieces.empty(), ErrorKind::invalid_spec, "piecewise clock needs pieces");
        double prev = 0.0;
        for (const auto& piece : pieces) {
          require(piece.end_fraction > prev && piece.lambda >= 0.0, ErrorKind::invalid_spec,
                  "piecewise clock pieces must be increasing with non-negative rates");
          prev = piece.end_fraction;
        }
        require(std::abs(prev - 1.0) < 1e-12, ErrorKind::invalid_spec, "last clock piece must end at 1");
        break;
      }
    }
  }
};

/// Realized transaction counts L_i^(q); layout matches TickPanel cells.
struct Clock {
  int p = 0;
  int n = 0;
  int days = 0;
  bool synchronous = true;
  std::vector<int> counts;

  std::size_t cell(int day, int stamp, int stock) const {
    return (static_cast<std::size_t>(day) * n + stamp) * p + stock;
  }
  int count(int day, int stamp, int stock) const { return counts[cell(day, stamp, stock)]; }

  /// Empirical cross-stock mean of 1/L^2 at one stamp.
  double mean_inv_sq(int day, int stamp) const {
    double s = 0.0;
    for (int q = 0; q < p; ++q) {
      const double l = count(day, stamp, q);
      s += 1.0 / (l * l);
    }
    return s / p;
  }

  /// Transaction time of the j-th (1-based) trade in a stamp: equally spaced,
  /// the last one landing on the stamp's right endpoint.
  double time_of(int stamp, int j, int L) const {
    return (static_cast<double>(stamp) + static_cast<double>(j) / L) / n;
  }
};

inline Clock generate_clock(const ClockSpec& spec, int n, int p, int days, std::uint64_t seed) {
  spec.validate();
  require(n >= 2, ErrorKind::invalid_spec, "need at least two stamps per day");
  require(p >= 1 && days >= 1, ErrorKind::invalid_spec, "clock dimensions must be positive");

  Rng rng(seed);
  Clock clock{p, n, days, spec.synchronous(), {}};
  clock.counts.resize(static_cast<std::size_t>(days) * n * p);

  auto rate_at = [&](int stamp) {
    if (spec.kind == ClockSpec::Kind::shifted_poisson) return spec.lambda;
    const double t = static_cast<double>(stamp + 1) / n;
    for (const auto& piece : spec.pieces)
      if (t <= piece.end_fraction + 1e-12) return piece.lambda;
    return spec.pieces.back().lambda;
  };

  for (int d = 0; d < days; ++d)
    for (int i = 0; i < n; ++i) {
      int base = spec.L;
      if (spec.kind != ClockSpec::Kind::constant) {
        const double rate = rate_at(i);
        base = 1 + (rate > 0.0 ? std::poisson_distribution<int>(rate)(rng) : 0);
      }
      for (int q = 0; q < p; ++q) {
        int l = base;
        if (spec.per_stock_uniform) l = std::uniform_int_distribution<int>(1, base)(rng);
        clock.counts[clock.cell(d, i, q)] = l;
      }
    }
  return clock;
}

// ---------------------------------------------------------------------------
// latent paths
// ---------------------------------------------------------------------------

/// Fine-grid record of one simulated day.
struct DayPath {
  std::vector<double> times;  ///< grid points, starting at the day's t = 0
  std::vector<double> gamma;  ///< gamma at each grid point
  double integrated_gamma_sq = 0.0;  ///< left Riemann sum of gamma^2 dt
  Matrix sigma_breve;         ///< Lambda Lambda^T used on this day
  Matrix realized_icv;        ///< integrated_gamma_sq * sigma_breve
  Vector open;                ///< latent price vector at t = 0
};

struct LatentPaths {
  int p = 0;
  int n = 0;
  int days = 0;
  Clock clock;
  std::vector<DayPath> day_paths;
  TickPanel latent;  ///< latent log prices at every transaction time
};

/// Bounded per-stock drift mu^(q)(t); empty means zero drift.
using DriftFn = std::function<double(int stock, double t)>;

namespace detail {

struct Fraction {
  int num;
  int den;
};

// Union of {j / L : 1 <= j <= L} over the distinct L values in `ls`, sorted.
inline void union_grid(const std::vector<int>& distinct, std::vector<Fraction>& out) {
  out.clear();
  for (int L : distinct)
    for (int j = 1; j <= L; ++j) {
      const int g = std::gcd(j, L);
      out.push_back({j / g, L / g});
    }
  std::sort(out.begin(), out.end(), [](const Fraction& a, const Fraction& b) {
    return static_cast<long long>(a.num) * b.den < static_cast<long long>(b.num) * a.den;
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Fraction& a, const Fraction& b) { return a.num == b.num && a.den == b.den; }),
            out.end());
}

}  // namespace detail

/// Euler-Maruyama on the union of all transaction times. The gamma driver is
/// the normalized sum of the same Brownian increments that move prices.
/// `lambdas` holds one matrix for all days or one per day.
inline LatentPaths simulate_paths(const std::vector<Matrix>& lambdas, const GammaSpec& gamma,
                                  const Clock& clock, const DriftFn& drift, std::uint64_t seed) {
  gamma.validate();
  require(!lambdas.empty() && (lambdas.size() == 1 || static_cast<int>(lambdas.size()) == clock.days),
          ErrorKind::invalid_spec, "need one Lambda or one per day");
  for (const auto& l : lambdas)
    require(l.rows() == clock.p && l.cols() == clock.p, ErrorKind::dimension_mismatch,
            "Lambda and clock dimensions disagree");
  require(clock.n >= 1 && clock.days >= 1 && !clock.counts.empty(), ErrorKind::invalid_spec, "empty grid");

  const int p = clock.p;
  const int n = clock.n;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  LatentPaths out;
  out.p = p;
  out.n = n;
  out.days = clock.days;
  out.clock = clock;
  std::vector<double> prices;
  {
    std::size_t total = 0;
    for (int c : clock.counts) total += static_cast<std::size_t>(c);
    prices.resize(total);
  }
  std::vector<std::size_t> offsets(clock.counts.size() + 1, 0);
  for (std::size_t c = 0; c < clock.counts.size(); ++c) offsets[c + 1] = offsets[c] + clock.counts[c];

  Vector x_open = Vector::Zero(p);
  std::vector<double> u(p), drift_acc(p), z(p);
  std::vector<int> next_txn(p), distinct;
  std::vector<detail::Fraction> grid;
  const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(p));
  const double inv_n = 1.0 / n;

  for (int d = 0; d < clock.days; ++d) {
    const Matrix& lambda = lambdas.size() == 1 ? lambdas[0] : lambdas[d];
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> lrow = lambda;

    DayPath day;
    day.sigma_breve = lambda * lambda.transpose();
    day.open = x_open;
    double g = gamma.initial();
    day.times.push_back(0.0);
    day.gamma.push_back(g);
    std::fill(u.begin(), u.end(), 0.0);
    std::fill(drift_acc.begin(), drift_acc.end(), 0.0);
    double integral = 0.0;

    for (int i = 0; i < n; ++i) {
      distinct.clear();
      for (int q = 0; q < p; ++q) {
        const int l = clock.count(d, i, q);
        if (std::find(distinct.begin(), distinct.end(), l) == distinct.end()) distinct.push_back(l);
        next_txn[q] = 1;
      }
      detail::union_grid(distinct, grid);

      double prev_frac = 0.0;
      for (const auto& f : grid) {
        const double frac = static_cast<double>(f.num) / f.den;
        const double dt = (frac - prev_frac) * inv_n;
        const double t_left = (i + prev_frac) * inv_n;
        const double sdt = std::sqrt(dt);
        double zsum = 0.0;
        for (int q = 0; q < p; ++q) {
          z[q] = normal(rng);
          zsum += z[q];
        }
        const double gs = g * sdt;
        for (int q = 0; q < p; ++q) u[q] += gs * z[q];
        if (drift)
          for (int q = 0; q < p; ++q) drift_acc[q] += drift(q, t_left) * dt;
        integral += g * g * dt;
        g += -gamma.rho * (g - gamma.mu(t_left)) * dt + gamma.sigma * sdt * zsum * inv_sqrt_p;
        prev_frac = frac;

        const double t = (i + frac) * inv_n;
        day.times.push_back(t);
        day.gamma.push_back(g);

        for (int q = 0; q < p; ++q) {
          const int l = clock.count(d, i, q);
          const int j = next_txn[q];
          if (j > l || static_cast<long long>(j) * f.den != static_cast<long long>(f.num) * l) continue;
          const double* row = lrow.data() + static_cast<std::size_t>(q) * p;
          double x = x_open[q] + drift_acc[q];
          for (int k = 0; k < p; ++k) x += row[k] * u[k];
          prices[offsets[clock.cell(d, i, q)] + (j - 1)] = x;
          next_txn[q] = j + 1;
        }
      }
    }
    day.integrated_gamma_sq = integral;
    day.realized_icv = integral * day.sigma_breve;
    // Next day opens at this day's close; overnight moves are not modeled.
    const Eigen::Map<const Vector> umap(u.data(), p);
    const Eigen::Map<const Vector> dmap(drift_acc.data(), p);
    x_open = x_open + dmap + lambda * umap;
    out.day_paths.push_back(std::move(day));
  }
  out.latent = TickPanel(p, n, clock.days, clock.counts, std::move(prices));
  return out;
}

inline LatentPaths simulate_paths(const Matrix& lambda, const GammaSpec& gamma, const Clock& clock,
                                  const DriftFn& drift, std::uint64_t seed) {
  return simulate_paths(std::vector<Matrix>{lambda}, gamma, clock, drift, seed);
}

// ---------------------------------------------------------------------------
// noise
// ---------------------------------------------------------------------------

struct NoiseSpec {
  enum class Kind { none, iid_gaussian, ar1 };

  Kind kind = Kind::none;
  double variance = 0.0002;  ///< iid variance, or AR(1) innovation variance
  double phi = 0.0;

  static NoiseSpec none() { return {Kind::none, 0.0, 0.0}; }
  static NoiseSpec gaussian(double variance = 0.0002) { return {Kind::iid_gaussian, variance, 0.0}; }
  static NoiseSpec ar1(double phi, double innovation_variance) { return {Kind::ar1, innovation_variance, phi}; }
  /// AR(1) whose stationary variance equals `stationary_variance`.
  static NoiseSpec ar1_stationary(double phi, double stationary_variance) {
    return ar1(phi, stationary_variance * (1.0 - phi * phi));
  }

  void validate() const {
    require(variance >= 0.0, ErrorKind::invalid_spec, "noise variance must be non-negative");
    require(std::abs(phi) < 1.0, ErrorKind::invalid_spec, "AR(1) coefficient must satisfy |phi| < 1");
  }
};

/// Y = X + eps at every transaction. AR(1) noise runs along each stock's
/// transaction sequence, started from its stationary law.
inline TickPanel add_noise(const LatentPaths& paths, const NoiseSpec& spec, std::uint64_t seed) {
  spec.validate();
  const TickPanel& x = paths.latent;
  if (spec.kind == NoiseSpec::Kind::none) return x;

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> prices = x.all_prices();
  const double sd = std::sqrt(spec.variance);

  if (spec.kind == NoiseSpec::Kind::iid_gaussian) {
    for (auto& v : prices) v += sd * normal(rng);
  } else {
    const double stationary_sd = std::sqrt(spec.variance / (1.0 - spec.phi * spec.phi));
    std::vector<double> state(x.p());
    for (auto& s : state) s = stationary_sd * normal(rng);
    std::size_t pos = 0;
    for (int d = 0; d < x.days(); ++d)
      for (int i = 0; i < x.n(); ++i)
        for (int q = 0; q < x.p(); ++q) {
          const int l = x.count(d, i, q);
          for (int j = 0; j < l; ++j) {
            state[q] = spec.phi * state[q] + sd * normal(rng);
            prices[pos++] += state[q];
          }
        }
  }
  return {x.p(), x.n(), x.days(), x.counts(), std::move(prices)};
}

// ---------------------------------------------------------------------------
// realized targets (test oracles)
// ---------------------------------------------------------------------------

struct RealizedTargets {
  double theta = 0.0;          ///< (1/p) tr(ICV) = int gamma^2 dt * tr(Sigma_breve)/p
  double theta_tilde_f = 0.0;  ///< same with integrand weight 1/3 + f2_hat/6
};

/// Pathwise targets for one day. f2_hat at time t is the cross-stock mean of
/// 1/L^2 over the stamp containing t.
inline RealizedTargets realized_targets(const LatentPaths& paths, int day = 0) {
  require(day >= 0 && day < paths.days, ErrorKind::invalid_input, "day out of range");
  const DayPath& dp = paths.day_paths[day];
  require(dp.gamma.size() == dp.times.size() && dp.times.size() >= 2, ErrorKind::invalid_input,
          "paths carry no gamma record");
  const double trace_scale = dp.sigma_breve.trace() / paths.p;
  std::vector<double> weight(paths.n);
  for (int i = 0; i < paths.n; ++i) weight[i] = 1.0 / 3.0 + paths.clock.mean_inv_sq(day, i) / 6.0;

  RealizedTargets out;
  for (std::size_t k = 0; k + 1 < dp.times.size(); ++k) {
    const double dt = dp.times[k + 1] - dp.times[k];
    const double g2dt = dp.gamma[k] * dp.gamma[k] * dt;
    // the interval (t_k, t_{k+1}] lies inside one stamp
    int stamp = static_cast<int>(std::ceil(dp.times[k + 1] * paths.n - 1e-9)) - 1;
    stamp = std::clamp(stamp, 0, paths.n - 1);
    out.theta += g2dt;
    out.theta_tilde_f += weight[stamp] * g2dt;
  }
  out.theta *= trace_scale;
  out.theta_tilde_f *= trace_scale;
  return out;
}

}  // namespace hdicv::sim
