#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hdicv/common.hpp"
#include "hdicv/estimators.hpp"
#include "hdicv/io.hpp"
#include "hdicv/market_sim.hpp"
#include "hdicv/portfolio.hpp"
#include "hdicv/shrinkage.hpp"
#include "hdicv/spectral.hpp"

// Experiment configuration (versioned JSON) and the seeded Monte Carlo runners
// behind the command line tool.

namespace hdicv::exp {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kConfigVersion = 1;

enum class Kind { simulate, esd_compare, mc_rfl, backtest, mp_curve };

inline const char* to_string(Kind k) {
  switch (k) {
    case Kind::simulate: return "simulate";
    case Kind::esd_compare: return "esd-compare";
    case Kind::mc_rfl: return "mc-rfl";
    case Kind::backtest: return "backtest";
    case Kind::mp_curve: return "mp-curve";
  }
  return "unknown";
}

inline Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::simulate, Kind::esd_compare, Kind::mc_rfl, Kind::backtest, Kind::mp_curve})
    if (s == to_string(k)) return k;
  throw Error(ErrorKind::invalid_spec, "unknown experiment kind: " + s);
}

struct LambdaConfig {
  std::string kind = "toeplitz";  ///< toeplitz | spiked
  bool rescale = false;
  std::vector<double> leading;
};

struct GammaConfig {
  std::string kind = "u-shaped";  ///< u-shaped | constant
  double level = 1.0;
  double rho = 10.0;
  double sigma = 0.05;
};

struct ClockConfig {
  std::string kind = "constant";  ///< constant | poisson | session | piecewise
  int L = 1;
  double lambda = 5.0;
  std::vector<sim::PoissonPiece> pieces;
  bool per_stock_uniform = false;
};

struct NoiseConfig {
  std::string kind = "gaussian";  ///< none | gaussian | ar1
  double variance = 0.0002;
  double phi = 0.0;
};

struct EstimatorConfig {
  std::string name = "pa_atva";  ///< rcv | tva | atva | a_atva | a_atva_pooled | pa_atva
  std::optional<int> h;
  double xi = 1.0;
  double beta = 0.55;
  std::optional<int> kn;
  double vartheta = 0.75;
  int permutations = 50;
  std::vector<double> breakpoints{1.0};
};

struct McRflConfig {
  std::vector<std::string> settings{"I", "II", "III", "IV"};
  std::vector<std::string> estimators{"ns", "ans", "ans2", "ans3", "ans4", "ans5", "ans6", "ans7", "mns"};
};

struct BacktestSection {
  std::string input;
  std::string strategy = "pa_atva";
  int window_days = 10;
  std::string timing = "open-open";
  double preaverage_minutes = 15.0;
  double kn_minutes = 6.0;
  std::optional<int> h;
  std::optional<int> kn;
  int stamp_seconds = 10;
  double trim_open_minutes = 5.0;
  int annualization = 252;
};

struct MpCurveConfig {
  double c = 0.5;
  std::string population = "point";  ///< point | lambda
  int points = 512;
  std::optional<double> eta;
  std::optional<double> lo;
  std::optional<double> hi;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  Kind kind = Kind::simulate;
  int p = 100;
  int n = 390;
  int days = 1;
  int reps = 1;
  std::uint64_t seed = 1;
  std::string output;
  LambdaConfig lambda;
  GammaConfig gamma;
  ClockConfig clock;
  NoiseConfig noise;
  EstimatorConfig estimator;
  McRflConfig mc_rfl;
  BacktestSection backtest;
  MpCurveConfig mp_curve;
};

// ---------------------------------------------------------------------------
// JSON <-> config
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), ErrorKind::invalid_spec, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, ErrorKind::invalid_spec, "unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

template <class T>
void read(const json& j, const char* key, std::optional<T>& into) {
  if (j.contains(key) && !j.at(key).is_null()) into = j.at(key).get<T>();
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline sim::LambdaSpec lambda_spec(const LambdaConfig& c, int p) {
  if (c.kind == "toeplitz") return sim::LambdaSpec::toeplitz(p, c.rescale);
  if (c.kind == "spiked") return sim::LambdaSpec::spiked(p, c.leading);
  throw Error(ErrorKind::invalid_spec, "unknown lambda kind: " + c.kind);
}

inline sim::GammaSpec gamma_spec(const GammaConfig& c) {
  sim::GammaSpec g;
  if (c.kind == "constant") {
    g = sim::GammaSpec::constant(c.level);
  } else {
    require(c.kind == "u-shaped", ErrorKind::invalid_spec, "unknown gamma kind: " + c.kind);
    g.sigma = c.sigma;
  }
  g.rho = c.rho;
  g.validate();
  return g;
}

inline sim::ClockSpec clock_spec(const ClockConfig& c) {
  sim::ClockSpec s;
  if (c.kind == "constant")
    s = sim::ClockSpec::constant(c.L);
  else if (c.kind == "poisson")
    s = sim::ClockSpec::shifted_poisson(c.lambda);
  else if (c.kind == "session")
    s = sim::ClockSpec::session_u_shape();
  else if (c.kind == "piecewise")
    s = sim::ClockSpec::piecewise(c.pieces);
  else
    throw Error(ErrorKind::invalid_spec, "unknown clock kind: " + c.kind);
  if (c.per_stock_uniform) s = s.asynchronous();
  s.validate();
  return s;
}

inline sim::NoiseSpec noise_spec(const NoiseConfig& c) {
  sim::NoiseSpec s;
  if (c.kind == "none")
    s = sim::NoiseSpec::none();
  else if (c.kind == "gaussian")
    s = sim::NoiseSpec::gaussian(c.variance);
  else if (c.kind == "ar1")
    s = sim::NoiseSpec::ar1_stationary(c.phi, c.variance);
  else
    throw Error(ErrorKind::invalid_spec, "unknown noise kind: " + c.kind);
  s.validate();
  return s;
}

inline int window_h(const ExperimentConfig& c) {
  return c.estimator.h ? *c.estimator.h : default_window(c.n, c.estimator.xi, c.estimator.beta);
}

inline int window_kn(const ExperimentConfig& c) {
  return c.estimator.kn ? *c.estimator.kn : shrink::default_kn(c.n, c.estimator.vartheta);
}

inline void validate(const ExperimentConfig& c) {
  require(c.version == kConfigVersion, ErrorKind::invalid_spec,
          "unsupported config version " + std::to_string(c.version));
  require(c.reps >= 1, ErrorKind::invalid_spec, "reps must be at least 1");
  require(c.p >= 1 && c.n >= 2 && c.days >= 1, ErrorKind::invalid_spec, "p, n and days must be positive (n >= 2)");
  lambda_spec(c.lambda, c.p);
  gamma_spec(c.gamma);
  clock_spec(c.clock);
  noise_spec(c.noise);
  require(c.estimator.permutations >= 1, ErrorKind::invalid_spec, "permutations must be at least 1");
  require(c.estimator.vartheta > 0.0 && c.estimator.xi > 0.0, ErrorKind::invalid_spec,
          "estimator constants must be positive");
  if (c.kind == Kind::mp_curve)
    require(c.mp_curve.c > 0.0 && c.mp_curve.points >= 2, ErrorKind::invalid_spec, "mp_curve needs c > 0, points >= 2");
  if (c.kind == Kind::backtest) {
    require(!c.backtest.input.empty(), ErrorKind::invalid_spec, "backtest.input directory is required");
    portfolio::parse_strategy(c.backtest.strategy);
    portfolio::parse_timing(c.backtest.timing);
  }
}

inline ExperimentConfig parse_config(const json& j) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig c;
  try {
    check_keys(j,
               {"version", "kind", "p", "n", "days", "reps", "seed", "output", "lambda", "gamma", "clock", "noise",
                "estimator", "mc_rfl", "backtest", "mp_curve"},
               "config");
    require(j.contains("kind"), ErrorKind::invalid_spec, "config needs a kind");
    read(j, "version", c.version);
    c.kind = parse_kind(j.at("kind").get<std::string>());
    read(j, "p", c.p);
    read(j, "n", c.n);
    read(j, "days", c.days);
    read(j, "reps", c.reps);
    read(j, "seed", c.seed);
    read(j, "output", c.output);
    if (j.contains("lambda")) {
      const auto& s = j.at("lambda");
      check_keys(s, {"kind", "rescale", "leading"}, "lambda");
      read(s, "kind", c.lambda.kind);
      read(s, "rescale", c.lambda.rescale);
      read(s, "leading", c.lambda.leading);
    }
    if (j.contains("gamma")) {
      const auto& s = j.at("gamma");
      check_keys(s, {"kind", "level", "rho", "sigma"}, "gamma");
      read(s, "kind", c.gamma.kind);
      read(s, "level", c.gamma.level);
      read(s, "rho", c.gamma.rho);
      read(s, "sigma", c.gamma.sigma);
    }
    if (j.contains("clock")) {
      const auto& s = j.at("clock");
      check_keys(s, {"kind", "L", "lambda", "pieces", "per_stock_uniform"}, "clock");
      read(s, "kind", c.clock.kind);
      read(s, "L", c.clock.L);
      read(s, "lambda", c.clock.lambda);
      read(s, "per_stock_uniform", c.clock.per_stock_uniform);
      if (s.contains("pieces"))
        for (const auto& piece : s.at("pieces")) {
          require(piece.is_array() && piece.size() == 2, ErrorKind::invalid_spec,
                  "clock pieces are [end_fraction, lambda] pairs");
          c.clock.pieces.push_back({piece[0].get<double>(), piece[1].get<double>()});
        }
    }
    if (j.contains("noise")) {
      const auto& s = j.at("noise");
      check_keys(s, {"kind", "variance", "phi"}, "noise");
      read(s, "kind", c.noise.kind);
      read(s, "variance", c.noise.variance);
      read(s, "phi", c.noise.phi);
    }
    if (j.contains("estimator")) {
      const auto& s = j.at("estimator");
      check_keys(s, {"name", "h", "xi", "beta", "kn", "vartheta", "permutations", "breakpoints"}, "estimator");
      read(s, "name", c.estimator.name);
      read(s, "h", c.estimator.h);
      read(s, "xi", c.estimator.xi);
      read(s, "beta", c.estimator.beta);
      read(s, "kn", c.estimator.kn);
      read(s, "vartheta", c.estimator.vartheta);
      read(s, "permutations", c.estimator.permutations);
      read(s, "breakpoints", c.estimator.breakpoints);
    }
    if (j.contains("mc_rfl")) {
      const auto& s = j.at("mc_rfl");
      check_keys(s, {"settings", "estimators"}, "mc_rfl");
      read(s, "settings", c.mc_rfl.settings);
      read(s, "estimators", c.mc_rfl.estimators);
    }
    if (j.contains("backtest")) {
      const auto& s = j.at("backtest");
      check_keys(s,
                 {"input", "strategy", "window_days", "timing", "preaverage_minutes", "kn_minutes", "h", "kn",
                  "stamp_seconds", "trim_open_minutes", "annualization"},
                 "backtest");
      read(s, "input", c.backtest.input);
      read(s, "strategy", c.backtest.strategy);
      read(s, "window_days", c.backtest.window_days);
      read(s, "timing", c.backtest.timing);
      read(s, "preaverage_minutes", c.backtest.preaverage_minutes);
      read(s, "kn_minutes", c.backtest.kn_minutes);
      read(s, "h", c.backtest.h);
      read(s, "kn", c.backtest.kn);
      read(s, "stamp_seconds", c.backtest.stamp_seconds);
      read(s, "trim_open_minutes", c.backtest.trim_open_minutes);
      read(s, "annualization", c.backtest.annualization);
    }
    if (j.contains("mp_curve")) {
      const auto& s = j.at("mp_curve");
      check_keys(s, {"c", "population", "points", "eta", "lo", "hi"}, "mp_curve");
      read(s, "c", c.mp_curve.c);
      read(s, "population", c.mp_curve.population);
      read(s, "points", c.mp_curve.points);
      read(s, "eta", c.mp_curve.eta);
      read(s, "lo", c.mp_curve.lo);
      read(s, "hi", c.mp_curve.hi);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_spec, std::string("malformed config: ") + e.what());
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) { return parse_config(io::read_json(path)); }

/// Fully resolved config, defaults included.
inline json to_json(const ExperimentConfig& c) {
  json pieces = json::array();
  for (const auto& piece : c.clock.pieces) pieces.push_back({piece.end_fraction, piece.lambda});
  return {
      {"version", c.version},
      {"kind", to_string(c.kind)},
      {"p", c.p},
      {"n", c.n},
      {"days", c.days},
      {"reps", c.reps},
      {"seed", c.seed},
      {"output", c.output},
      {"lambda", {{"kind", c.lambda.kind}, {"rescale", c.lambda.rescale}, {"leading", c.lambda.leading}}},
      {"gamma", {{"kind", c.gamma.kind}, {"level", c.gamma.level}, {"rho", c.gamma.rho}, {"sigma", c.gamma.sigma}}},
      {"clock",
       {{"kind", c.clock.kind},
        {"L", c.clock.L},
        {"lambda", c.clock.lambda},
        {"pieces", pieces},
        {"per_stock_uniform", c.clock.per_stock_uniform}}},
      {"noise", {{"kind", c.noise.kind}, {"variance", c.noise.variance}, {"phi", c.noise.phi}}},
      {"estimator",
       {{"name", c.estimator.name},
        {"h", detail::opt(c.estimator.h)},
        {"xi", c.estimator.xi},
        {"beta", c.estimator.beta},
        {"kn", detail::opt(c.estimator.kn)},
        {"vartheta", c.estimator.vartheta},
        {"permutations", c.estimator.permutations},
        {"breakpoints", c.estimator.breakpoints}}},
      {"mc_rfl", {{"settings", c.mc_rfl.settings}, {"estimators", c.mc_rfl.estimators}}},
      {"backtest",
       {{"input", c.backtest.input},
        {"strategy", c.backtest.strategy},
        {"window_days", c.backtest.window_days},
        {"timing", c.backtest.timing},
        {"preaverage_minutes", c.backtest.preaverage_minutes},
        {"kn_minutes", c.backtest.kn_minutes},
        {"h", detail::opt(c.backtest.h)},
        {"kn", detail::opt(c.backtest.kn)},
        {"stamp_seconds", c.backtest.stamp_seconds},
        {"trim_open_minutes", c.backtest.trim_open_minutes},
        {"annualization", c.backtest.annualization}}},
      {"mp_curve",
       {{"c", c.mp_curve.c},
        {"population", c.mp_curve.population},
        {"points", c.mp_curve.points},
        {"eta", detail::opt(c.mp_curve.eta)},
        {"lo", detail::opt(c.mp_curve.lo)},
        {"hi", detail::opt(c.mp_curve.hi)}}},
  };
}

inline std::string config_digest_text(const ExperimentConfig& c) { return to_json(c).dump(); }

// ---------------------------------------------------------------------------
// replication control
// ---------------------------------------------------------------------------

/// Runs body(r) for r in [0, count) on up to `threads` workers. Results must be
/// written to slot r by the body; the lowest-index failure is rethrown.
template <class Fn>
void parallel_for(int count, int threads, Fn&& body) {
  threads = std::max(1, std::min(threads, count));
  std::vector<std::exception_ptr> errors(count);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < count; r = next++) {
      try {
        body(r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

enum Stream : std::uint64_t { clock_stream = 1, path_stream = 2, noise_stream = 3, reference_stream = 4,
                              floor_stream = 5, permutation_stream = 6 };

inline std::uint64_t rep_seed(std::uint64_t master, int rep, Stream s) {
  return derive_seed(master, {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(s)});
}

struct Market {
  sim::LatentPaths paths;
  TickPanel observed;
};

/// One replication of the configured market; `lambdas` overrides the
/// configured Lambda (one matrix or one per day).
inline Market simulate_market(const ExperimentConfig& c, int rep, std::vector<Matrix> lambdas = {}) {
  if (lambdas.empty()) lambdas.push_back(sim::build_lambda(lambda_spec(c.lambda, c.p)));
  const auto clock = sim::generate_clock(clock_spec(c.clock), c.n, c.p, c.days, rep_seed(c.seed, rep, clock_stream));
  Market m;
  m.paths = sim::simulate_paths(lambdas, gamma_spec(c.gamma), clock, {}, rep_seed(c.seed, rep, path_stream));
  m.observed = sim::add_noise(m.paths, noise_spec(c.noise), rep_seed(c.seed, rep, noise_stream));
  return m;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (0 for a single value).
inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline json mean_std(const std::vector<double>& v) {
  return {{"mean", mean_of(v)}, {"std", sd_of(v)}, {"count", v.size()}};
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Writes panel_r<r>.csv (+ sidecar) and the realized ICV of every day.
inline json run_simulate(const ExperimentConfig& c, const fs::path& out, int threads = 1) {
  const std::string digest = config_digest_text(c);
  std::vector<json> rows(c.reps);
  parallel_for(c.reps, threads, [&](int r) {
    const auto m = simulate_market(c, r);
    const std::string stem = "r" + std::to_string(r);
    io::write_panel(out / ("panel_" + stem + ".csv"), m.observed, c.seed, digest);
    json days = json::array();
    for (int d = 0; d < c.days; ++d) {
      const auto& dp = m.paths.day_paths[d];
      io::write_matrix_csv(out / ("icv_" + stem + "_day" + std::to_string(d + 1) + ".csv"), dp.realized_icv);
      days.push_back({{"day", d + 1}, {"integrated_gamma_sq", dp.integrated_gamma_sq},
                      {"theta", sim::realized_targets(m.paths, d).theta}});
    }
    rows[r] = {{"rep", r}, {"days", days}};
  });
  json summary{{"kind", "simulate"}, {"config", to_json(c)}, {"replications", rows}};
  io::write_json(out / "summary.json", summary);
  return summary;
}

// ---------------------------------------------------------------------------
// esd-compare
// ---------------------------------------------------------------------------

struct EsdRow {
  int rep = 0;
  int samples = 0;       ///< N or M used for the Wishart reference
  double distance = 0.0;
  double noise_floor = 0.0;  ///< distance between two independent references
  double theta_hat = std::numeric_limits<double>::quiet_NaN();
  double theta = 0.0;
};

struct EsdSummary {
  std::vector<EsdRow> rows;
  std::vector<spectral::EsdGridPoint> grid;  ///< replication 0
  double mean = 0.0;
  double sd = 0.0;
  double floor_mean = 0.0;
  double floor_sd = 0.0;
};

inline constexpr const char* kEsdRowsHeader = "rep,samples,distance,noise_floor,theta_hat,theta";

/// The configured estimator on a single simulated day, with the number of
/// increments it is built from.
inline std::pair<CovEstimate, int> esd_estimate(const ExperimentConfig& c, const Market& m) {
  const auto avgs = stamp_average(m.observed);
  const std::string& name = c.estimator.name;
  if (name == "pa_atva") {
    const auto r = pa_atva(avgs, window_h(c), m.observed.synchronous());
    return {r.estimate, r.preavg.count()};
  }
  if (name == "rcv" || name == "tva") {
    const auto inc = increments(avgs, Parity::all);
    return {name == "rcv" ? rcv(inc) : tva(inc), inc.count()};
  }
  const int samples = avgs.n / 2;
  if (name == "atva") return {atva(avgs).estimate, samples};
  if (name == "a_atva") return {a_atva(avgs, m.paths.clock, c.estimator.breakpoints), samples};
  if (name == "a_atva_pooled") return {a_atva_pooled(avgs, m.paths.clock), samples};
  throw Error(ErrorKind::invalid_spec, "unknown esd-compare estimator: " + name);
}

inline EsdRow esd_replication(const ExperimentConfig& c, int r, std::vector<spectral::EsdGridPoint>* grid) {
  const auto m = simulate_market(c, r);
  const auto [est, samples] = esd_estimate(c, m);
  const Matrix& icv = m.paths.day_paths[0].realized_icv;
  const auto e_est = spectral::esd(est.matrix);
  const auto e_ref = spectral::esd(spectral::sample_cov_reference(icv, samples, rep_seed(c.seed, r, reference_stream)));
  const auto e_alt = spectral::esd(spectral::sample_cov_reference(icv, samples, rep_seed(c.seed, r, floor_stream)));
  EsdRow row;
  row.rep = r;
  row.samples = samples;
  row.distance = spectral::max_esd_distance(e_est, e_ref);
  row.noise_floor = spectral::max_esd_distance(e_alt, e_ref);
  if (est.theta_hat) row.theta_hat = *est.theta_hat;
  row.theta = sim::realized_targets(m.paths, 0).theta;
  if (grid) *grid = spectral::esd_grid(e_est, e_ref);
  return row;
}

inline void summarize(EsdSummary& s) {
  std::vector<double> d, f;
  for (const auto& row : s.rows) {
    d.push_back(row.distance);
    f.push_back(row.noise_floor);
  }
  s.mean = mean_of(d);
  s.sd = sd_of(d);
  s.floor_mean = mean_of(f);
  s.floor_sd = sd_of(f);
}

/// R replications of simulate, estimate, compare against S_N (or S_M) drawn
/// from the realized ICV. Writes reps.csv, esd_grid.csv and summary.json when
/// `out` is non-empty.
inline EsdSummary run_esd_compare(const ExperimentConfig& c, const fs::path& out = {}, int threads = 1) {
  require(c.days == 1, ErrorKind::invalid_spec, "esd-compare simulates a single day");
  EsdSummary s;
  s.rows.resize(c.reps);
  parallel_for(c.reps, threads, [&](int r) { s.rows[r] = esd_replication(c, r, r == 0 ? &s.grid : nullptr); });
  summarize(s);
  if (!out.empty()) {
    auto csv = io::open_out(out / "reps.csv");
    csv << kEsdRowsHeader << '\n';
    for (const auto& row : s.rows)
      csv << row.rep << ',' << row.samples << ',' << io::fmt(row.distance) << ',' << io::fmt(row.noise_floor) << ','
          << (std::isnan(row.theta_hat) ? std::string() : io::fmt(row.theta_hat)) << ',' << io::fmt(row.theta)
          << '\n';
    auto grid = io::open_out(out / "esd_grid.csv");
    grid << "x,f_estimate,f_reference\n";
    for (const auto& g : s.grid) grid << io::fmt(g.x) << ',' << io::fmt(g.f1) << ',' << io::fmt(g.f2) << '\n';
    io::write_json(out / "summary.json", {{"kind", "esd-compare"},
                                          {"estimator", c.estimator.name},
                                          {"reps", c.reps},
                                          {"distance", {{"mean", s.mean}, {"std", s.sd}}},
                                          {"noise_floor", {{"mean", s.floor_mean}, {"std", s.floor_sd}}},
                                          {"grid_distance_rep0", s.rows.front().distance},
                                          {"config", to_json(c)}});
  }
  return s;
}

// ---------------------------------------------------------------------------
// mc-rfl
// ---------------------------------------------------------------------------

/// Per-day Lambda for the four shrinkage settings on a two-day horizon.
inline std::vector<Matrix> setting_lambdas(const std::string& setting, int p) {
  const Matrix base = sim::build_lambda(sim::LambdaSpec::toeplitz(p, true));
  const Matrix spiked = sim::build_lambda(sim::LambdaSpec::spiked(p, {15.0, 10.0, 5.0}));
  if (setting == "I") return {base, base};
  if (setting == "II") return {spiked, spiked};
  if (setting == "III") return {spiked, sim::build_lambda(sim::LambdaSpec::spiked(p, {30.0, 10.0, 5.0}))};
  if (setting == "IV") return {spiked, sim::build_lambda(sim::LambdaSpec::spiked(p, {30.0}))};
  throw Error(ErrorKind::invalid_spec, "unknown setting: " + setting);
}

inline StampAverages one_day(const StampAverages& avgs, int d) {
  return {avgs.p, avgs.n, 1, Matrix(avgs.day(d))};
}

struct RflRow {
  int rep = 0;
  std::string setting;
  std::string estimator;
  double rfl = 0.0;
  int split = 0;  ///< chosen first-split size for ANS rows, 0 otherwise
};

struct RflCell {
  std::string setting;
  std::string estimator;
  double mean = 0.0;
  double sd = 0.0;
};

struct RflSummary {
  std::vector<RflRow> rows;  ///< replication-major, then setting, then estimator
  std::vector<RflCell> cells;

  const RflCell& cell(const std::string& setting, const std::string& estimator) const {
    for (const auto& c : cells)
      if (c.setting == setting && c.estimator == estimator) return c;
    throw Error(ErrorKind::invalid_input, "no summary for " + setting + "/" + estimator);
  }
};

inline constexpr const char* kRflRowsHeader = "rep,setting,estimator,rfl,split";

/// Estimators on a two-day panel, targeting day 2's ICV. Xi~ pools both days;
/// theta_hat and MNS eigenvalues use day 2; MNS eigenvectors use day 1.
inline std::vector<RflRow> rfl_estimates(const ExperimentConfig& c, const Market& m, int rep,
                                         const std::string& setting) {
  const auto avgs = stamp_average(m.observed);
  const int h = window_h(c);
  const auto preavg = pre_average(avgs, h);
  const auto day2 = one_day(avgs, 1);
  const double th = theta_hat(pre_average(day2, h));
  const Matrix xi = xi_tilde(preavg);
  const auto dec = shrink::decompose(xi);
  const Matrix& icv = m.paths.day_paths[1].realized_icv;
  const Matrix& sigma_breve = m.paths.day_paths[1].sigma_breve;
  const auto plan = shrink::make_split_plan(preavg.count(), c.estimator.permutations,
                                            rep_seed(c.seed, rep, permutation_stream));
  const auto cands = shrink::candidate_set(preavg.count());

  std::vector<RflRow> rows;
  for (const auto& name : c.mc_rfl.estimators) {
    RflRow row{rep, setting, name, 0.0, 0};
    if (name == "ns") {
      row.rfl = shrink::rfl(shrink::oracle_ns(dec, sigma_breve, th).matrix, icv);
    } else if (name == "mns") {
      const auto dec1 = shrink::decompose(xi_tilde(pre_average(one_day(avgs, 0), h)));
      row.rfl = shrink::rfl(shrink::mns(dec1, day2, window_kn(c), c.estimator.vartheta).matrix, icv);
    } else if (name == "pa_atva") {
      row.rfl = shrink::rfl(th * xi, icv);
    } else if (name == "oracle") {
      row.rfl = shrink::rfl(icv, icv);
    } else if (name == "ans" || (name.size() == 4 && name.rfind("ans", 0) == 0 && name[3] >= '1' && name[3] <= '7')) {
      auto p = plan;
      if (name != "ans") p.chosen = cands[name[3] - '1'];
      const auto res = shrink::ans(preavg, th, p);
      row.rfl = shrink::rfl(res.estimate.matrix, icv);
      row.split = res.split;
    } else {
      throw Error(ErrorKind::invalid_spec, "unknown mc-rfl estimator: " + name);
    }
    rows.push_back(row);
  }
  return rows;
}

/// The Table-3 protocol: two days, per-setting Lambda, shared clock, Brownian
/// and noise draws across settings within a replication.
inline RflSummary run_mc_rfl(const ExperimentConfig& c, const fs::path& out = {}, int threads = 1) {
  require(c.days == 2, ErrorKind::invalid_spec, "mc-rfl simulates two days");
  for (const auto& s : c.mc_rfl.settings) setting_lambdas(s, c.p);
  std::vector<std::vector<RflRow>> per_rep(c.reps);
  parallel_for(c.reps, threads, [&](int r) {
    for (const auto& setting : c.mc_rfl.settings) {
      const auto m = simulate_market(c, r, setting_lambdas(setting, c.p));
      const auto rows = rfl_estimates(c, m, r, setting);
      per_rep[r].insert(per_rep[r].end(), rows.begin(), rows.end());
    }
  });
  RflSummary s;
  for (auto& rows : per_rep) s.rows.insert(s.rows.end(), rows.begin(), rows.end());
  json table = json::object();
  for (const auto& setting : c.mc_rfl.settings)
    for (const auto& name : c.mc_rfl.estimators) {
      std::vector<double> v;
      for (const auto& row : s.rows)
        if (row.setting == setting && row.estimator == name) v.push_back(row.rfl);
      s.cells.push_back({setting, name, mean_of(v), sd_of(v)});
      table[setting][name] = mean_std(v);
    }
  if (!out.empty()) {
    auto csv = io::open_out(out / "rfl.csv");
    csv << kRflRowsHeader << '\n';
    for (const auto& row : s.rows)
      csv << row.rep << ',' << row.setting << ',' << row.estimator << ',' << io::fmt(row.rfl) << ',' << row.split
          << '\n';
    io::write_json(out / "summary.json",
                   {{"kind", "mc-rfl"}, {"reps", c.reps}, {"rfl", table}, {"config", to_json(c)}});
  }
  return s;
}

// ---------------------------------------------------------------------------
// backtest
// ---------------------------------------------------------------------------

struct LabeledDay {
  std::string label;
  TickPanel panel;
};

/// Every *.csv in `dir` (sorted by name), split into single-day panels.
inline std::vector<LabeledDay> load_days(const fs::path& dir, const io::IngestOptions& opt) {
  require(fs::is_directory(dir), ErrorKind::io, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<LabeledDay> days;
  for (const auto& f : files) {
    const auto ing = io::ingest_ticks(f, opt);
    for (int d = 0; d < ing.panel.days(); ++d) {
      std::string label = f.stem().string();
      if (ing.panel.days() > 1) label += ":" + ing.days[d];
      days.push_back({label, ing.panel.slice_days(d, 1)});
    }
  }
  require(!days.empty(), ErrorKind::io, "no CSV files in " + dir.string());
  return days;
}

inline portfolio::BacktestConfig backtest_config(const ExperimentConfig& c) {
  const auto& b = c.backtest;
  portfolio::BacktestConfig cfg;
  cfg.strategy = portfolio::parse_strategy(b.strategy);
  cfg.window_days = b.window_days;
  cfg.timing = portfolio::parse_timing(b.timing);
  cfg.h = b.h ? *b.h : static_cast<int>(std::lround(b.preaverage_minutes * 60.0 / b.stamp_seconds));
  cfg.kn = b.kn ? *b.kn : static_cast<int>(std::lround(b.kn_minutes * 60.0 / b.stamp_seconds));
  cfg.vartheta = c.estimator.vartheta;
  cfg.permutations = c.estimator.permutations;
  cfg.seed = c.seed;
  cfg.annualization = b.annualization;
  return cfg;
}

inline constexpr const char* kBacktestRowsHeader = "date,weights_digest,return,max_abs_weight";

inline portfolio::BacktestReport run_backtest(const ExperimentConfig& c, const fs::path& out = {},
                                              const fs::path& base_dir = {}) {
  fs::path input = c.backtest.input;
  if (input.is_relative() && !base_dir.empty()) input = base_dir / input;
  io::IngestOptions opt;
  opt.stamp_seconds = c.backtest.stamp_seconds;
  opt.trim_open_minutes = c.backtest.trim_open_minutes;
  const auto days = load_days(input, opt);
  std::vector<TickPanel> panels;
  for (const auto& d : days) panels.push_back(d.panel);
  const auto cfg = backtest_config(c);
  const auto report = portfolio::backtest(panels, cfg);
  if (!out.empty()) {
    auto csv = io::open_out(out / "days.csv");
    csv << kBacktestRowsHeader << '\n';
    for (const auto& d : report.days)
      csv << days[d.day].label << ',' << portfolio::weights_digest(d.weights) << ',' << io::fmt(d.ret) << ','
          << io::fmt(d.max_abs_weight) << '\n';
    io::write_json(out / "report.json", {{"kind", "backtest"},
                                         {"strategy", portfolio::to_string(report.strategy)},
                                         {"window_days", report.window_days},
                                         {"timing", portfolio::to_string(report.timing)},
                                         {"h", cfg.h},
                                         {"kn", cfg.kn},
                                         {"days", report.days.size()},
                                         {"mu", report.mu},
                                         {"sigma", report.sigma},
                                         {"sharpe", report.sharpe},
                                         {"ame", report.ame},
                                         {"config", to_json(c)}});
  }
  return report;
}

// ---------------------------------------------------------------------------
// mp-curve
// ---------------------------------------------------------------------------

struct MpCurve {
  std::vector<double> x;
  std::vector<double> density;
  double eta = 0.0;
  double mass = 0.0;  ///< trapezoid integral of the density over the grid
};

inline MpCurve run_mp_curve(const ExperimentConfig& c, const fs::path& out = {}) {
  const auto& mc = c.mp_curve;
  spectral::DiscreteMeasure h;
  if (mc.population == "point") {
    h = spectral::DiscreteMeasure::point_mass(1.0);
  } else {
    require(mc.population == "lambda", ErrorKind::invalid_spec, "unknown mp_curve population: " + mc.population);
    const Matrix lambda = sim::build_lambda(lambda_spec(c.lambda, c.p));
    h = spectral::DiscreteMeasure::from_spectrum(lambda * lambda.transpose());
  }
  const double tmax = *std::max_element(h.support.begin(), h.support.end());
  const double tmin = *std::min_element(h.support.begin(), h.support.end());
  const double edge = (1.0 + std::sqrt(mc.c)) * (1.0 + std::sqrt(mc.c));
  const double lo = mc.lo ? *mc.lo : (mc.c < 1.0 ? tmin * (1.0 - std::sqrt(mc.c)) * (1.0 - std::sqrt(mc.c)) : 0.0);
  const double hi = mc.hi ? *mc.hi : tmax * edge;
  require(hi > lo, ErrorKind::invalid_spec, "mp_curve grid is empty");
  MpCurve curve;
  curve.eta = mc.eta ? *mc.eta : 1e-2 * (hi - lo);
  for (int k = 0; k < mc.points; ++k) curve.x.push_back(lo + (hi - lo) * (k + 0.5) / mc.points);
  curve.density = spectral::mp_density(h, mc.c, curve.x, curve.eta);
  for (double f : curve.density) curve.mass += f * (hi - lo) / mc.points;
  if (!out.empty()) {
    auto csv = io::open_out(out / "mp_curve.csv");
    csv << "x,density\n";
    for (std::size_t k = 0; k < curve.x.size(); ++k) csv << io::fmt(curve.x[k]) << ',' << io::fmt(curve.density[k]) << '\n';
    io::write_json(out / "summary.json", {{"kind", "mp-curve"},
                                          {"c", mc.c},
                                          {"eta", curve.eta},
                                          {"points", mc.points},
                                          {"lo", lo},
                                          {"hi", hi},
                                          {"mass", curve.mass},
                                          {"config", to_json(c)}});
  }
  return curve;
}

}  // namespace hdicv::exp
