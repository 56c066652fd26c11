#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "hdicv/experiments.hpp"

namespace fs = std::filesystem;
using namespace hdicv;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Options {
  std::string config;
  std::string out;
  std::optional<int> reps;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

int run(exp::Kind kind, const Options& o) {
  auto cfg = exp::load_config(o.config);
  require(cfg.kind == kind, ErrorKind::invalid_spec,
          std::string("config is for '") + exp::to_string(cfg.kind) + "', not '" + exp::to_string(kind) + "'");
  if (o.reps) cfg.reps = *o.reps;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output = o.out;
  exp::validate(cfg);
  require(!cfg.output.empty(), ErrorKind::invalid_spec, "no output directory (use --out or \"output\")");
  const fs::path out = cfg.output;
  fs::create_directories(out);
  io::write_json(out / "config.json", exp::to_json(cfg));

  switch (kind) {
    case exp::Kind::simulate:
      exp::run_simulate(cfg, out, o.threads);
      std::printf("simulated %d replication(s) into %s\n", cfg.reps, out.string().c_str());
      break;
    case exp::Kind::esd_compare: {
      const auto s = exp::run_esd_compare(cfg, out, o.threads);
      std::printf("distance mean %.5f sd %.5f (noise floor %.5f) over %d reps\n", s.mean, s.sd, s.floor_mean,
                  cfg.reps);
      break;
    }
    case exp::Kind::mc_rfl: {
      const auto s = exp::run_mc_rfl(cfg, out, o.threads);
      for (const auto& c : s.cells)
        std::printf("%-4s %-8s mean %.3f sd %.3f\n", c.setting.c_str(), c.estimator.c_str(), c.mean, c.sd);
      break;
    }
    case exp::Kind::backtest: {
      const auto r = exp::run_backtest(cfg, out, fs::path(o.config).parent_path());
      std::printf("%zu days: mu %.4f sigma %.4f sharpe %.3f AME %.4f\n", r.days.size(), r.mu, r.sigma, r.sharpe,
                  r.ame);
      break;
    }
    case exp::Kind::mp_curve: {
      const auto c = exp::run_mp_curve(cfg, out);
      std::printf("%zu points, eta %.3g, mass %.4f\n", c.x.size(), c.eta, c.mass);
      break;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"High-dimensional integrated covariance experiments"};
  app.require_subcommand(1);
  Options o;
  const unsigned hw = std::thread::hardware_concurrency();
  o.threads = hw ? static_cast<int>(hw) : 1;

  struct Sub {
    const char* name;
    exp::Kind kind;
    const char* help;
  };
  const Sub subs[] = {
      {"simulate", exp::Kind::simulate, "simulate tick panels and write them as CSV"},
      {"esd-compare", exp::Kind::esd_compare, "compare estimator ESDs with a Wishart reference"},
      {"mc-rfl", exp::Kind::mc_rfl, "relative Frobenius loss of shrinkage estimators"},
      {"backtest", exp::Kind::backtest, "rolling minimum-variance backtest over daily CSVs"},
      {"mp-curve", exp::Kind::mp_curve, "Marcenko-Pastur density on a grid"},
  };
  std::optional<exp::Kind> chosen;
  for (const auto& s : subs) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    cmd->add_option("--config", o.config, "experiment JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--reps", o.reps, "replication count")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    const exp::Kind kind = s.kind;
    cmd->callback([&chosen, kind] { chosen = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    return run(*chosen, o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.numerical() ? kExitNumerical : kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
