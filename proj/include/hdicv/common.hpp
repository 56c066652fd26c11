#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hdicv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class ErrorKind {
  invalid_spec,
  invalid_input,
  insufficient_data,
  degenerate_input,
  invalid_breakpoints,
  invalid_window,
  unsupported,
  dimension_mismatch,
  convergence,
  ingestion,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_spec: return "invalid-spec";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::insufficient_data: return "insufficient-data";
    case ErrorKind::degenerate_input: return "degenerate-input";
    case ErrorKind::invalid_breakpoints: return "invalid-breakpoints";
    case ErrorKind::invalid_window: return "invalid-window";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::ingestion: return "ingestion";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Failures of the numerics, as opposed to bad configuration or input.
  bool numerical() const noexcept {
    return kind_ == ErrorKind::convergence || kind_ == ErrorKind::degenerate_input;
  }

 private:
  ErrorKind kind_;
};

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) throw Error(kind, what);
}

/// Derives an independent 64-bit seed from a master seed and a stream path,
/// e.g. derive_seed(master, {replication, stream_id}).
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(master);
  for (auto v : path) push(v);
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

inline bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace hdicv
