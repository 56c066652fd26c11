#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "hdicv/common.hpp"
#include "hdicv/estimators.hpp"
#include "hdicv/panel.hpp"

// File formats: panel CSV + sidecar, covariance CSV + metadata, raw trades.

namespace hdicv::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
  return in;
}

inline void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

inline json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_spec, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// panels
// ---------------------------------------------------------------------------

/// Rebuilds a panel from CSV rows. Every (day, stamp, stock) cell must be
/// present with transaction indices 1..L.
inline TickPanel panel_from_records(std::vector<PanelRecord> records) {
  require(!records.empty(), ErrorKind::io, "panel has no rows");
  std::stable_sort(records.begin(), records.end(), [](const PanelRecord& a, const PanelRecord& b) {
    return std::tie(a.day, a.stamp, a.stock, a.txn_index) < std::tie(b.day, b.stamp, b.stock, b.txn_index);
  });
  int p = 0, n = 0, days = 0;
  for (const auto& r : records) {
    p = std::max(p, r.stock);
    n = std::max(n, r.stamp);
    days = std::max(days, r.day);
  }
  std::vector<int> counts(static_cast<std::size_t>(p) * n * days, 0);
  std::vector<double> prices;
  prices.reserve(records.size());
  for (const auto& r : records) {
    int& c = counts[(static_cast<std::size_t>(r.day - 1) * n + (r.stamp - 1)) * p + (r.stock - 1)];
    require(r.txn_index == c + 1, ErrorKind::io,
            "transaction indices must run 1..L (day " + std::to_string(r.day) + ", stamp " +
                std::to_string(r.stamp) + ", stock " + std::to_string(r.stock) + ")");
    ++c;
    prices.push_back(r.price);
  }
  for (std::size_t k = 0; k < counts.size(); ++k)
    require(counts[k] > 0, ErrorKind::io,
            "panel CSV misses cell (day " + std::to_string(k / p / n + 1) + ", stamp " +
                std::to_string(k / p % n + 1) + ", stock " + std::to_string(k % p + 1) + ")");
  return {p, n, days, std::move(counts), std::move(prices)};
}

inline TickPanel read_panel_csv(const fs::path& path) {
  auto in = open_in(path);
  return panel_from_records(parse_panel_csv(in));
}

inline void write_panel(const fs::path& csv, const TickPanel& panel, std::uint64_t seed,
                        const std::string& spec_text) {
  auto out = open_out(csv);
  write_panel_csv(panel, out);
  char digest[20];
  std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(fnv1a64(spec_text)));
  json side{{"p", panel.p()}, {"n", panel.n()}, {"days", panel.days()}, {"seed", seed}, {"spec_digest", digest}};
  fs::path sidecar = csv;
  sidecar.replace_extension(".json");
  write_json(sidecar, side);
}

// ---------------------------------------------------------------------------
// covariance estimates
// ---------------------------------------------------------------------------

/// Row-major `i,j,value` with 1-based indices.
inline void write_matrix_csv(const fs::path& path, const Matrix& m) {
  auto out = open_out(path);
  out << "i,j,value\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << i + 1 << ',' << j + 1 << ',' << fmt(m(i, j)) << '\n';
}

inline Matrix read_matrix_csv(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::io, "empty matrix CSV");
  std::vector<std::tuple<int, int, double>> cells;
  int rows = 0, cols = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    require(f.size() == 3, ErrorKind::io, "matrix CSV rows need 3 fields");
    const int i = std::stoi(f[0]), j = std::stoi(f[1]);
    cells.emplace_back(i, j, std::stod(f[2]));
    rows = std::max(rows, i);
    cols = std::max(cols, j);
  }
  Matrix m = Matrix::Zero(rows, cols);
  for (const auto& [i, j, v] : cells) m(i - 1, j - 1) = v;
  return m;
}

inline void write_estimate(const fs::path& stem, const CovEstimate& est, int n, std::optional<int> h) {
  write_matrix_csv(fs::path(stem).concat(".csv"), est.matrix);
  json meta{{"tag", to_string(est.tag)}, {"p", est.matrix.rows()}, {"n", n}, {"h", nullptr}, {"theta_hat", nullptr}};
  if (h) meta["h"] = *h;
  if (est.theta_hat) meta["theta_hat"] = *est.theta_hat;
  write_json(fs::path(stem).concat(".json"), meta);
}

// ---------------------------------------------------------------------------
// raw trade ingestion
// ---------------------------------------------------------------------------

inline constexpr const char* kTradeCsvHeader = "day,time,stock,price";
inline constexpr int kSessionSeconds = 23400;  // 09:30 to 16:00

/// Seconds after the 09:30:00 open; accepts plain seconds or HH:MM:SS[.fff].
inline double parse_session_time(const std::string& text) {
  try {
    if (text.find(':') == std::string::npos) return std::stod(text);
    const auto a = text.find(':'), b = text.find(':', a + 1);
    require(b != std::string::npos, ErrorKind::ingestion, "bad time " + text);
    const double h = std::stod(text.substr(0, a));
    const double m = std::stod(text.substr(a + 1, b - a - 1));
    const double s = std::stod(text.substr(b + 1));
    return h * 3600.0 + m * 60.0 + s - 9.5 * 3600.0;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorKind::ingestion, "bad time " + text);
  }
}

struct IngestOptions {
  int stamp_seconds = 10;
  double trim_open_minutes = 5.0;
  int session_seconds = kSessionSeconds;
};

struct IngestResult {
  TickPanel panel;
  std::vector<std::string> days;    ///< day labels in panel order
  std::vector<std::string> stocks;  ///< stock labels in panel order
};

inline int stamps_per_day(const IngestOptions& opt) {
  const double usable = opt.session_seconds - 60.0 * opt.trim_open_minutes;
  require(opt.stamp_seconds >= 1 && usable >= opt.stamp_seconds, ErrorKind::invalid_spec,
          "stamp length and trim leave no stamps");
  return static_cast<int>(std::floor(usable / opt.stamp_seconds));
}

struct Trade {
  std::string day;
  double time;
  std::string stock;
  double price;
};

/// Buckets trades into stamps (t_{i-1}, t_i] after dropping the first
/// `trim_open_minutes`, takes logs, fills empty stamps with one copy of the
/// previous last price (leading gaps take the day's first price).
inline IngestResult bucket_trades(std::vector<Trade> trades, const IngestOptions& opt) {
  require(!trades.empty(), ErrorKind::ingestion, "no trades");
  const int n = stamps_per_day(opt);
  const double start = 60.0 * opt.trim_open_minutes;
  const double end = start + static_cast<double>(n) * opt.stamp_seconds;

  std::map<std::string, int> day_ids, stock_ids;
  for (const auto& t : trades) {
    day_ids.emplace(t.day, 0);
    stock_ids.emplace(t.stock, 0);
  }
  IngestResult out;
  for (auto& [label, id] : day_ids) {
    id = static_cast<int>(out.days.size());
    out.days.push_back(label);
  }
  for (auto& [label, id] : stock_ids) {
    id = static_cast<int>(out.stocks.size());
    out.stocks.push_back(label);
  }
  const int p = static_cast<int>(out.stocks.size());
  const int days = static_cast<int>(out.days.size());

  std::stable_sort(trades.begin(), trades.end(), [](const Trade& a, const Trade& b) { return a.time < b.time; });
  std::vector<std::vector<double>> cells(static_cast<std::size_t>(days) * n * p);
  for (const auto& t : trades) {
    require(t.price > 0.0, ErrorKind::ingestion, "non-positive price for " + t.stock);
    if (t.time < start || t.time > end) continue;
    const double rel = (t.time - start) / opt.stamp_seconds;
    const int stamp = std::clamp(static_cast<int>(std::ceil(rel)) - 1, 0, n - 1);
    const std::size_t c = (static_cast<std::size_t>(day_ids[t.day]) * n + stamp) * p + stock_ids[t.stock];
    cells[c].push_back(std::log(t.price));
  }

  std::vector<int> counts(cells.size());
  std::vector<double> prices;
  std::string missing;
  for (int d = 0; d < days; ++d)
    for (int q = 0; q < p; ++q) {
      int first = -1;
      for (int i = 0; i < n && first < 0; ++i)
        if (!cells[(static_cast<std::size_t>(d) * n + i) * p + q].empty()) first = i;
      if (first < 0) {
        missing += (missing.empty() ? "" : ", ") + out.stocks[q] + " on " + out.days[d];
        continue;
      }
      double last = cells[(static_cast<std::size_t>(d) * n + first) * p + q].front();
      for (int i = 0; i < n; ++i) {
        auto& cell = cells[(static_cast<std::size_t>(d) * n + i) * p + q];
        if (cell.empty()) cell.push_back(last);
        last = cell.back();
      }
    }
  require(missing.empty(), ErrorKind::ingestion, "stocks without trades: " + missing);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    counts[c] = static_cast<int>(cells[c].size());
    prices.insert(prices.end(), cells[c].begin(), cells[c].end());
  }
  out.panel = TickPanel(p, n, days, std::move(counts), std::move(prices));
  return out;
}

inline std::vector<Trade> parse_trades(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::ingestion, "empty trade file");
  std::vector<Trade> trades;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    require(f.size() == 4, ErrorKind::ingestion, "trade line " + std::to_string(lineno) + " needs 4 fields");
    double price = 0.0;
    try {
      price = std::stod(f[3]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::ingestion, "bad price on line " + std::to_string(lineno));
    }
    trades.push_back({f[0], parse_session_time(f[1]), f[2], price});
  }
  return trades;
}

/// Reads a panel CSV unchanged (prices already log prices) or buckets a raw
/// trade file with header `day,time,stock,price`.
inline IngestResult ingest_ticks(const fs::path& path, const IngestOptions& opt = {}) {
  auto in = open_in(path);
  std::string header;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  in.seekg(0);
  if (header == kPanelCsvHeader) {
    IngestResult out;
    out.panel = panel_from_records(parse_panel_csv(in));
    for (int d = 0; d < out.panel.days(); ++d) out.days.push_back(std::to_string(d + 1));
    for (int q = 0; q < out.panel.p(); ++q) out.stocks.push_back(std::to_string(q + 1));
    return out;
  }
  require(header == kTradeCsvHeader, ErrorKind::ingestion, "unrecognized CSV header in " + path.string());
  return bucket_trades(parse_trades(in), opt);
}

}  // namespace hdicv::io
