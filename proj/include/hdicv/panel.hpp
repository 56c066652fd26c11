#pragma once

#include <algorithm>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hdicv/common.hpp"

namespace hdicv {

/// Multi-transaction record: for every (day, stamp, stock) an ordered, non-empty
/// list of log prices. Stamps are 0-based internally (stamp i covers
/// (t_i, t_{i+1}] with t_i = i/n); the CSV form is 1-based.
class TickPanel {
 public:
  TickPanel() = default;

  TickPanel(int p, int n, int days, std::vector<int> counts, std::vector<double> prices)
      : p_(p), n_(n), days_(days), counts_(std::move(counts)), prices_(std::move(prices)) {
    require(p_ >= 1 && n_ >= 1 && days_ >= 1, ErrorKind::invalid_input,
            "panel dimensions must be positive");
    require(counts_.size() == cells(), ErrorKind::invalid_input, "panel count table has wrong size");
    offsets_.resize(counts_.size() + 1, 0);
    for (std::size_t c = 0; c < counts_.size(); ++c) {
      require(counts_[c] >= 1, ErrorKind::invalid_input, "every stamp needs at least one price");
      offsets_[c + 1] = offsets_[c] + static_cast<std::size_t>(counts_[c]);
    }
    require(prices_.size() == offsets_.back(), ErrorKind::invalid_input,
            "panel price list does not match transaction counts");
  }

  int p() const noexcept { return p_; }
  int n() const noexcept { return n_; }
  int days() const noexcept { return days_; }
  std::size_t cells() const noexcept {
    return static_cast<std::size_t>(days_) * static_cast<std::size_t>(n_) * static_cast<std::size_t>(p_);
  }
  std::size_t cell(int day, int stamp, int stock) const noexcept {
    return (static_cast<std::size_t>(day) * n_ + stamp) * p_ + stock;
  }

  int count(int day, int stamp, int stock) const { return counts_[cell(day, stamp, stock)]; }

  std::span<const double> prices(int day, int stamp, int stock) const {
    const auto c = cell(day, stamp, stock);
    return {prices_.data() + offsets_[c], static_cast<std::size_t>(counts_[c])};
  }

  const std::vector<int>& counts() const noexcept { return counts_; }
  const std::vector<double>& all_prices() const noexcept { return prices_; }
  std::size_t transactions() const noexcept { return prices_.size(); }

  /// True when every stamp has the same transaction count for all stocks.
  bool synchronous() const {
    for (std::size_t s = 0; s < cells(); s += p_)
      for (int q = 1; q < p_; ++q)
        if (counts_[s + q] != counts_[s]) return false;
    return true;
  }

  /// Copy restricted to days [first, first + count).
  TickPanel slice_days(int first, int count) const {
    require(first >= 0 && count >= 1 && first + count <= days_, ErrorKind::invalid_input,
            "day slice out of range");
    const auto c0 = cell(first, 0, 0);
    const auto c1 = cell(first + count - 1, n_ - 1, p_ - 1) + 1;
    std::vector<int> counts(counts_.begin() + c0, counts_.begin() + c1);
    std::vector<double> prices(prices_.begin() + offsets_[c0], prices_.begin() + offsets_[c1]);
    return {p_, n_, count, std::move(counts), std::move(prices)};
  }

  /// Same panel with every price multiplied by kappa.
  TickPanel scaled(double kappa) const {
    auto prices = prices_;
    for (auto& v : prices) v *= kappa;
    return {p_, n_, days_, counts_, std::move(prices)};
  }

  friend bool operator==(const TickPanel& a, const TickPanel& b) {
    return a.p_ == b.p_ && a.n_ == b.n_ && a.days_ == b.days_ && a.counts_ == b.counts_ &&
           a.prices_ == b.prices_;
  }

 private:
  int p_ = 0;
  int n_ = 0;
  int days_ = 0;
  std::vector<int> counts_;
  std::vector<std::size_t> offsets_{0};
  std::vector<double> prices_;
};

/// One row of the panel CSV; all indices 1-based as written.
struct PanelRecord {
  int day = 0;
  int stamp = 0;
  int stock = 0;
  int txn_index = 0;
  double price = 0.0;
};

inline constexpr const char* kPanelCsvHeader = "day,stamp,stock,txn_index,price";

inline void write_panel_csv(const TickPanel& panel, std::ostream& out) {
  out << kPanelCsvHeader << '\n';
  char buf[64];
  for (int d = 0; d < panel.days(); ++d)
    for (int i = 0; i < panel.n(); ++i)
      for (int q = 0; q < panel.p(); ++q) {
        const auto prices = panel.prices(d, i, q);
        for (std::size_t j = 0; j < prices.size(); ++j) {
          std::snprintf(buf, sizeof buf, "%.17g", prices[j]);
          out << d + 1 << ',' << i + 1 << ',' << q + 1 << ',' << j + 1 << ',' << buf << '\n';
        }
      }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  return fields;
}

}  // namespace detail

inline std::vector<PanelRecord> parse_panel_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::io, "empty panel CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kPanelCsvHeader, ErrorKind::io, "unexpected panel CSV header: " + line);
  std::vector<PanelRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    require(f.size() == 5, ErrorKind::io, "panel CSV line " + std::to_string(lineno) + " needs 5 fields");
    try {
      records.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      throw Error(ErrorKind::io, "malformed panel CSV line " + std::to_string(lineno));
    }
    const auto& r = records.back();
    require(r.day >= 1 && r.stamp >= 1 && r.stock >= 1 && r.txn_index >= 1, ErrorKind::io,
            "panel CSV indices are 1-based (line " + std::to_string(lineno) + ")");
  }
  return records;
}

/// 64-bit FNV-1a, used for the config digest in sidecars.
inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace hdicv
