#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vwapsig/rng.hpp"

namespace vwapsig {

struct MarketBar {
  std::int64_t timestamp = 0;  // epoch seconds UTC
  double price = 0.0;
  double volume = 0.0;
  bool filled = false;  // synthesized by gap filling
};

struct AssetSeries {
  std::string asset_id;
  std::vector<MarketBar> bars;
  std::int64_t frequency = 0;  // bar duration, seconds
};

struct LoadReport {
  std::size_t duplicates = 0;
  std::size_t gaps_filled = 0;
  std::vector<std::string> warnings;
};

struct CsvSchema {
  std::string timestamp_col = "timestamp";
  std::string price_col = "close";
  std::string volume_col = "volume";
  char delimiter = ',';
};

namespace detail {

inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097LL + static_cast<std::int64_t>(doe) - 719468LL;
}

// epoch seconds or ISO-8601 (date, optional time, optional trailing Z)
inline std::int64_t parse_timestamp(const std::string& s) {
  if (s.empty()) throw std::invalid_argument("empty timestamp");
  bool numeric = true;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i == 0 && (s[i] == '-' || s[i] == '+')) continue;
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) {
      numeric = false;
      break;
    }
  }
  if (numeric) return std::stoll(s);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char dash1 = 0, dash2 = 0, sep = 0, c1 = 0, c2 = 0;
  std::istringstream is(s);
  is >> y >> dash1 >> mo >> dash2 >> d;
  if (!is || dash1 != '-' || dash2 != '-') throw std::invalid_argument("bad timestamp: " + s);
  if (is.peek() == 'T' || is.peek() == ' ') {
    is >> sep >> h >> c1 >> mi >> c2 >> se;
    if (!is || c1 != ':' || c2 != ':') throw std::invalid_argument("bad timestamp: " + s);
  }
  return days_from_civil(y, mo, d) * 86400LL + h * 3600LL + mi * 60LL + se;
}

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

// Delimiter-separated bars with a header row. Bars come back sorted and
// deduplicated (last row wins); gaps that are whole multiples of the modal
// spacing are filled (price carried forward, volume zero, bar flagged).
inline AssetSeries load_series(const std::string& path, const CsvSchema& schema,
                               LoadReport* report = nullptr) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string header;
  if (!std::getline(f, header)) throw std::runtime_error(path + ": empty series");
  const auto cols = detail::split_line(header, schema.delimiter);
  auto find_col = [&](const std::string& name) {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (detail::trim(cols[i]) == name) return i;
    throw std::runtime_error(path + ": missing column '" + name + "'");
  };
  const std::size_t ts_col = find_col(schema.timestamp_col);
  const std::size_t px_col = find_col(schema.price_col);
  const std::size_t vol_col = find_col(schema.volume_col);

  std::vector<MarketBar> raw;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_line(line, schema.delimiter);
    const std::size_t need = std::max({ts_col, px_col, vol_col}) + 1;
    auto fail = [&](const std::string& why) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() < need) fail("expected " + std::to_string(need) + " columns");
    MarketBar bar;
    try {
      bar.timestamp = detail::parse_timestamp(detail::trim(fields[ts_col]));
      bar.price = std::stod(detail::trim(fields[px_col]));
      bar.volume = std::stod(detail::trim(fields[vol_col]));
    } catch (const std::exception& e) {
      fail(std::string("parse error: ") + e.what());
    }
    if (!std::isfinite(bar.price) || bar.price <= 0.0) fail("price must be finite and positive");
    if (!std::isfinite(bar.volume) || bar.volume < 0.0)
      fail("volume must be finite and non-negative");
    raw.push_back(bar);
  }
  if (raw.empty()) throw std::runtime_error(path + ": empty series");

  std::stable_sort(raw.begin(), raw.end(),
                   [](const MarketBar& a, const MarketBar& b) { return a.timestamp < b.timestamp; });
  AssetSeries series;
  {
    auto slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    series.asset_id = dot == std::string::npos ? base : base.substr(0, dot);
  }
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  for (const MarketBar& b : raw) {
    if (!series.bars.empty() && series.bars.back().timestamp == b.timestamp) {
      series.bars.back() = b;  // last row wins
      ++rep.duplicates;
      rep.warnings.push_back("duplicate timestamp " + std::to_string(b.timestamp));
    } else {
      series.bars.push_back(b);
    }
  }
  if (series.bars.size() == 1) {
    series.frequency = 0;
    return series;
  }

  // modal spacing
  std::map<std::int64_t, std::size_t> spacing;
  for (std::size_t i = 1; i < series.bars.size(); ++i)
    ++spacing[series.bars[i].timestamp - series.bars[i - 1].timestamp];
  std::int64_t freq = 0;
  std::size_t best = 0;
  for (auto& [gap, n] : spacing)
    if (n > best) {
      best = n;
      freq = gap;
    }
  if (freq <= 0) throw std::runtime_error(path + ": non-increasing timestamps");
  series.frequency = freq;

  std::vector<MarketBar> dense;
  dense.reserve(series.bars.size());
  dense.push_back(series.bars[0]);
  for (std::size_t i = 1; i < series.bars.size(); ++i) {
    const MarketBar& prev = dense.back();
    const MarketBar& cur = series.bars[i];
    const std::int64_t gap = cur.timestamp - prev.timestamp;
    if (gap % freq != 0)
      throw std::runtime_error(path + ": irregular spacing " + std::to_string(gap) + " s before " +
                               std::to_string(cur.timestamp) + " (frequency " +
                               std::to_string(freq) + " s)");
    for (std::int64_t ts = prev.timestamp + freq; ts < cur.timestamp; ts += freq) {
      dense.push_back(MarketBar{ts, prev.price, 0.0, true});
      ++rep.gaps_filled;
    }
    dense.push_back(cur);
  }
  if (rep.gaps_filled > 0)
    rep.warnings.push_back("filled " + std::to_string(rep.gaps_filled) + " missing bars");
  series.bars = std::move(dense);
  return series;
}

inline void save_series_csv(const AssetSeries& s, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "timestamp,close,volume\n";
  char buf[96];
  for (const MarketBar& b : s.bars) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g\n", static_cast<long long>(b.timestamp),
                  b.price, b.volume);
    f << buf;
  }
}

// ---- synthetic market ------------------------------------------------------

struct MarketProfile {
  double amplitude = 1.0;     // strength of the periodic volume profile
  std::size_t period = 24;    // bars per cycle
  double volume_noise = 0.3;  // lognormal sigma on volume
  double price_vol = 0.002;   // per-bar log-return sd
  double base_volume = 1000.0;
  double start_price = 100.0;
  double price_band = 0.5;  // reflecting bound on |log(P/P0)|
  std::int64_t frequency = 3600;
  std::int64_t start_ts = 1600000000;
};

// seasonal multiplier at a given phase; mean-one lognormal noise multiplies it
inline double seasonal_level(const MarketProfile& p, std::size_t bar_index) {
  const double phase =
      static_cast<double>(bar_index % p.period) / static_cast<double>(p.period);
  return std::exp(p.amplitude * std::sin(6.283185307179586 * phase));
}

inline AssetSeries synthesize_market(std::uint64_t seed, std::size_t n_bars,
                                     const MarketProfile& profile,
                                     const std::string& asset_id = "SYN") {
  if (profile.amplitude < 0.0) throw std::invalid_argument("synthesize_market: amplitude >= 0");
  AssetSeries s;
  s.asset_id = asset_id;
  s.frequency = profile.frequency;
  s.bars.reserve(n_bars);
  Rng rng(seed);
  double logp = 0.0;  // log(P / start_price)
  for (std::size_t i = 0; i < n_bars; ++i) {
    const double sv = profile.volume_noise;
    const double noise = rng.lognormal(-0.5 * sv * sv, sv);
    const double vol = profile.base_volume * seasonal_level(profile, i) * noise;
    MarketBar b;
    b.timestamp = profile.start_ts + static_cast<std::int64_t>(i) * profile.frequency;
    b.price = profile.start_price * std::exp(logp);
    b.volume = vol;
    s.bars.push_back(b);
    logp += profile.price_vol * rng.normal();
    if (logp > profile.price_band) logp = 2.0 * profile.price_band - logp;
    if (logp < -profile.price_band) logp = -2.0 * profile.price_band - logp;
  }
  return s;
}

}  // namespace vwapsig
