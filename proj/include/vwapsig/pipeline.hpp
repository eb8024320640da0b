#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "vwapsig/market.hpp"
#include "vwapsig/tensor.hpp"

namespace vwapsig {

// Feature layout: column 0 = one-bar log price return, column 1 = rolling
// median-normalized (and later min-max scaled) volume.
constexpr std::size_t kFeatReturn = 0;
constexpr std::size_t kFeatVolume = 1;
constexpr std::size_t kNumFeatures = 2;

struct NormalizedSeries {
  std::string asset_id;
  std::int64_t frequency = 0;
  Tensor features;  // T x d
  std::vector<double> raw_prices;
  std::vector<double> raw_volumes;
  std::vector<std::int64_t> timestamps;
  std::size_t warmup_len = 0;
  std::vector<char> flagged;  // filled bar or zero rolling median
  double volume_scale = 1.0;  // train-segment max applied to the volume column

  std::size_t size() const { return raw_prices.size(); }
};

struct SplitSpec {
  double train_frac = 0.8;
  double val_frac = 0.2;  // fraction of the train portion
};

struct SplitRanges {
  // contiguous, chronological half-open bar ranges
  std::size_t train_end = 0;  // train = [0, train_end)
  std::size_t val_end = 0;    // val = [train_end, val_end)
  std::size_t total = 0;      // test = [val_end, total)

  std::pair<std::size_t, std::size_t> train() const { return {0, train_end}; }
  std::pair<std::size_t, std::size_t> val() const { return {train_end, val_end}; }
  std::pair<std::size_t, std::size_t> test() const { return {val_end, total}; }
};

// normalized_t = raw_t / median(raw[t-shift-window+1 .. t-shift]); the first
// window+shift rows are warmup. Zero medians flag the row instead of
// producing a value. Shift equals the prediction horizon so that a value
// entering a window never depends on bars inside that window's future.
inline NormalizedSeries rolling_median_normalize(const AssetSeries& series,
                                                 std::size_t window_bars,
                                                 std::size_t shift_bars) {
  if (window_bars < 1) throw std::invalid_argument("rolling_median_normalize: window >= 1");
  const std::size_t T = series.bars.size();
  if (T <= window_bars + shift_bars)
    throw std::invalid_argument("rolling_median_normalize: series length " + std::to_string(T) +
                                " must exceed window+shift = " +
                                std::to_string(window_bars + shift_bars));
  NormalizedSeries out;
  out.asset_id = series.asset_id;
  out.frequency = series.frequency;
  out.warmup_len = window_bars + shift_bars;
  out.features = Tensor(T, kNumFeatures);
  out.raw_prices.resize(T);
  out.raw_volumes.resize(T);
  out.timestamps.resize(T);
  out.flagged.assign(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    out.raw_prices[t] = series.bars[t].price;
    out.raw_volumes[t] = series.bars[t].volume;
    out.timestamps[t] = series.bars[t].timestamp;
    if (series.bars[t].filled) out.flagged[t] = 1;
  }
  std::vector<double> buf(window_bars);
  for (std::size_t t = 0; t < T; ++t) {
    if (t >= 1)
      out.features.at(t, kFeatReturn) = std::log(out.raw_prices[t] / out.raw_prices[t - 1]);
    if (t < out.warmup_len) continue;
    const std::size_t hi = t - shift_bars;  // inclusive
    const std::size_t lo = hi - window_bars + 1;
    for (std::size_t i = 0; i < window_bars; ++i) buf[i] = out.raw_volumes[lo + i];
    std::sort(buf.begin(), buf.end());
    const double med = window_bars % 2 == 1
                           ? buf[window_bars / 2]
                           : 0.5 * (buf[window_bars / 2 - 1] + buf[window_bars / 2]);
    if (med == 0.0) {
      out.flagged[t] = 1;
      continue;
    }
    out.features.at(t, kFeatVolume) = out.raw_volumes[t] / med;
  }
  return out;
}

inline SplitRanges temporal_split_counts(std::size_t total, const SplitSpec& spec) {
  if (!(spec.train_frac > 0.0 && spec.train_frac < 1.0))
    throw std::invalid_argument("split: train fraction must be in (0,1)");
  if (!(spec.val_frac > 0.0 && spec.val_frac < 1.0))
    throw std::invalid_argument("split: validation fraction must be in (0,1)");
  const std::size_t trainval = static_cast<std::size_t>(
      std::floor(static_cast<double>(total) * spec.train_frac));
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(static_cast<double>(trainval) * spec.val_frac));
  SplitRanges r;
  r.train_end = trainval - n_val;
  r.val_end = trainval;
  r.total = total;
  return r;
}

// Chronological train/validation/test bar ranges, validated against the
// window geometry so that every segment can emit at least one sample.
inline SplitRanges temporal_split(const NormalizedSeries& series, const SplitSpec& spec,
                                  std::size_t sig_lookback, std::size_t horizon) {
  SplitRanges r = temporal_split_counts(series.size(), spec);
  const std::size_t per_seg = sig_lookback + horizon;  // bars one window occupies
  const std::size_t min_train = series.warmup_len + per_seg;
  const std::size_t min_total =
      std::max<std::size_t>(min_train, per_seg) + 2 * per_seg;  // rough but explicit
  auto fail = [&](const std::string& seg, std::size_t have, std::size_t need) {
    throw std::invalid_argument("split: " + seg + " segment has " + std::to_string(have) +
                                " bars, needs >= " + std::to_string(need) +
                                " (series total " + std::to_string(series.size()) +
                                ", minimum workable total ~" + std::to_string(min_total) + ")");
  };
  if (r.train_end < min_train) fail("train", r.train_end, min_train);
  if (r.val_end - r.train_end < per_seg) fail("validation", r.val_end - r.train_end, per_seg);
  if (r.total - r.val_end < per_seg) fail("test", r.total - r.val_end, per_seg);
  return r;
}

// Divides the volume column by its maximum over the training bar range.
// Test-segment values may exceed one.
inline NormalizedSeries minmax_scale_volume(NormalizedSeries series, const SplitRanges& split) {
  if (split.train_end == 0) throw std::invalid_argument("minmax_scale_volume: empty train segment");
  double mx = 0.0;
  for (std::size_t t = 0; t < split.train_end && t < series.size(); ++t) {
    if (t < series.warmup_len || series.flagged[t]) continue;
    mx = std::max(mx, series.features.at(t, kFeatVolume));
  }
  if (mx == 0.0) throw std::invalid_argument("minmax_scale_volume: degenerate volume");
  for (std::size_t t = 0; t < series.size(); ++t) series.features.at(t, kFeatVolume) /= mx;
  series.volume_scale = mx;
  return series;
}

struct SampleWindow {
  std::string asset_id;
  std::size_t asset_index = 0;
  std::size_t anchor = 0;  // index t: last bar observed before the horizon
  std::int64_t anchor_ts = 0;
  std::int64_t frequency = 0;
  Tensor sig_window;    // l_s x d, rows t-l_s+1 .. t
  Tensor local_window;  // (l+h-1) x d, rows t-l+1 .. t+h-1
  std::vector<double> target_prices;   // raw bars t+1 .. t+h
  std::vector<double> target_volumes;  // raw bars t+1 .. t+h
};

struct WindowSpec {
  std::size_t sig_lookback = 48;  // l_s
  std::size_t lookback = 24;      // l
  std::size_t horizon = 12;       // h
  std::size_t stride = 1;
  std::size_t offset = 0;          // shifts the first admissible anchor
  bool include_flagged = false;    // keep windows that touch flagged rows
};

// One window per admissible anchor inside [range_lo, range_hi), oldest first.
// Windows never reach outside the range, so split boundaries are never
// straddled; windows touching flagged rows are dropped unless asked for.
inline std::vector<SampleWindow> make_windows(const NormalizedSeries& series,
                                              const WindowSpec& spec, std::size_t range_lo,
                                              std::size_t range_hi) {
  if (!(spec.sig_lookback >= spec.lookback && spec.lookback >= 1))
    throw std::invalid_argument("make_windows: need l_s >= l >= 1");
  if (spec.horizon < 2) throw std::invalid_argument("make_windows: need h >= 2");
  if (spec.stride < 1) throw std::invalid_argument("make_windows: stride >= 1");
  std::vector<SampleWindow> out;
  const std::size_t lo = std::max(range_lo, series.warmup_len);
  if (range_hi > series.size()) range_hi = series.size();
  if (lo + spec.sig_lookback + spec.horizon > range_hi) return out;
  const std::size_t first = lo + spec.sig_lookback - 1 + spec.offset;
  const std::size_t last = range_hi - 1 - spec.horizon;  // anchor upper bound
  const std::size_t d = series.features.cols();
  for (std::size_t t = first; t <= last; t += spec.stride) {
    const std::size_t w_lo = t + 1 - spec.sig_lookback;
    const std::size_t w_hi = t + spec.horizon;  // inclusive; targets end here
    if (!spec.include_flagged) {
      bool bad = false;
      for (std::size_t i = w_lo; i <= w_hi && !bad; ++i) bad = series.flagged[i] != 0;
      if (bad) continue;
    }
    SampleWindow w;
    w.asset_id = series.asset_id;
    w.anchor = t;
    w.anchor_ts = series.timestamps[t];
    w.frequency = series.frequency;
    w.sig_window = Tensor(spec.sig_lookback, d);
    for (std::size_t i = 0; i < spec.sig_lookback; ++i)
      for (std::size_t j = 0; j < d; ++j) w.sig_window.at(i, j) = series.features.at(w_lo + i, j);
    const std::size_t local_rows = spec.lookback + spec.horizon - 1;
    w.local_window = Tensor(local_rows, d);
    for (std::size_t i = 0; i < local_rows; ++i)
      for (std::size_t j = 0; j < d; ++j)
        w.local_window.at(i, j) = series.features.at(t + 1 - spec.lookback + i, j);
    w.target_prices.resize(spec.horizon);
    w.target_volumes.resize(spec.horizon);
    for (std::size_t i = 0; i < spec.horizon; ++i) {
      w.target_prices[i] = series.raw_prices[t + 1 + i];
      w.target_volumes[i] = series.raw_volumes[t + 1 + i];
    }
    out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<SampleWindow> make_windows(const NormalizedSeries& series,
                                              const WindowSpec& spec) {
  return make_windows(series, spec, 0, series.size());
}

// expected stride-1..n window count for a clean full-range series
inline std::size_t admissible_window_count(std::size_t total, std::size_t warmup,
                                           const WindowSpec& spec) {
  const std::int64_t n = static_cast<std::int64_t>(total) - static_cast<std::int64_t>(warmup) -
                         static_cast<std::int64_t>(spec.sig_lookback) -
                         static_cast<std::int64_t>(spec.horizon) + 1 -
                         static_cast<std::int64_t>(spec.offset);
  if (n <= 0) return 0;
  return static_cast<std::size_t>((n + static_cast<std::int64_t>(spec.stride) - 1) /
                                  static_cast<std::int64_t>(spec.stride));
}

// ---- prepared-series persistence -------------------------------------------

inline void save_normalized(const NormalizedSeries& s, const std::string& data_path,
                            const std::string& meta_path, const SplitRanges& split) {
  std::ofstream f(data_path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + data_path);
  f << "timestamp,close,volume,ret,vol_norm,flagged\n";
  char buf[192];
  for (std::size_t t = 0; t < s.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%d\n",
                  static_cast<long long>(s.timestamps[t]), s.raw_prices[t], s.raw_volumes[t],
                  s.features.at(t, kFeatReturn), s.features.at(t, kFeatVolume),
                  static_cast<int>(s.flagged[t]));
    f << buf;
  }
  std::ofstream m(meta_path, std::ios::trunc);
  if (!m) throw std::runtime_error("cannot write " + meta_path);
  char mb[96];
  m << "asset_id=" << s.asset_id << "\n";
  m << "frequency=" << s.frequency << "\n";
  m << "rows=" << s.size() << "\n";
  m << "warmup_len=" << s.warmup_len << "\n";
  std::snprintf(mb, sizeof(mb), "volume_scale=%.17g\n", s.volume_scale);
  m << mb;
  m << "train_end=" << split.train_end << "\n";
  m << "val_end=" << split.val_end << "\n";
}

inline std::pair<NormalizedSeries, SplitRanges> load_normalized(const std::string& data_path,
                                                                const std::string& meta_path) {
  std::ifstream m(meta_path);
  if (!m) throw std::runtime_error("cannot read " + meta_path);
  NormalizedSeries s;
  SplitRanges split;
  std::string line;
  std::size_t rows = 0;
  while (std::getline(m, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "asset_id") s.asset_id = val;
    else if (key == "frequency") s.frequency = std::stoll(val);
    else if (key == "rows") rows = std::stoull(val);
    else if (key == "warmup_len") s.warmup_len = std::stoull(val);
    else if (key == "volume_scale") s.volume_scale = std::stod(val);
    else if (key == "train_end") split.train_end = std::stoull(val);
    else if (key == "val_end") split.val_end = std::stoull(val);
    else throw std::runtime_error(meta_path + ": unknown key '" + key + "'");
  }
  std::ifstream f(data_path);
  if (!f) throw std::runtime_error("cannot read " + data_path);
  std::getline(f, line);  // header
  s.features = Tensor(rows, kNumFeatures);
  s.raw_prices.resize(rows);
  s.raw_volumes.resize(rows);
  s.timestamps.resize(rows);
  s.flagged.assign(rows, 0);
  std::size_t t = 0;
  while (std::getline(f, line)) {
    if (detail::trim(line).empty()) continue;
    if (t >= rows) throw std::runtime_error(data_path + ": more rows than metadata declares");
    const auto fields = detail::split_line(line, ',');
    if (fields.size() != 6) throw std::runtime_error(data_path + ": bad row " + std::to_string(t));
    s.timestamps[t] = std::stoll(fields[0]);
    s.raw_prices[t] = std::stod(fields[1]);
    s.raw_volumes[t] = std::stod(fields[2]);
    s.features.at(t, kFeatReturn) = std::stod(fields[3]);
    s.features.at(t, kFeatVolume) = std::stod(fields[4]);
    s.flagged[t] = static_cast<char>(std::stoi(fields[5]));
    ++t;
  }
  if (t != rows) throw std::runtime_error(data_path + ": fewer rows than metadata declares");
  split.total = rows;
  return {std::move(s), split};
}

}  // namespace vwapsig
