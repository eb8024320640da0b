#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vwapsig/economics.hpp"

namespace vwapsig {

// One evaluated window; the unit of everything the report subcommand can
// regenerate without retraining.
struct SampleLoss {
  std::string variant;
  std::string split;  // train|test
  std::string asset;
  std::int64_t anchor_ts = 0;
  std::int64_t duration_s = 0;  // horizon * bar duration
  double abs_model = 0.0;
  double quad_model = 0.0;
  double abs_naive = 0.0;
  double quad_naive = 0.0;
  double signed_dev = 0.0;
};

struct ReportTables {
  std::string pooled_tsv;
  std::string per_asset_tsv;
  std::string duration_tsv;  // empty unless several durations are present
  std::string pretty_txt;
};

namespace detail {

inline std::string pct(double frac) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * frac);
  return buf;
}

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

struct Agg {
  double abs_m = 0.0, quad_m = 0.0, abs_n = 0.0, quad_n = 0.0;
  std::size_t n = 0;
  void add(const SampleLoss& s) {
    abs_m += s.abs_model;
    quad_m += s.quad_model;
    abs_n += s.abs_naive;
    quad_n += s.quad_naive;
    ++n;
  }
  double abs_improvement() const { return abs_n == 0.0 ? 0.0 : 1.0 - abs_m / abs_n; }
  double quad_improvement() const { return quad_n == 0.0 ? 0.0 : 1.0 - quad_m / quad_n; }
  double mean_abs_m() const { return n ? abs_m / static_cast<double>(n) : 0.0; }
  double mean_quad_m() const { return n ? quad_m / static_cast<double>(n) : 0.0; }
  double mean_abs_n() const { return n ? abs_n / static_cast<double>(n) : 0.0; }
  double mean_quad_n() const { return n ? quad_n / static_cast<double>(n) : 0.0; }
};

}  // namespace detail

// Serialization of per-sample losses (the `report` subcommand's only input).
inline std::string losses_to_tsv(const std::vector<SampleLoss>& losses) {
  std::ostringstream os;
  os << "variant\tsplit\tasset\tanchor_ts\tduration_s\tabs_model\tquad_model\tabs_naive\t"
        "quad_naive\tsigned_dev\n";
  char buf[256];
  for (const auto& s : losses) {
    std::snprintf(buf, sizeof(buf), "%s\t%s\t%s\t%lld\t%lld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                  s.variant.c_str(), s.split.c_str(), s.asset.c_str(),
                  static_cast<long long>(s.anchor_ts), static_cast<long long>(s.duration_s),
                  s.abs_model, s.quad_model, s.abs_naive, s.quad_naive, s.signed_dev);
    os << buf;
  }
  return os.str();
}

inline std::vector<SampleLoss> losses_from_tsv(std::istream& in) {
  std::vector<SampleLoss> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    SampleLoss s;
    std::string ts, dur, a, b, c, d, e;
    if (!std::getline(is, s.variant, '\t') || !std::getline(is, s.split, '\t') ||
        !std::getline(is, s.asset, '\t') || !std::getline(is, ts, '\t') ||
        !std::getline(is, dur, '\t') || !std::getline(is, a, '\t') || !std::getline(is, b, '\t') ||
        !std::getline(is, c, '\t') || !std::getline(is, d, '\t') || !std::getline(is, e, '\t'))
      throw std::runtime_error("bad loss row: " + line);
    s.anchor_ts = std::stoll(ts);
    s.duration_s = std::stoll(dur);
    s.abs_model = std::stod(a);
    s.quad_model = std::stod(b);
    s.abs_naive = std::stod(c);
    s.quad_naive = std::stod(d);
    s.signed_dev = std::stod(e);
    out.push_back(std::move(s));
  }
  return out;
}

// Renders the three table shapes documented in docs/report_format.md:
// pooled improvement rows per variant x split (sample- and asset-weighted),
// per-asset rows, and a duration breakdown (basis points / millionths) when
// several order durations are present.
inline ReportTables report_tables(const std::vector<SampleLoss>& losses) {
  using detail::Agg;
  std::map<std::pair<std::string, std::string>, Agg> pooled;
  std::map<std::pair<std::string, std::string>, std::map<std::string, Agg>> by_asset;
  std::map<std::int64_t, std::map<std::string, Agg>> by_duration;
  std::set<std::int64_t> durations;
  for (const auto& s : losses) {
    const auto key = std::make_pair(s.variant, s.split);
    pooled[key].add(s);
    by_asset[key][s.asset].add(s);
    by_duration[s.duration_s][s.asset].add(s);
    durations.insert(s.duration_s);
  }

  ReportTables out;
  {
    std::ostringstream os;
    os << "model\tsplit\tabs_improvement\tquad_improvement\tabs_improvement_asset_weighted\t"
          "quad_improvement_asset_weighted\tsamples\n";
    for (const auto& [key, agg] : pooled) {
      double aw_abs = 0.0, aw_quad = 0.0;
      const auto& assets = by_asset.at(key);
      for (const auto& [asset, a] : assets) {
        aw_abs += a.abs_improvement();
        aw_quad += a.quad_improvement();
      }
      aw_abs /= static_cast<double>(assets.size());
      aw_quad /= static_cast<double>(assets.size());
      os << key.first << "\t" << key.second << "\t" << detail::pct(agg.abs_improvement()) << "\t"
         << detail::pct(agg.quad_improvement()) << "\t" << detail::pct(aw_abs) << "\t"
         << detail::pct(aw_quad) << "\t" << agg.n << "\n";
    }
    out.pooled_tsv = os.str();
  }
  {
    std::ostringstream os;
    os << "asset\tmodel\tsplit\tabs_improvement\tquad_improvement\tsamples\n";
    for (const auto& [key, assets] : by_asset)
      for (const auto& [asset, a] : assets)
        os << asset << "\t" << key.first << "\t" << key.second << "\t"
           << detail::pct(a.abs_improvement()) << "\t" << detail::pct(a.quad_improvement()) << "\t"
           << a.n << "\n";
    out.per_asset_tsv = os.str();
  }
  if (durations.size() > 1) {
    std::ostringstream os;
    os << "duration_min\tasset\torders\tnaive_abs_bp\tnaive_quad_millionth\tmodel_abs_bp\t"
          "model_quad_millionth\tabs_improvement\tquad_improvement\n";
    for (const auto& [dur, assets] : by_duration)
      for (const auto& [asset, a] : assets)
        os << dur / 60 << "\t" << asset << "\t" << a.n << "\t" << detail::num(a.mean_abs_n() * 1e4)
           << "\t" << detail::num(a.mean_quad_n() * 1e6) << "\t" << detail::num(a.mean_abs_m() * 1e4)
           << "\t" << detail::num(a.mean_quad_m() * 1e6) << "\t" << detail::pct(a.abs_improvement())
           << "\t" << detail::pct(a.quad_improvement()) << "\n";
    out.duration_tsv = os.str();
  }
  {
    std::ostringstream os;
    os << "Average improvement versus naive per model and split\n";
    os << "(improvements are 1 - mean(model)/mean(naive), sample-weighted)\n\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %-6s %22s %22s %9s\n", "Model", "Split",
                  "Abs. improvement", "Quad. improvement", "Samples");
    os << buf;
    for (const auto& [key, agg] : pooled) {
      std::snprintf(buf, sizeof(buf), "%-10s %-6s %22s %22s %9zu\n", key.first.c_str(),
                    key.second.c_str(), detail::pct(agg.abs_improvement()).c_str(),
                    detail::pct(agg.quad_improvement()).c_str(), agg.n);
      os << buf;
    }
    out.pretty_txt = os.str();
  }
  return out;
}

}  // namespace vwapsig
