#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vwapsig {

inline double market_vwap(std::span<const double> prices, std::span<const double> volumes) {
  if (prices.size() != volumes.size()) throw std::invalid_argument("market_vwap: size mismatch");
  double pv = 0.0, v = 0.0;
  for (std::size_t i = 0; i < prices.size(); ++i) {
    pv += prices[i] * volumes[i];
    v += volumes[i];
  }
  if (v <= 0.0) throw std::invalid_argument("market_vwap: zero total volume");
  return pv / v;
}

// normalized market volume fractions; requires positive total volume
inline std::vector<double> market_fractions(std::span<const double> volumes) {
  double tot = 0.0;
  for (double v : volumes) tot += v;
  if (tot <= 0.0) throw std::invalid_argument("market_fractions: zero total volume");
  std::vector<double> out(volumes.size());
  for (std::size_t i = 0; i < volumes.size(); ++i) out[i] = volumes[i] / tot;
  return out;
}

inline double exec_price(std::span<const double> prices, std::span<const double> allocation) {
  if (prices.size() != allocation.size()) throw std::invalid_argument("exec_price: size mismatch");
  double sum = 0.0, px = 0.0;
  for (std::size_t i = 0; i < allocation.size(); ++i) {
    if (allocation[i] < -1e-12) throw std::invalid_argument("exec_price: negative allocation");
    sum += allocation[i];
    px += prices[i] * allocation[i];
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("exec_price: allocation sums to " + std::to_string(sum));
  return px;
}

struct LossValues {
  double signed_dev = 0.0;  // exec/vwap - 1
  double absolute = 0.0;    // |signed_dev|
  double quadratic = 0.0;   // signed_dev^2
};

inline LossValues vwap_losses(std::span<const double> prices, std::span<const double> volumes,
                              std::span<const double> allocation) {
  const double vwap = market_vwap(prices, volumes);
  const double exec = exec_price(prices, allocation);
  LossValues out;
  out.signed_dev = exec / vwap - 1.0;
  out.absolute = std::fabs(out.signed_dev);
  out.quadratic = out.signed_dev * out.signed_dev;
  return out;
}

struct SlippageDecomposition {
  double price_component = 0.0;       // sum |(P_t - VWAP_t) q_t|
  double allocation_component = 0.0;  // sum |VWAP_t (q_t - V~_t)|
  double realized = 0.0;              // |exec - VWAP|
};

// The bound decomposes realized slippage into a price-deviation term and an
// allocation-error term. per_bin_vwap defaults to the bar price (the finest
// VWAP available at bar granularity).
inline SlippageDecomposition slippage_bound(std::span<const double> prices,
                                            std::span<const double> volumes,
                                            std::span<const double> allocation,
                                            std::span<const double> per_bin_vwap = {}) {
  const double vwap = market_vwap(prices, volumes);
  const double exec = exec_price(prices, allocation);
  const std::vector<double> frac = market_fractions(volumes);
  SlippageDecomposition out;
  out.realized = std::fabs(exec - vwap);
  for (std::size_t t = 0; t < prices.size(); ++t) {
    const double vw_t = per_bin_vwap.empty() ? prices[t] : per_bin_vwap[t];
    out.price_component += std::fabs((prices[t] - vw_t) * allocation[t]);
    out.allocation_component += std::fabs(vw_t * (allocation[t] - frac[t]));
  }
  return out;
}

// 1 - mean(model)/mean(baseline); ratio of means so near-zero per-sample
// baselines cannot blow up the aggregate
inline double improvement_vs_baseline(std::span<const double> model_losses,
                                      std::span<const double> baseline_losses) {
  if (model_losses.size() != baseline_losses.size())
    throw std::invalid_argument("improvement: sample sets differ");
  if (model_losses.empty()) throw std::invalid_argument("improvement: no samples");
  double ms = 0.0, bs = 0.0;
  for (double x : model_losses) ms += x;
  for (double x : baseline_losses) bs += x;
  if (bs == 0.0) throw std::invalid_argument("improvement: baseline mean is zero");
  return 1.0 - ms / bs;
}

}  // namespace vwapsig
