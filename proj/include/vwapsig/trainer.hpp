#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "vwapsig/model.hpp"
#include "vwapsig/report.hpp"

namespace vwapsig {

struct AssetData {
  NormalizedSeries series;
  SplitRanges split;
  std::vector<SampleWindow> train, val, test;
};

namespace detail {

inline std::vector<SampleWindow> windows_for_range(const NormalizedSeries& s,
                                                   const RunConfig& cfg, std::size_t lo,
                                                   std::size_t hi, std::size_t stride) {
  WindowSpec spec{cfg.sig_lookback, cfg.lookback, cfg.horizon, stride, cfg.window_offset, false};
  std::vector<SampleWindow> ws = make_windows(s, spec, lo, hi);
  std::vector<SampleWindow> out;
  for (auto& w : ws) {
    double tot = 0.0;
    for (double v : w.target_volumes) tot += v;
    if (tot > 0.0) out.push_back(std::move(w));  // zero-volume horizons are unusable
  }
  return out;
}

inline std::vector<const SampleWindow*> pointers(const std::vector<SampleWindow>& ws) {
  std::vector<const SampleWindow*> out(ws.size());
  for (std::size_t i = 0; i < ws.size(); ++i) out[i] = &ws[i];
  return out;
}

}  // namespace detail

// normalize -> split -> scale -> window, with windows confined per segment
inline AssetData prepare_asset(const AssetSeries& raw, const RunConfig& cfg) {
  AssetData a;
  a.series = rolling_median_normalize(raw, cfg.median_window, cfg.median_shift);
  a.split = temporal_split(a.series, SplitSpec{cfg.train_frac, cfg.val_frac}, cfg.sig_lookback,
                           cfg.horizon);
  a.series = minmax_scale_volume(std::move(a.series), a.split);
  a.train = detail::windows_for_range(a.series, cfg, 0, a.split.train_end, cfg.train_stride);
  a.val = detail::windows_for_range(a.series, cfg, a.split.train_end, a.split.val_end,
                                    cfg.eval_stride);
  a.test =
      detail::windows_for_range(a.series, cfg, a.split.val_end, a.split.total, cfg.eval_stride);
  return a;
}

// same, for a series already normalized and persisted by `prepare`
inline AssetData prepare_prepared(NormalizedSeries series, SplitRanges split,
                                  const RunConfig& cfg) {
  AssetData a;
  a.split = split;
  a.series = std::move(series);
  a.train = detail::windows_for_range(a.series, cfg, 0, split.train_end, cfg.train_stride);
  a.val =
      detail::windows_for_range(a.series, cfg, split.train_end, split.val_end, cfg.eval_stride);
  a.test = detail::windows_for_range(a.series, cfg, split.val_end, split.total, cfg.eval_stride);
  return a;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ParameterStore store;
  std::vector<EpochLog> history;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// forward-only mean absolute VWAP loss over a window set
inline double eval_loss(const VwapModel& model, ParameterStore& st,
                        const std::vector<const SampleWindow*>& windows, std::size_t batch) {
  if (windows.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < windows.size(); i += batch) {
    const std::size_t n = std::min(batch, windows.size() - i);
    std::vector<const SampleWindow*> chunk(windows.begin() + i, windows.begin() + i + n);
    Tensor alloc = model.infer_allocations(st, chunk);
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> q(alloc.row_ptr(b), alloc.row_ptr(b) + alloc.cols());
      total += vwap_losses(chunk[b]->target_prices, chunk[b]->target_volumes, q).absolute;
    }
  }
  return total / static_cast<double>(windows.size());
}

namespace detail {

// Shared SGD loop: epochs over shuffled batches, validation-plateau lr
// halving, early stopping, best-weight restore. The store arrives already
// initialized (fresh or warm).
inline void train_loop(const VwapModel& model, TrainResult& res, double lr0,
                       const std::vector<const SampleWindow*>& train_w,
                       const std::vector<const SampleWindow*>& val_w,
                       const std::function<void(const EpochLog&)>& on_epoch) {
  const RunConfig& cfg = model.cfg;
  if (cfg.epochs == 0 || train_w.empty() || lr0 == 0.0) {
    res.best_val = eval_loss(model, res.store, val_w, cfg.batch);
    return;
  }
  Rng shuffle_rng = Rng(cfg.seed).split(0x5u);
  double lr = lr0;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values;
  std::size_t plateau = 0, since_best = 0;
  std::vector<std::size_t> order(train_w.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic Fisher-Yates reshuffle each epoch
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      if (n < 2 && model.use_signature()) continue;  // batch statistics need >= 2
      std::vector<const SampleWindow*> batch(n);
      for (std::size_t i = 0; i < n; ++i) batch[i] = train_w[order[start + i]];
      Tape tape;
      ParamCtx ctx{tape, res.store};
      Var alloc = model.allocations(ctx, batch, /*train=*/true);
      Var loss = model.batch_loss(ctx, alloc, batch);
      const double loss_v = tape.val(loss).item();
      if (!std::isfinite(loss_v))
        throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(start / cfg.batch) + ", variant " +
                               variant_name(cfg.variant));
      res.store.zero_grad();
      tape.backward(loss);
      res.store.collect_grads(tape);
      res.store.adam_step(lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      epoch_loss += loss_v * static_cast<double>(n);
      seen += n;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
    log.val_loss = eval_loss(model, res.store, val_w, cfg.batch);
    log.lr = lr;
    res.history.push_back(log);
    if (on_epoch) on_epoch(log);

    if (log.val_loss < best_val - 1e-12) {
      best_val = log.val_loss;
      res.best_epoch = epoch;
      best_values.clear();
      for (const auto& name : res.store.names()) best_values.push_back(res.store.value(name));
      plateau = 0;
      since_best = 0;
    } else {
      ++plateau;
      ++since_best;
      if (plateau >= cfg.plateau_patience) {
        lr *= 0.5;
        plateau = 0;
      }
      if (since_best >= cfg.early_stop_patience) {
        res.early_stopped = true;
        break;
      }
    }
  }
  if (!best_values.empty()) {
    std::size_t i = 0;
    for (const auto& name : res.store.names()) res.store.value(name) = best_values[i++];
  }
  res.best_val =
      std::isfinite(best_val) ? best_val : eval_loss(model, res.store, val_w, cfg.batch);
}

}  // namespace detail

inline TrainResult train(const VwapModel& model, const std::vector<const SampleWindow*>& train_w,
                         const std::vector<const SampleWindow*>& val_w,
                         const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  TrainResult res;
  res.store = model.init_params(model.cfg.seed);
  detail::train_loop(model, res, model.cfg.lr, train_w, val_w, on_epoch);
  return res;
}

// Warm start from a structurally identical checkpoint trained at a
// neighbouring frequency; the base learning rate is scaled by lr_scale.
inline TrainResult finetune_from(const ParameterStore& base, const VwapModel& model,
                                 const std::vector<const SampleWindow*>& train_w,
                                 const std::vector<const SampleWindow*>& val_w,
                                 double lr_scale,
                                 const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  TrainResult res;
  res.store = model.init_params(model.cfg.seed);
  if (!res.store.same_shapes(base))
    throw std::invalid_argument("finetune_from: base checkpoint shape mismatch");
  res.store.copy_values_from(base);
  detail::train_loop(model, res, model.cfg.lr * lr_scale, train_w, val_w, on_epoch);
  return res;
}

// ---- evaluation -------------------------------------------------------------

struct EvalOptions {
  bool oracle_peek = false;  // test-only: allocate exactly the market fractions
  std::size_t batch = 256;
};

inline std::vector<SampleLoss> evaluate(const VwapModel& model, ParameterStore& st,
                                        const std::vector<const SampleWindow*>& windows,
                                        const std::string& split_label,
                                        const EvalOptions& opt = {}) {
  std::vector<SampleLoss> out;
  out.reserve(windows.size());
  const std::size_t h = model.cfg.horizon;
  const std::vector<double> naive = naive_allocation(h);
  for (std::size_t i = 0; i < windows.size(); i += opt.batch) {
    const std::size_t n = std::min(opt.batch, windows.size() - i);
    std::vector<const SampleWindow*> chunk(windows.begin() + i, windows.begin() + i + n);
    Tensor alloc;
    if (!opt.oracle_peek) alloc = model.infer_allocations(st, chunk);
    for (std::size_t b = 0; b < n; ++b) {
      const SampleWindow& w = *chunk[b];
      std::vector<double> q;
      if (opt.oracle_peek) {
        q = market_fractions(w.target_volumes);
      } else {
        q.assign(alloc.row_ptr(b), alloc.row_ptr(b) + h);
      }
      const LossValues lm = vwap_losses(w.target_prices, w.target_volumes, q);
      const LossValues lnv = vwap_losses(w.target_prices, w.target_volumes, naive);
      SampleLoss s;
      s.variant = variant_name(model.cfg.variant);
      s.split = split_label;
      s.asset = w.asset_id;
      s.anchor_ts = w.anchor_ts;
      s.duration_s = static_cast<std::int64_t>(h) * w.frequency;
      s.abs_model = lm.absolute;
      s.quad_model = lm.quadratic;
      s.abs_naive = lnv.absolute;
      s.quad_naive = lnv.quadratic;
      s.signed_dev = lm.signed_dev;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---- variant matrix ----------------------------------------------------------

struct VariantRun {
  Variant variant;
  std::uint64_t seed = 0;
  std::string asset;  // empty = global
  TrainResult result;
};

struct MatrixResult {
  std::vector<VariantRun> runs;
  std::vector<SampleLoss> losses;  // train + test splits, all variants/seeds
  ReportTables tables;
};

// Trains every requested variant x seed (AFD: one model per asset, seeds
// derived per asset so a single-asset AFD run equals the GFD run bit for
// bit) and reports Table-1-shaped improvements with per-seed losses pooled.
inline MatrixResult run_variant_matrix(
    const RunConfig& base, const std::vector<AssetData>& assets,
    const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
    const std::function<void(const std::string&)>& note = nullptr) {
  MatrixResult out;
  for (Variant v : variants) {
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.variant = v;
      cfg.seed = seed;
      auto eval_both = [&](const VwapModel& model, ParameterStore& st, const AssetData& asset) {
        auto tr = evaluate(model, st, detail::pointers(asset.train), "train");
        auto te = evaluate(model, st, detail::pointers(asset.test), "test");
        out.losses.insert(out.losses.end(), tr.begin(), tr.end());
        out.losses.insert(out.losses.end(), te.begin(), te.end());
      };
      if (variant_per_asset(v)) {
        for (std::size_t ai = 0; ai < assets.size(); ++ai) {
          RunConfig acfg = cfg;
          acfg.seed = seed + 0x9E3779B9u * static_cast<std::uint64_t>(ai);
          VwapModel model{acfg};
          if (note)
            note(std::string(variant_name(v)) + " seed " + std::to_string(seed) + " asset " +
                 assets[ai].series.asset_id);
          TrainResult r =
              train(model, detail::pointers(assets[ai].train), detail::pointers(assets[ai].val));
          eval_both(model, r.store, assets[ai]);
          out.runs.push_back(VariantRun{v, seed, assets[ai].series.asset_id, std::move(r)});
        }
      } else {
        VwapModel model{cfg};
        std::vector<const SampleWindow*> train_w, val_w;
        for (const auto& a : assets) {
          for (const auto& w : a.train) train_w.push_back(&w);
          for (const auto& w : a.val) val_w.push_back(&w);
        }
        if (note) note(std::string(variant_name(v)) + " seed " + std::to_string(seed));
        TrainResult r = train(model, train_w, val_w);
        for (const auto& a : assets) eval_both(model, r.store, a);
        out.runs.push_back(VariantRun{v, seed, "", std::move(r)});
      }
    }
  }
  out.tables = report_tables(out.losses);
  return out;
}

}  // namespace vwapsig
