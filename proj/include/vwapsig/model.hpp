#pragma once

#include <vector>

#include "vwapsig/allocator.hpp"
#include "vwapsig/backbone.hpp"
#include "vwapsig/config.hpp"
#include "vwapsig/economics.hpp"
#include "vwapsig/pipeline.hpp"
#include "vwapsig/signature.hpp"

namespace vwapsig {

// Learnable elementwise kernel applied to the signature window before the
// signature is taken.
struct SignatureScaler {
  std::string name = "sig.w_sig";
  std::size_t sig_lookback = 0, n_features = 0;

  void init(ParameterStore& st, Rng&) const {
    st.add(name, Tensor::full(sig_lookback, n_features, 1.0));
  }

  Var scale(ParamCtx& ctx, Var stacked_paths) const {
    return ctx.tape.mul_tiled(stacked_paths, ctx(name), sig_lookback);
  }
};

// Full model: optional signature context, temporal backbone, conserving
// allocation head.
struct VwapModel {
  RunConfig cfg;

  bool use_signature() const { return variant_signature(cfg.variant); }
  std::size_t sig_width() const {
    return use_signature() ? sig_dim(kNumFeatures, cfg.sig_depth) : 0;
  }

  BackboneConfig backbone_cfg() const {
    BackboneConfig b;
    b.n_features = kNumFeatures;
    b.sig_width = sig_width();
    b.d_model = cfg.d_model;
    b.embed_width = cfg.embed_width;
    b.heads = cfg.heads;
    b.tkan_depth = cfg.tkan_depth;
    b.rkan_sublayers = cfg.rkan_sublayers;
    b.transformer = variant_transformer(cfg.variant);
    b.grid = cfg.grid();
    return b;
  }

  Backbone backbone() const { return Backbone{backbone_cfg()}; }
  AllocationHead head() const { return AllocationHead{cfg.horizon, cfg.lookback, cfg.d_model}; }
  SignatureScaler scaler() const { return SignatureScaler{"sig.w_sig", cfg.sig_lookback, kNumFeatures}; }
  SignatureNorm sig_norm() const {
    return SignatureNorm{"sig", sig_width(), 1e-3, cfg.bn_momentum};
  }

  ParameterStore init_params(std::uint64_t seed) const {
    ParameterStore st;
    Rng rng(seed);
    if (use_signature()) {
      scaler().init(st, rng);
      sig_norm().init(st, rng);
    }
    backbone().init(st, rng);
    head().init(st, rng);
    return st;
  }

  // allocations for a batch of windows: (batch x horizon)
  Var allocations(ParamCtx& ctx, const std::vector<const SampleWindow*>& batch,
                  bool train) const {
    Tape& t = ctx.tape;
    const std::size_t B = batch.size();
    const std::size_t steps = cfg.steps();
    const std::size_t d = kNumFeatures;
    Tensor local(B * steps, d);
    for (std::size_t b = 0; b < B; ++b) {
      const Tensor& w = batch[b]->local_window;
      if (w.rows() != steps || w.cols() != d)
        throw std::invalid_argument("window shape mismatch vs config");
      std::copy(w.v.begin(), w.v.end(), local.row_ptr(b * steps));
    }
    Var x = t.constant(std::move(local));
    if (use_signature()) {
      const std::size_t ls = cfg.sig_lookback;
      Tensor paths(B * ls, d);
      for (std::size_t b = 0; b < B; ++b) {
        const Tensor& w = batch[b]->sig_window;
        if (w.rows() != ls || w.cols() != d)
          throw std::invalid_argument("signature window shape mismatch vs config");
        std::copy(w.v.begin(), w.v.end(), paths.row_ptr(b * ls));
      }
      Var scaled = scaler().scale(ctx, t.constant(std::move(paths)));
      Var sigs = signature_batch(t, scaled, B, ls, cfg.sig_depth);
      Var shat = sig_norm().forward(ctx, sigs, train);
      x = repeat_context(t, x, shat, steps);
    }
    Var context = backbone().forward(ctx, x, B, steps);
    return head().allocate(ctx, context, B);
  }

  // mean absolute VWAP deviation of the batch
  Var batch_loss(ParamCtx& ctx, Var alloc, const std::vector<const SampleWindow*>& batch) const {
    Tape& t = ctx.tape;
    const std::size_t B = batch.size(), h = cfg.horizon;
    Tensor prices(B, h), inv_vwap(B, 1);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& w = *batch[b];
      for (std::size_t j = 0; j < h; ++j) prices.at(b, j) = w.target_prices[j];
      inv_vwap.v[b] = 1.0 / market_vwap(w.target_prices, w.target_volumes);
    }
    Var exec = t.row_sum(t.mul(alloc, t.constant(std::move(prices))));
    Var dev = t.affine(t.mul(exec, t.constant(std::move(inv_vwap))), 1.0, -1.0);
    return t.mean_all(t.abs_op(dev));
  }

  // inference-only allocations, no gradient bookkeeping
  Tensor infer_allocations(ParameterStore& st,
                           const std::vector<const SampleWindow*>& batch) const {
    Tape t;
    ParamCtx ctx{t, st, /*frozen=*/true};
    Var alloc = allocations(ctx, batch, /*train=*/false);
    return t.val(alloc);
  }
};

}  // namespace vwapsig
