#pragma once

#include <string>

#include "vwapsig/attention.hpp"
#include "vwapsig/tkan.hpp"
#include "vwapsig/vsn.hpp"

namespace vwapsig {

struct BackboneConfig {
  std::size_t n_features = 2;  // raw feature count d
  std::size_t sig_width = 0;   // repeated signature columns m (0 = signature off)
  std::size_t d_model = 33;
  std::size_t embed_width = 3;  // VSN embedding size E
  std::size_t heads = 3;
  std::size_t tkan_depth = 2;      // stacked TKAN layers
  std::size_t rkan_sublayers = 2;  // RKAN sublayers per TKAN layer
  bool transformer = true;         // false: recurrent-only (DynamicVWAP-style)
  KanGrid grid;

  std::size_t n_vars() const { return n_features + sig_width; }
};

// Per-timestep context pipeline: VSN -> TKAN stack -> gated residual ->
// GRN -> causal multi-head attention. The recurrent-only variant projects the
// inputs and runs the TKAN stack alone.
struct Backbone {
  BackboneConfig cfg;

  VsnBlock vsn() const { return VsnBlock{"vsn", cfg.n_vars(), cfg.embed_width, cfg.d_model}; }
  TkanStack tkan() const {
    const std::size_t in = cfg.transformer ? cfg.d_model : cfg.d_model;
    return TkanStack::make("tkan", in, cfg.d_model, cfg.tkan_depth, cfg.rkan_sublayers, cfg.grid);
  }
  Glu gate() const { return Glu{"gate", cfg.d_model, cfg.d_model}; }
  LayerNorm fuse_ln() const { return LayerNorm{"fuse_ln", cfg.d_model}; }
  Grn post_grn() const { return Grn{"post_grn", cfg.d_model, cfg.d_model, cfg.d_model}; }
  MultiHeadAttention attn() const { return MultiHeadAttention{"attn", cfg.d_model, cfg.heads}; }
  Dense input_proj() const { return Dense{"input_proj", cfg.n_vars(), cfg.d_model}; }

  void init(ParameterStore& st, Rng& rng) const {
    if (cfg.transformer) {
      (void)attn().d_attn();  // validates divisibility before any allocation
      vsn().init(st, rng);
      tkan().init(st, rng);
      gate().init(st, rng);
      fuse_ln().init(st, rng);
      post_grn().init(st, rng);
      attn().init(st, rng);
    } else {
      input_proj().init(st, rng);
      tkan().init(st, rng);
    }
  }

  // x stacked (batch*steps x n_vars) -> context (batch*steps x d_model)
  Var forward(ParamCtx& ctx, Var x, std::size_t batch, std::size_t steps) const {
    Tape& t = ctx.tape;
    if (!cfg.transformer) {
      Var p = input_proj().forward(ctx, x);
      return tkan().forward(ctx, p, batch, steps);
    }
    Var selected = vsn().forward(ctx, vsn().embed(ctx, x));
    Var h = tkan().forward(ctx, selected, batch, steps);
    Var fused = fuse_ln().forward(ctx, t.add(selected, gate().forward(ctx, h)));
    Var enriched = post_grn().forward(ctx, fused);
    return attn().forward(ctx, enriched, batch, steps);
  }
};

}  // namespace vwapsig
