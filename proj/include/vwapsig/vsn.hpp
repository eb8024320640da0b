#pragma once

#include <string>
#include <vector>

#include "vwapsig/layers.hpp"

namespace vwapsig {

// Variable selection: each scalar variable gets its own embedding and GRN,
// a shared GRN scores variable importance, and the selected features are the
// importance-weighted sum of the per-variable GRN outputs.
struct VsnBlock {
  std::string prefix;
  std::size_t n_vars = 0;
  std::size_t embed_width = 0;  // E
  std::size_t d_model = 0;

  Dense embedder(std::size_t j) const {
    return Dense{prefix + ".embed" + std::to_string(j), 1, embed_width};
  }
  Grn var_grn(std::size_t j) const {
    return Grn{prefix + ".grn" + std::to_string(j), embed_width, d_model, d_model};
  }
  Grn importance_grn() const {
    return Grn{prefix + ".importance", embed_width * n_vars, d_model, n_vars};
  }

  void init(ParameterStore& st, Rng& rng) const {
    for (std::size_t j = 0; j < n_vars; ++j) {
      embedder(j).init(st, rng);
      var_grn(j).init(st, rng);
    }
    importance_grn().init(st, rng);
  }

  // per-variable embeddings of the raw inputs (x is (rows x n_vars))
  std::vector<Var> embed(ParamCtx& ctx, Var x) const {
    Tape& t = ctx.tape;
    if (t.val(x).cols() != n_vars)
      throw std::invalid_argument("vsn: expected " + std::to_string(n_vars) + " variables, got " +
                                  std::to_string(t.val(x).cols()));
    std::vector<Var> xi(n_vars);
    for (std::size_t j = 0; j < n_vars; ++j)
      xi[j] = embedder(j).forward(ctx, t.slice_cols(x, j, 1));
    return xi;
  }

  // selected features (rows x d_model); softmax importance optionally exposed
  Var forward(ParamCtx& ctx, const std::vector<Var>& xi, Var* importance_out = nullptr) const {
    Tape& t = ctx.tape;
    Var flat = xi.size() == 1 ? xi[0] : t.concat_cols(xi);
    Var weights = t.softmax_rows(importance_grn().forward(ctx, flat));
    if (importance_out) *importance_out = weights;
    Var acc{-1};
    for (std::size_t j = 0; j < n_vars; ++j) {
      Var term = t.mul_bcast_col(var_grn(j).forward(ctx, xi[j]), t.slice_cols(weights, j, 1));
      acc = j == 0 ? term : t.add(acc, term);
    }
    return acc;
  }
};

}  // namespace vwapsig
