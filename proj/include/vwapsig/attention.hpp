#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vwapsig/layers.hpp"

namespace vwapsig {

// Additive attention mask: 0 where the query may attend (j <= i), -inf above
// the diagonal.
inline Tensor causal_mask(std::size_t steps) {
  Tensor m(steps, steps);
  const double ninf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t j = 0; j < steps; ++j) m.at(i, j) = i >= j ? 0.0 : ninf;
  return m;
}

struct MultiHeadAttention {
  std::string prefix;
  std::size_t d_model = 0, heads = 0;

  std::size_t d_attn() const {
    if (heads == 0 || d_model % heads != 0)
      throw std::invalid_argument("attention: heads must divide d_model (" +
                                  std::to_string(d_model) + "/" + std::to_string(heads) + ")");
    return d_model / heads;
  }

  void init(ParameterStore& st, Rng& rng) const {
    const std::size_t da = d_attn();
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      st.add(hp + ".wq", glorot_uniform(d_model, da, d_model, da, rng));
      st.add(hp + ".wk", glorot_uniform(d_model, da, d_model, da, rng));
      st.add(hp + ".wv", glorot_uniform(d_model, da, d_model, da, rng));
    }
    st.add(prefix + ".wo", glorot_uniform(d_model, d_model, d_model, d_model, rng));
  }

  // x stacked (batch*steps x d_model), causal self-attention per sample
  Var forward(ParamCtx& ctx, Var x, std::size_t batch, std::size_t steps) const {
    Tape& t = ctx.tape;
    const std::size_t da = d_attn();
    const double scale = 1.0 / std::sqrt(static_cast<double>(da));
    const Tensor mask = causal_mask(steps);
    std::vector<Var> q(heads), k(heads), v(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      q[h] = t.matmul(x, ctx(hp + ".wq"));
      k[h] = t.matmul(x, ctx(hp + ".wk"));
      v[h] = t.matmul(x, ctx(hp + ".wv"));
    }
    std::vector<Var> per_sample(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      std::vector<Var> head_ctx(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        Var qb = t.slice_rows(q[h], b * steps, steps);
        Var kb = t.slice_rows(k[h], b * steps, steps);
        Var vb = t.slice_rows(v[h], b * steps, steps);
        Var scores = t.affine(t.matmul_nt(qb, kb), scale, 0.0);
        Var weights = t.softmax_rows(scores, &mask);
        head_ctx[h] = t.matmul(weights, vb);
      }
      per_sample[b] = heads == 1 ? head_ctx[0] : t.concat_cols(head_ctx);
    }
    Var merged = batch == 1 ? per_sample[0] : t.concat_rows(per_sample);
    return t.matmul(merged, ctx(prefix + ".wo"));
  }
};

}  // namespace vwapsig
