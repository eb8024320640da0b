#pragma once

#include <map>
#include <string>

#include "vwapsig/params.hpp"
#include "vwapsig/rng.hpp"
#include "vwapsig/tape.hpp"

namespace vwapsig {

// Binds store parameters onto one tape, each at most once. A frozen context
// binds them as constants (inference: no gradient bookkeeping).
struct ParamCtx {
  Tape& tape;
  ParameterStore& store;
  bool frozen = false;
  std::map<std::string, Var> cache;

  Var operator()(const std::string& name) {
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    Var v = frozen ? tape.constant(store.value(name)) : store.use(tape, name);
    cache.emplace(name, v);
    return v;
  }
};

constexpr double kLayerNormEps = 1e-5;

// x W + b
struct Dense {
  std::string prefix;
  std::size_t in = 0, out = 0;

  void init(ParameterStore& st, Rng& rng) const {
    st.add(prefix + ".W", glorot_uniform(in, out, in, out, rng));
    st.add(prefix + ".b", Tensor(1, out));
  }

  Var forward(ParamCtx& ctx, Var x) const {
    return ctx.tape.add_row(ctx.tape.matmul(x, ctx(prefix + ".W")), ctx(prefix + ".b"));
  }
};

// sigmoid(W4 x + b4) . (W5 x + b5)
struct Glu {
  std::string prefix;
  std::size_t in = 0, out = 0;

  Dense gate() const { return Dense{prefix + ".w4", in, out}; }
  Dense lin() const { return Dense{prefix + ".w5", in, out}; }

  void init(ParameterStore& st, Rng& rng) const {
    gate().init(st, rng);
    lin().init(st, rng);
  }

  Var forward(ParamCtx& ctx, Var x) const {
    Tape& t = ctx.tape;
    return t.mul(t.sigmoid(gate().forward(ctx, x)), lin().forward(ctx, x));
  }
};

struct LayerNorm {
  std::string prefix;
  std::size_t width = 0;

  void init(ParameterStore& st, Rng&) const {
    st.add(prefix + ".gamma", Tensor::full(1, width, 1.0));
    st.add(prefix + ".beta", Tensor(1, width));
  }

  Var forward(ParamCtx& ctx, Var x) const {
    return ctx.tape.layer_norm(x, ctx(prefix + ".gamma"), ctx(prefix + ".beta"), kLayerNormEps);
  }
};

// Gated residual network: LayerNorm(skip(x) + GLU(W1 ELU(W2 x + b2) + b1)).
// The skip is the identity when in == out, otherwise a linear projection.
struct Grn {
  std::string prefix;
  std::size_t in = 0, hidden = 0, out = 0;

  Dense fc2() const { return Dense{prefix + ".w2", in, hidden}; }
  Dense fc1() const { return Dense{prefix + ".w1", hidden, out}; }
  Glu glu() const { return Glu{prefix, out, out}; }
  LayerNorm ln() const { return LayerNorm{prefix + ".ln", out}; }
  Dense skip() const { return Dense{prefix + ".skip", in, out}; }

  void init(ParameterStore& st, Rng& rng) const {
    fc2().init(st, rng);
    fc1().init(st, rng);
    glu().init(st, rng);
    ln().init(st, rng);
    if (in != out) skip().init(st, rng);
  }

  Var forward(ParamCtx& ctx, Var x) const {
    Tape& t = ctx.tape;
    Var h = t.elu(fc2().forward(ctx, x));
    Var g = glu().forward(ctx, fc1().forward(ctx, h));
    Var s = in == out ? x : skip().forward(ctx, x);
    return ln().forward(ctx, t.add(s, g));
  }
};

}  // namespace vwapsig
