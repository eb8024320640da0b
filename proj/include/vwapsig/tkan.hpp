#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vwapsig/kan.hpp"
#include "vwapsig/layers.hpp"

namespace vwapsig {

// One recurrent KAN sublayer: a KAN mapping fed by the current input plus a
// small linear memory of its own past outputs.
struct RkanSublayer {
  std::string prefix;
  std::size_t in = 0, units = 0;
  KanGrid grid;

  KanLayer kan() const { return KanLayer{prefix + ".kan", units, units, grid}; }

  void init(ParameterStore& st, Rng& rng) const {
    st.add(prefix + ".wx", glorot_uniform(in, units, in, units, rng));
    st.add(prefix + ".wh", recurrent_uniform(units, units, rng));
    kan().init(st, rng);
    st.add(prefix + ".whh", recurrent_uniform(units, units, rng));
    st.add(prefix + ".whz", recurrent_uniform(units, units, rng));
  }

  // s = x Wx + h~ Wh ; o = phi(s) ; h~' = h~ Whh + o Whz
  std::pair<Var, Var> step(ParamCtx& ctx, Var x, Var h_prev) const {
    Tape& t = ctx.tape;
    Var s = t.add(t.matmul(x, ctx(prefix + ".wx")), t.matmul(h_prev, ctx(prefix + ".wh")));
    Var o = kan().forward(ctx, s);
    Var h_next =
        t.add(t.matmul(h_prev, ctx(prefix + ".whh")), t.matmul(o, ctx(prefix + ".whz")));
    return {o, h_next};
  }
};

// TKAN layer: RKAN sublayers concatenated under LSTM-style gating. Gate
// wiring follows the source equations: f/i/c~ read the layer input, o reads
// the concatenated sublayer outputs.
struct TkanLayer {
  std::string prefix;
  std::size_t in = 0, units = 0, n_sublayers = 2;
  KanGrid grid;

  RkanSublayer sub(std::size_t l) const {
    return RkanSublayer{prefix + ".rkan" + std::to_string(l), in, units, grid};
  }

  void init(ParameterStore& st, Rng& rng) const {
    for (std::size_t l = 0; l < n_sublayers; ++l) sub(l).init(st, rng);
    auto gate_in = [&](const char* w, const char* u, const char* b) {
      st.add(prefix + w, glorot_uniform(in, units, in, units, rng));
      st.add(prefix + u, recurrent_uniform(units, units, rng));
      st.add(prefix + b, Tensor(1, units));
    };
    gate_in(".wf", ".uf", ".bf");
    gate_in(".wi", ".ui", ".bi");
    st.add(prefix + ".wo",
           glorot_uniform(n_sublayers * units, units, n_sublayers * units, units, rng));
    st.add(prefix + ".bo", Tensor(1, units));
    gate_in(".wc", ".uc", ".bc");
  }

  struct State {
    std::vector<Var> sub_h;
    Var h;
    Var c;
  };

  State initial_state(Tape& t, std::size_t batch) const {
    State s;
    for (std::size_t l = 0; l < n_sublayers; ++l) s.sub_h.push_back(t.constant(Tensor(batch, units)));
    s.h = t.constant(Tensor(batch, units));
    s.c = t.constant(Tensor(batch, units));
    return s;
  }

  Var step(ParamCtx& ctx, Var x, State& st) const {
    Tape& t = ctx.tape;
    std::vector<Var> outs;
    for (std::size_t l = 0; l < n_sublayers; ++l) {
      auto [o, h_next] = sub(l).step(ctx, x, st.sub_h[l]);
      outs.push_back(o);
      st.sub_h[l] = h_next;
    }
    Var r = outs.size() == 1 ? outs[0] : t.concat_cols(outs);
    auto gate = [&](const char* w, const char* u, const char* b, Var src, bool with_h) {
      Var z = t.matmul(src, ctx(prefix + w));
      if (with_h) z = t.add(z, t.matmul(st.h, ctx(prefix + u)));
      return t.sigmoid(t.add_row(z, ctx(prefix + b)));
    };
    Var f = gate(".wf", ".uf", ".bf", x, true);
    Var i = gate(".wi", ".ui", ".bi", x, true);
    Var o = gate(".wo", "", ".bo", r, false);
    Var c_cand = gate(".wc", ".uc", ".bc", x, true);
    st.c = t.add(t.mul(f, st.c), t.mul(i, c_cand));
    st.h = t.mul(o, t.tanh_op(st.c));
    return st.h;
  }
};

struct TkanStack {
  std::vector<TkanLayer> layers;

  static TkanStack make(const std::string& prefix, std::size_t in, std::size_t units,
                        std::size_t depth, std::size_t sublayers, KanGrid grid) {
    TkanStack s;
    for (std::size_t i = 0; i < depth; ++i)
      s.layers.push_back(TkanLayer{prefix + "." + std::to_string(i), i == 0 ? in : units, units,
                                   sublayers, grid});
    return s;
  }

  void init(ParameterStore& st, Rng& rng) const {
    for (auto& l : layers) l.init(st, rng);
  }

  // stacked (batch*steps x in), sample-major rows -> (batch*steps x units)
  Var forward(ParamCtx& ctx, Var stacked, std::size_t batch, std::size_t steps) const {
    Tape& t = ctx.tape;
    std::vector<TkanLayer::State> states;
    for (auto& l : layers) states.push_back(l.initial_state(t, batch));
    std::vector<Var> step_out(steps);
    for (std::size_t ts = 0; ts < steps; ++ts) {
      std::vector<std::size_t> rows(batch);
      for (std::size_t b = 0; b < batch; ++b) rows[b] = b * steps + ts;
      Var x = t.gather_rows(stacked, std::move(rows));
      for (std::size_t li = 0; li < layers.size(); ++li) x = layers[li].step(ctx, x, states[li]);
      step_out[ts] = x;
    }
    // reassemble from step-major to sample-major rows
    std::vector<std::size_t> perm(batch * steps);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ts = 0; ts < steps; ++ts) perm[b * steps + ts] = ts * batch + b;
    return t.permute_rows(t.concat_rows(step_out), std::move(perm));
  }
};

}  // namespace vwapsig
