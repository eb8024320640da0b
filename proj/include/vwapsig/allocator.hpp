#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vwapsig/layers.hpp"

namespace vwapsig {

// Learned static per-bin curve, parameterized as softmax of logits so it is
// strictly positive and sums to one from the first step.
struct BaseCurve {
  std::size_t horizon = 0;
  std::string name = "base_curve.logits";

  void init(ParameterStore& st, Rng&) const { st.add(name, Tensor(1, horizon)); }

  Var curve(ParamCtx& ctx) const { return ctx.tape.softmax_rows(ctx(name)); }

  Tensor values(const ParameterStore& st) const {
    const Tensor& logits = st.value(name);
    Tensor out(1, horizon);
    double mx = logits.v[0];
    for (double x : logits.v) mx = std::max(mx, x);
    double z = 0.0;
    for (std::size_t j = 0; j < horizon; ++j) {
      out.v[j] = std::exp(logits.v[j] - mx);
      z += out.v[j];
    }
    for (double& x : out.v) x /= z;
    return out;
  }
};

// Per-bin feed-forward adjuster f_t; bin t additionally sees the t-1 volumes
// already committed, so its input width grows with t.
struct StepAdjuster {
  std::string prefix;
  std::size_t in = 0;
  std::size_t hidden1 = 100, hidden2 = 50;

  Dense l1() const { return Dense{prefix + ".w1", in, hidden1}; }
  Dense l2() const { return Dense{prefix + ".w2", hidden1, hidden2}; }
  Dense l3() const { return Dense{prefix + ".w3", hidden2, 1}; }

  void init(ParameterStore& st, Rng& rng) const {
    l1().init(st, rng);
    l2().init(st, rng);
    l3().init(st, rng);
  }

  Var forward(ParamCtx& ctx, Var x) const {
    Tape& t = ctx.tape;
    return l3().forward(ctx, t.relu(l2().forward(ctx, t.relu(l1().forward(ctx, x)))));
  }
};

// Sequential conserving allocation head (bins decided in order, last bin
// takes the remainder).
struct AllocationHead {
  std::size_t horizon = 0;   // h >= 2
  std::size_t lookback = 0;  // l >= 1
  std::size_t d_model = 0;

  BaseCurve base() const { return BaseCurve{horizon}; }
  StepAdjuster adjuster(std::size_t bin) const {  // bin is 1-based, 1..h-1
    return StepAdjuster{"adjuster." + std::to_string(bin), d_model + bin - 1};
  }

  void init(ParameterStore& st, Rng& rng) const {
    if (horizon < 2) throw std::invalid_argument("allocation head: horizon >= 2");
    if (lookback < 1) throw std::invalid_argument("allocation head: lookback >= 1");
    base().init(st, rng);
    for (std::size_t b = 1; b < horizon; ++b) adjuster(b).init(st, rng);
  }

  // context stacked (batch*steps x d_model) with steps = lookback + horizon - 1;
  // returns allocations (batch x horizon)
  Var allocate(ParamCtx& ctx, Var context, std::size_t batch) const {
    Tape& t = ctx.tape;
    const std::size_t steps = lookback + horizon - 1;
    if (t.val(context).rows() != batch * steps || t.val(context).cols() != d_model)
      throw std::invalid_argument("allocate: context shape mismatch");
    if (!t.val(context).all_finite()) throw std::invalid_argument("allocate: non-finite context");
    Var vb = base().curve(ctx);  // 1 x h
    std::vector<Var> bins;
    Var running{-1};
    for (std::size_t bin = 1; bin < horizon; ++bin) {
      // bin decisions see market data through the end of bin-1
      std::vector<std::size_t> rows(batch);
      for (std::size_t b = 0; b < batch; ++b) rows[b] = b * steps + (lookback - 1 + bin - 1);
      Var arow = t.gather_rows(context, std::move(rows));
      Var input = arow;
      if (bin > 1) {
        std::vector<Var> parts{arow};
        parts.insert(parts.end(), bins.begin(), bins.end());
        input = t.concat_cols(parts);
      }
      Var alpha = t.affine(t.tanh_op(adjuster(bin).forward(ctx, input)), 1.0, 1.0);
      Var target = t.mul_row(alpha, t.slice_cols(vb, bin - 1, 1));
      Var remaining = bin == 1 ? t.constant(Tensor::full(batch, 1, 1.0))
                               : t.relu(t.affine(running, -1.0, 1.0));
      Var v = t.clip_box(target, remaining);
      bins.push_back(v);
      running = bin == 1 ? v : t.add(running, v);
    }
    bins.push_back(t.relu(t.affine(running, -1.0, 1.0)));  // v_h = 1 - sum
    return t.concat_cols(bins);
  }
};

// Uniform 1/h benchmark; constructed so the bins sum to exactly one.
inline std::vector<double> naive_allocation(std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("naive_allocation: horizon >= 1");
  std::vector<double> v(horizon, 1.0 / static_cast<double>(horizon));
  double head = 0.0;
  for (std::size_t i = 0; i + 1 < horizon; ++i) head += v[i];
  v[horizon - 1] = 1.0 - head;
  return v;
}

// ---- recursive bin refinement ---------------------------------------------

// Sub-allocators keyed by their bin duration (seconds); an entry for duration
// f covering a parent bin of duration f * curve-size.
using RefinementLadder = std::map<std::int64_t, std::vector<double>>;

struct MissingRungError : std::runtime_error {
  std::int64_t bin_duration_s;
  explicit MissingRungError(std::int64_t dur)
      : std::runtime_error("no sub-allocator for bins of " + std::to_string(dur) + " s"),
        bin_duration_s(dur) {}
};

// Splits every bin longer than the threshold using the matching rung, and
// recurses until all leaf bins are at or under the threshold.
inline std::vector<double> refine_allocation(const std::vector<double>& parent,
                                             std::int64_t bin_duration_s,
                                             std::int64_t threshold_s,
                                             const RefinementLadder& rungs) {
  if (bin_duration_s <= threshold_s) return parent;
  const std::vector<double>* sub = nullptr;
  std::int64_t sub_freq = 0;
  for (const auto& [freq, curve] : rungs)
    if (freq * static_cast<std::int64_t>(curve.size()) == bin_duration_s) {
      sub = &curve;
      sub_freq = freq;
    }
  if (!sub) throw MissingRungError(bin_duration_s);
  const std::vector<double> leaf = refine_allocation(*sub, sub_freq, threshold_s, rungs);
  std::vector<double> out;
  out.reserve(parent.size() * leaf.size());
  for (double w : parent)
    for (double c : leaf) out.push_back(w * c);
  return out;
}

}  // namespace vwapsig
