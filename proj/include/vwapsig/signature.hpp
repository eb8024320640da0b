#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "vwapsig/layers.hpp"

namespace vwapsig {

// Truncated signature coefficients are stored flat, level-major, with
// lexicographic multi-indices inside each level (first integration index is
// the most significant digit). The constant leading 1 is not stored.

inline std::size_t sig_dim(std::size_t d, std::size_t k) {
  std::size_t m = 0, p = 1;
  for (std::size_t lev = 1; lev <= k; ++lev) {
    p *= d;
    m += p;
  }
  return m;
}

// offsets[lev-1] = start of level lev; offsets[k] = total length
inline std::vector<std::size_t> sig_offsets(std::size_t d, std::size_t k) {
  std::vector<std::size_t> off(k + 1);
  std::size_t acc = 0, p = 1;
  for (std::size_t lev = 1; lev <= k; ++lev) {
    off[lev - 1] = acc;
    p *= d;
    acc += p;
  }
  off[k] = acc;
  return off;
}

namespace detail {

inline std::vector<std::size_t> sig_level_len(std::size_t d, std::size_t k) {
  std::vector<std::size_t> len(k + 1, 0);
  std::size_t p = 1;
  for (std::size_t lev = 1; lev <= k; ++lev) {
    p *= d;
    len[lev] = p;
  }
  return len;
}

// truncated exponential of a straight segment with the given increment
inline void seg_exp(const double* delta, std::size_t d, std::size_t k, double* out) {
  const auto off = sig_offsets(d, k);
  const auto len = sig_level_len(d, k);
  for (std::size_t j = 0; j < d; ++j) out[j] = delta[j];
  for (std::size_t n = 2; n <= k; ++n) {
    const double inv = 1.0 / static_cast<double>(n);
    const double* prev = out + off[n - 2];
    double* cur = out + off[n - 1];
    std::size_t idx = 0;
    for (std::size_t ip = 0; ip < len[n - 1]; ++ip)
      for (std::size_t j = 0; j < d; ++j) cur[idx++] = prev[ip] * delta[j] * inv;
  }
}

inline void seg_exp_vjp(const double* delta, const double* e, const double* gbar, std::size_t d,
                        std::size_t k, double* gdelta) {
  const auto off = sig_offsets(d, k);
  const auto len = sig_level_len(d, k);
  std::vector<double> ge(gbar, gbar + off[k]);
  for (std::size_t n = k; n >= 2; --n) {
    const double inv = 1.0 / static_cast<double>(n);
    const double* eprev = e + off[n - 2];
    const double* gcur = ge.data() + off[n - 1];
    double* gprev = ge.data() + off[n - 2];
    std::size_t idx = 0;
    for (std::size_t ip = 0; ip < len[n - 1]; ++ip) {
      const double ep = eprev[ip] * inv;
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double g = gcur[idx++];
        gdelta[j] += g * ep;
        acc += g * delta[j];
      }
      gprev[ip] += acc * inv;
    }
  }
  for (std::size_t j = 0; j < d; ++j) gdelta[j] += ge[j];
}

inline void chen_into(const double* a, const double* b, std::size_t d, std::size_t k,
                      double* out) {
  const auto off = sig_offsets(d, k);
  const auto len = sig_level_len(d, k);
  for (std::size_t i = 0; i < off[k]; ++i) out[i] = a[i] + b[i];
  for (std::size_t n = 2; n <= k; ++n) {
    double* dst = out + off[n - 1];
    for (std::size_t p = 1; p < n; ++p) {
      const std::size_t q = n - p;
      const double* ap = a + off[p - 1];
      const double* bq = b + off[q - 1];
      std::size_t idx = 0;
      for (std::size_t ia = 0; ia < len[p]; ++ia) {
        const double av = ap[ia];
        for (std::size_t ib = 0; ib < len[q]; ++ib) dst[idx++] += av * bq[ib];
      }
    }
  }
}

inline void chen_vjp(const double* a, const double* b, const double* gbar, std::size_t d,
                     std::size_t k, double* ga, double* gb) {
  const auto off = sig_offsets(d, k);
  const auto len = sig_level_len(d, k);
  for (std::size_t i = 0; i < off[k]; ++i) {
    ga[i] += gbar[i];
    gb[i] += gbar[i];
  }
  for (std::size_t n = 2; n <= k; ++n) {
    const double* g = gbar + off[n - 1];
    for (std::size_t p = 1; p < n; ++p) {
      const std::size_t q = n - p;
      const double* ap = a + off[p - 1];
      const double* bq = b + off[q - 1];
      double* gap = ga + off[p - 1];
      double* gbq = gb + off[q - 1];
      std::size_t idx = 0;
      for (std::size_t ia = 0; ia < len[p]; ++ia) {
        double acc = 0.0;
        for (std::size_t ib = 0; ib < len[q]; ++ib) {
          const double gv = g[idx++];
          acc += gv * bq[ib];
          gbq[ib] += gv * ap[ia];
        }
        gap[ia] += acc;
      }
    }
  }
}

}  // namespace detail

// Tensor-algebra product of two truncated signatures over the same alphabet
// (Chen's relation for concatenated paths).
inline Tensor chen_product(const Tensor& a, const Tensor& b, std::size_t d, std::size_t k) {
  const std::size_t m = sig_dim(d, k);
  if (a.size() != m || b.size() != m)
    throw std::invalid_argument("chen_product: dimension mismatch");
  Tensor out(1, m);
  detail::chen_into(a.v.data(), b.v.data(), d, k, out.v.data());
  return out;
}

// Depth-k signature of the piecewise-linear path through the given sample
// points, computed by folding per-increment truncated exponentials.
inline Tensor truncated_signature(const Tensor& path, std::size_t k) {
  const std::size_t n = path.rows(), d = path.cols();
  if (n < 2) throw std::invalid_argument("truncated_signature: need >= 2 points");
  if (k < 1) throw std::invalid_argument("truncated_signature: depth >= 1");
  if (!path.all_finite()) throw std::invalid_argument("truncated_signature: non-finite input");
  const std::size_t m = sig_dim(d, k);
  std::vector<double> sig(m, 0.0), e(m, 0.0), next(m, 0.0), delta(d);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) delta[j] = path.at(i, j) - path.at(i - 1, j);
    detail::seg_exp(delta.data(), d, k, e.data());
    if (i == 1) {
      sig = e;
    } else {
      detail::chen_into(sig.data(), e.data(), d, k, next.data());
      sig.swap(next);
    }
  }
  return Tensor(1, m, std::move(sig));
}

// d sig / d path, given the upstream gradient on the signature vector
inline Tensor signature_vjp(const Tensor& path, std::size_t k, const Tensor& gbar) {
  const std::size_t n = path.rows(), d = path.cols();
  const std::size_t m = sig_dim(d, k);
  // prefix[i] = signature of the first i increments
  std::vector<std::vector<double>> prefix(n);
  std::vector<double> e(m), delta(d);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) delta[j] = path.at(i, j) - path.at(i - 1, j);
    detail::seg_exp(delta.data(), d, k, e.data());
    if (i == 1) {
      prefix[1] = e;
    } else {
      prefix[i].assign(m, 0.0);
      detail::chen_into(prefix[i - 1].data(), e.data(), d, k, prefix[i].data());
    }
  }
  Tensor gpath(n, d);
  std::vector<double> g(gbar.v), ga(m), gb(m), gd(d);
  for (std::size_t i = n - 1; i >= 1; --i) {
    for (std::size_t j = 0; j < d; ++j) delta[j] = path.at(i, j) - path.at(i - 1, j);
    detail::seg_exp(delta.data(), d, k, e.data());
    std::fill(gd.begin(), gd.end(), 0.0);
    if (i == 1) {
      detail::seg_exp_vjp(delta.data(), e.data(), g.data(), d, k, gd.data());
    } else {
      std::fill(ga.begin(), ga.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      detail::chen_vjp(prefix[i - 1].data(), e.data(), g.data(), d, k, ga.data(), gb.data());
      detail::seg_exp_vjp(delta.data(), e.data(), gb.data(), d, k, gd.data());
      g = ga;
    }
    for (std::size_t j = 0; j < d; ++j) {
      gpath.at(i, j) += gd[j];
      gpath.at(i - 1, j) -= gd[j];
    }
  }
  return gpath;
}

// Elementwise learnable scaling of a path window (W_sig . X).
inline Tensor scale_path(const Tensor& w_sig, const Tensor& path) {
  check_shape(w_sig, path, "scale_path");
  Tensor out = path;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= w_sig.v[i];
  return out;
}

// Batch of signatures: stacked holds B paths of n rows each.
inline Var signature_batch(Tape& t, Var stacked, std::size_t batch, std::size_t n,
                           std::size_t k) {
  const Tensor& xv = t.val(stacked);
  if (xv.rows() != batch * n) throw std::invalid_argument("signature_batch: bad row count");
  const std::size_t d = xv.cols();
  const std::size_t m = sig_dim(d, k);
  Tensor out(batch, m);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor path(n, d);
    std::copy(xv.row_ptr(b * n), xv.row_ptr(b * n) + n * d, path.v.begin());
    Tensor s = truncated_signature(path, k);
    std::copy(s.v.begin(), s.v.end(), out.row_ptr(b));
  }
  return t.make_op({stacked}, std::move(out), [stacked, batch, n, k, d, m](Tape& t2,
                                                                           const Tensor& g) {
    const Tensor& xv2 = t2.val(stacked);
    Tensor gx(xv2.rows(), d);
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor path(n, d);
      std::copy(xv2.row_ptr(b * n), xv2.row_ptr(b * n) + n * d, path.v.begin());
      Tensor gbar(1, m);
      std::copy(g.row_ptr(b), g.row_ptr(b) + m, gbar.v.begin());
      Tensor gp = signature_vjp(path, k, gbar);
      std::copy(gp.v.begin(), gp.v.end(), gx.row_ptr(b * n));
    }
    t2.accum(stacked, gx);
  });
}

// ---- signature batch normalization ----------------------------------------

struct BatchNormStats {
  Tensor mean;  // 1 x m
  Tensor var;   // 1 x m (biased)
};

inline Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, double eps,
                            BatchNormStats* stats_out) {
  const Tensor& xv = t.val(x);
  const std::size_t bsz = xv.rows(), m = xv.cols();
  if (bsz < 2) throw std::invalid_argument("batch_norm_train: batch size must be >= 2");
  Tensor mean(1, m), var(1, m), xhat(bsz, m), out(bsz, m);
  const Tensor& gv = t.val(gamma);
  const Tensor& bv = t.val(beta);
  for (std::size_t j = 0; j < m; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < bsz; ++i) mu += xv.at(i, j);
    mu /= static_cast<double>(bsz);
    double s2 = 0.0;
    for (std::size_t i = 0; i < bsz; ++i) {
      const double dd = xv.at(i, j) - mu;
      s2 += dd * dd;
    }
    s2 /= static_cast<double>(bsz);
    mean.v[j] = mu;
    var.v[j] = s2;
    const double inv = 1.0 / std::sqrt(s2 + eps);
    for (std::size_t i = 0; i < bsz; ++i) {
      xhat.at(i, j) = (xv.at(i, j) - mu) * inv;
      out.at(i, j) = gv.v[j] * xhat.at(i, j) + bv.v[j];
    }
  }
  if (stats_out) {
    stats_out->mean = mean;
    stats_out->var = var;
  }
  return t.make_op(
      {x, gamma, beta}, std::move(out),
      [x, gamma, beta, xhat = std::move(xhat), var = std::move(var), eps, bsz, m](
          Tape& t2, const Tensor& g) {
        const Tensor& gv2 = t2.val(gamma);
        Tensor gx(bsz, m), gg(1, m), gb(1, m);
        const double dn = static_cast<double>(bsz);
        for (std::size_t j = 0; j < m; ++j) {
          const double inv = 1.0 / std::sqrt(var.v[j] + eps);
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < bsz; ++i) {
            sum_g += g.at(i, j);
            sum_gx += g.at(i, j) * xhat.at(i, j);
          }
          gg.v[j] = sum_gx;
          gb.v[j] = sum_g;
          for (std::size_t i = 0; i < bsz; ++i)
            gx.at(i, j) =
                gv2.v[j] * inv * (g.at(i, j) - sum_g / dn - xhat.at(i, j) * sum_gx / dn);
        }
        if (t2.wants(x)) t2.accum(x, gx);
        if (t2.wants(gamma)) t2.accum(gamma, gg);
        if (t2.wants(beta)) t2.accum(beta, gb);
      });
}

// Learnable scale/shift over signature coordinates with train-time batch
// statistics and inference-time moving averages (eps fixed at 1e-3).
struct SignatureNorm {
  std::string prefix;
  std::size_t m = 0;
  double eps = 1e-3;
  double momentum = 0.99;

  void init(ParameterStore& st, Rng&) const {
    st.add(prefix + ".gamma", Tensor::full(1, m, 1.0));
    st.add(prefix + ".beta", Tensor(1, m));
    st.add(prefix + ".running_mean", Tensor(1, m), /*trainable=*/false);
    st.add(prefix + ".running_var", Tensor::full(1, m, 1.0), /*trainable=*/false);
  }

  Var forward(ParamCtx& ctx, Var s, bool train) const {
    Tape& t = ctx.tape;
    Var gamma = ctx(prefix + ".gamma");
    Var beta = ctx(prefix + ".beta");
    if (train) {
      BatchNormStats stats;
      Var out = batch_norm_train(t, s, gamma, beta, eps, &stats);
      Tensor& rm = ctx.store.value(prefix + ".running_mean");
      Tensor& rv = ctx.store.value(prefix + ".running_var");
      for (std::size_t j = 0; j < m; ++j) {
        rm.v[j] = momentum * rm.v[j] + (1.0 - momentum) * stats.mean.v[j];
        rv.v[j] = momentum * rv.v[j] + (1.0 - momentum) * stats.var.v[j];
      }
      return out;
    }
    const Tensor& rm = ctx.store.value(prefix + ".running_mean");
    const Tensor& rv = ctx.store.value(prefix + ".running_var");
    Tensor inv(1, m), neg_mean(1, m);
    for (std::size_t j = 0; j < m; ++j) {
      inv.v[j] = 1.0 / std::sqrt(rv.v[j] + eps);
      neg_mean.v[j] = -rm.v[j];
    }
    Var centered = t.add_row(s, t.constant(neg_mean));
    Var scaled = t.mul_row(centered, t.mul(gamma, t.constant(inv)));
    return t.add_row(scaled, beta);
  }
};

// Copy one normalized signature vector onto every timestep of its sample.
inline Var repeat_context(Tape& t, Var z_stacked, Var sig_rows, std::size_t steps) {
  if (t.val(sig_rows).cols() == 0) return z_stacked;
  return t.concat_cols({z_stacked, t.repeat_each_row(sig_rows, steps)});
}

}  // namespace vwapsig
