#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "vwapsig/layers.hpp"

namespace vwapsig {

// Uniform cubic B-spline basis on [-limit, limit] with `intervals` knot
// spans; `intervals + 3` basis functions. Inputs are clamped onto the grid
// for the spline part, so beyond it only the linear bypass term moves.
struct KanGrid {
  double limit = 3.0;
  std::size_t intervals = 8;

  std::size_t n_basis() const { return intervals + 3; }

  // basis values (and optionally d/dx) of the 4 splines active at x;
  // returns the first active basis index
  std::size_t basis(double x, double w[4], double dw[4]) const {
    const double step = 2.0 * limit / static_cast<double>(intervals);
    const bool inside = x > -limit && x < limit;
    double xc = x;
    if (xc <= -limit) xc = -limit;
    if (xc >= limit) xc = limit;
    std::size_t k = static_cast<std::size_t>((xc + limit) / step);
    if (k >= intervals) k = intervals - 1;
    const double u = (xc - (-limit + static_cast<double>(k) * step)) / step;
    const double u2 = u * u, u3 = u2 * u;
    w[0] = (1.0 - u) * (1.0 - u) * (1.0 - u) / 6.0;
    w[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
    w[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
    w[3] = u3 / 6.0;
    if (dw) {
      const double s = inside ? 1.0 / step : 0.0;
      dw[0] = -0.5 * (1.0 - u) * (1.0 - u) * s;
      dw[1] = (1.5 * u2 - 2.0 * u) * s;
      dw[2] = (-1.5 * u2 + u + 0.5) * s;
      dw[3] = 0.5 * u2 * s;
    }
    return k;
  }
};

// phi: R^in -> R^out, each coordinate a sum over inputs of a learned spline
// plus a linear bypass.
struct KanLayer {
  std::string prefix;
  std::size_t in = 0, out = 0;
  KanGrid grid;

  void init(ParameterStore& st, Rng& rng) const {
    const std::size_t nb = grid.n_basis();
    Tensor spline(in * nb, out);
    const double a = 0.1 / std::sqrt(static_cast<double>(in));
    for (double& x : spline.v) x = rng.uniform(-a, a);
    st.add(prefix + ".spline", std::move(spline));
    st.add(prefix + ".bypass", glorot_uniform(in, out, in, out, rng));
  }

  Var forward(ParamCtx& ctx, Var x) const {
    Tape& t = ctx.tape;
    Var spline = ctx(prefix + ".spline");
    Var bypass = ctx(prefix + ".bypass");
    const Tensor& xv = t.val(x);
    const Tensor& cv = t.val(spline);
    const Tensor& bv = t.val(bypass);
    const std::size_t n = xv.rows(), nb = grid.n_basis();
    if (xv.cols() != in || cv.rows() != in * nb || cv.cols() != out || bv.rows() != in ||
        bv.cols() != out)
      throw std::invalid_argument("kan: shape mismatch");
    Tensor y(n, out);
    const KanGrid g = grid;
    const std::size_t nin = in, nout = out;
    for (std::size_t r = 0; r < n; ++r) {
      double* yrow = y.row_ptr(r);
      for (std::size_t i = 0; i < nin; ++i) {
        const double xi = xv.at(r, i);
        double w[4];
        const std::size_t k = g.basis(xi, w, nullptr);
        for (std::size_t q = 0; q < 4; ++q) {
          const double* crow = cv.row_ptr(i * nb + k + q);
          const double wq = w[q];
          for (std::size_t j = 0; j < nout; ++j) yrow[j] += wq * crow[j];
        }
        const double* brow = bv.row_ptr(i);
        for (std::size_t j = 0; j < nout; ++j) yrow[j] += xi * brow[j];
      }
    }
    return t.make_op({x, spline, bypass}, std::move(y),
                     [x, spline, bypass, g, nin, nout, nb](Tape& t2, const Tensor& gr) {
                       const Tensor& xv2 = t2.val(x);
                       const Tensor& cv2 = t2.val(spline);
                       const Tensor& bv2 = t2.val(bypass);
                       const bool wx = t2.wants(x);
                       Tensor gx(xv2.rows(), nin);
                       Tensor gc(nin * nb, nout);
                       Tensor gb(nin, nout);
                       for (std::size_t r = 0; r < xv2.rows(); ++r) {
                         const double* grow = gr.row_ptr(r);
                         for (std::size_t i = 0; i < nin; ++i) {
                           const double xi = xv2.at(r, i);
                           double w[4], dw[4];
                           const std::size_t k = g.basis(xi, w, dw);
                           double dxi = 0.0;
                           for (std::size_t q = 0; q < 4; ++q) {
                             const double* crow = cv2.row_ptr(i * nb + k + q);
                             double* gcrow = gc.row_ptr(i * nb + k + q);
                             double dot = 0.0;
                             for (std::size_t j = 0; j < nout; ++j) {
                               gcrow[j] += w[q] * grow[j];
                               dot += crow[j] * grow[j];
                             }
                             dxi += dw[q] * dot;
                           }
                           const double* brow = bv2.row_ptr(i);
                           double* gbrow = gb.row_ptr(i);
                           for (std::size_t j = 0; j < nout; ++j) {
                             gbrow[j] += xi * grow[j];
                             dxi += brow[j] * grow[j];
                           }
                           if (wx) gx.at(r, i) = dxi;
                         }
                       }
                       if (wx) t2.accum(x, gx);
                       t2.accum(spline, gc);
                       t2.accum(bypass, gb);
                     });
  }

  // plain evaluation against fixed coefficient tensors (used by tests)
  Tensor apply(const Tensor& x, const Tensor& spline, const Tensor& bypass) const {
    const std::size_t n = x.rows(), nb = grid.n_basis();
    Tensor y(n, out);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x.at(r, i);
        double w[4];
        const std::size_t k = grid.basis(xi, w, nullptr);
        for (std::size_t j = 0; j < out; ++j) {
          double s = xi * bypass.at(i, j);
          for (std::size_t q = 0; q < 4; ++q) s += w[q] * spline.at(i * nb + k + q, j);
          y.at(r, j) += s;
        }
      }
    return y;
  }
};

}  // namespace vwapsig
