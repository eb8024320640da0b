#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "vwapsig/tensor.hpp"

namespace vwapsig {

// Worker cap for row-parallel kernels. Partitioning is by output row, so
// results are bitwise identical for any worker count.
inline std::size_t& worker_count() {
  static std::size_t n = 1;
  return n;
}

template <typename F>
inline void parallel_rows(std::size_t n_rows, std::size_t flops_per_row, F&& body) {
  const std::size_t workers = worker_count();
  if (workers <= 1 || n_rows < 2 * workers || n_rows * flops_per_row < 200000) {
    for (std::size_t i = 0; i < n_rows; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_rows) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode record. Nodes are appended in evaluation order, so walking
// the record backwards visits each node after all of its consumers.
class Tape {
 public:
  struct Node {
    Tensor val;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor t, bool needs_grad = true) {
    return push(std::move(t), needs_grad, nullptr);
  }
  Var constant(Tensor t) { return push(std::move(t), false, nullptr); }

  const Tensor& val(Var x) const { return nodes_[x.id].val; }

  // gradient of the last backward() pass; zeros if the node was unreachable
  const Tensor& grad(Var x) {
    touch_grad(x.id);
    return nodes_[x.id].grad;
  }

  void backward(Var loss) {
    Node& ln = nodes_[loss.id];
    if (ln.val.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    touch_grad(loss.id);
    ln.grad.v[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.has_grad) n.back(*this);
    }
  }

  // ---- arithmetic -------------------------------------------------------

  Var add(Var a, Var b) {
    check_shape(val(a), val(b), "add");
    Tensor out = val(a);
    const Tensor& bv = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += bv.v[i];
    return unless_const({a, b}, std::move(out), [a, b](Tape& t, const Tensor& g) {
      t.accum(a, g);
      t.accum(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_shape(val(a), val(b), "sub");
    Tensor out = val(a);
    const Tensor& bv = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= bv.v[i];
    return unless_const({a, b}, std::move(out), [a, b](Tape& t, const Tensor& g) {
      t.accum(a, g);
      t.accum_scaled(b, g, -1.0);
    });
  }

  Var mul(Var a, Var b) {
    check_shape(val(a), val(b), "mul");
    Tensor out = val(a);
    const Tensor& bv = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= bv.v[i];
    return unless_const({a, b}, std::move(out), [a, b](Tape& t, const Tensor& g) {
      const Tensor& av = t.val(a);
      const Tensor& bv2 = t.val(b);
      if (t.wants(a)) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] *= bv2.v[i];
        t.accum(a, ga);
      }
      if (t.wants(b)) {
        Tensor gb = g;
        for (std::size_t i = 0; i < gb.size(); ++i) gb.v[i] *= av.v[i];
        t.accum(b, gb);
      }
    });
  }

  // alpha*x + beta, elementwise
  Var affine(Var a, double alpha, double beta) {
    Tensor out = val(a);
    for (double& x : out.v) x = alpha * x + beta;
    return unless_const({a}, std::move(out), [a, alpha](Tape& t, const Tensor& g) {
      t.accum_scaled(a, g, alpha);
    });
  }

  // mat (n x c) + broadcast row (1 x c)
  Var add_row(Var a, Var r) {
    const Tensor& av = val(a);
    const Tensor& rv = val(r);
    if (rv.rows() != 1 || rv.cols() != av.cols())
      throw std::invalid_argument("add_row: want 1x" + std::to_string(av.cols()));
    Tensor out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += rv.v[j];
    return unless_const({a, r}, std::move(out), [a, r](Tape& t, const Tensor& g) {
      t.accum(a, g);
      if (t.wants(r)) {
        Tensor gr(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gr.v[j] += g.at(i, j);
        t.accum(r, gr);
      }
    });
  }

  // ---- matrix products --------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.cols() != bv.rows())
      throw std::invalid_argument("matmul: inner extents " + av.shape_str() + " * " +
                                  bv.shape_str());
    Tensor out = mm(av, bv);
    return unless_const({a, b}, std::move(out), [a, b](Tape& t, const Tensor& g) {
      if (t.wants(a)) t.accum(a, mm_nt(g, t.val(b)));   // g * b^T
      if (t.wants(b)) t.accum(b, mm_tn(t.val(a), g));   // a^T * g
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.cols() != bv.cols())
      throw std::invalid_argument("matmul_nt: inner extents " + av.shape_str() + " * " +
                                  bv.shape_str() + "^T");
    Tensor out = mm_nt(av, bv);
    return unless_const({a, b}, std::move(out), [a, b](Tape& t, const Tensor& g) {
      if (t.wants(a)) t.accum(a, mm(g, t.val(b)));      // g * b
      if (t.wants(b)) t.accum(b, mm_tn(g, t.val(a)));   // g^T * a
    });
  }

  // ---- activations ------------------------------------------------------

  Var elu(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = x > 0.0 ? x : std::expm1(x);
    return unless_const({a}, std::move(out), [a](Tape& t, const Tensor& g) {
      const Tensor& xv = t.val(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga.v[i] *= xv.v[i] > 0.0 ? 1.0 : std::exp(xv.v[i]);
      t.accum(a, ga);
    });
  }

  Var relu(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return unless_const({a}, std::move(out), [a](Tape& t, const Tensor& g) {
      const Tensor& xv = t.val(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (xv.v[i] <= 0.0) ga.v[i] = 0.0;
      t.accum(a, ga);
    });
  }

  Var sigmoid(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    Var r = unless_const({a}, std::move(out), nullptr);
    attach(r, [a, r](Tape& t, const Tensor& g) {
      const Tensor& y = t.val(r);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] *= y.v[i] * (1.0 - y.v[i]);
      t.accum(a, ga);
    });
    return r;
  }

  Var tanh_op(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = std::tanh(x);
    Var r = unless_const({a}, std::move(out), nullptr);
    attach(r, [a, r](Tape& t, const Tensor& g) {
      const Tensor& y = t.val(r);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] *= 1.0 - y.v[i] * y.v[i];
      t.accum(a, ga);
    });
    return r;
  }

  Var abs_op(Var a) {
    Tensor out = val(a);
    for (double& x : out.v) x = std::fabs(x);
    return unless_const({a}, std::move(out), [a](Tape& t, const Tensor& g) {
      const Tensor& xv = t.val(a);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double x = xv.v[i];
        ga.v[i] *= x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      }
      t.accum(a, ga);
    });
  }

  // ---- reductions -------------------------------------------------------

  Var sum_all(Var a) {
    double s = 0.0;
    for (double x : val(a).v) s += x;
    return unless_const({a}, Tensor::scalar(s), [a](Tape& t, const Tensor& g) {
      t.accum_fill(a, g.v[0]);
    });
  }

  Var mean_all(Var a) {
    const double n = static_cast<double>(val(a).size());
    double s = 0.0;
    for (double x : val(a).v) s += x;
    return unless_const({a}, Tensor::scalar(s / n), [a, n](Tape& t, const Tensor& g) {
      t.accum_fill(a, g.v[0] / n);
    });
  }

  // n x c -> n x 1
  Var row_sum(Var a) {
    const Tensor& av = val(a);
    Tensor out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < av.cols(); ++j) s += av.at(i, j);
      out.v[i] = s;
    }
    return unless_const({a}, std::move(out), [a](Tape& t, const Tensor& g) {
      const Tensor& av2 = t.val(a);
      Tensor ga(av2.rows(), av2.cols());
      for (std::size_t i = 0; i < av2.rows(); ++i)
        for (std::size_t j = 0; j < av2.cols(); ++j) ga.at(i, j) = g.v[i];
      t.accum(a, ga);
    });
  }

  // ---- shape ops --------------------------------------------------------

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const std::size_t n = val(parts[0]).rows();
    std::size_t c = 0;
    for (Var p : parts) {
      if (val(p).rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
      c += val(p).cols();
    }
    Tensor out(n, c);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& pv = val(p);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < pv.cols(); ++j) out.at(i, off + j) = pv.at(i, j);
      off += pv.cols();
    }
    return unless_const(parts, std::move(out), [parts](Tape& t, const Tensor& g) {
      std::size_t off2 = 0;
      for (Var p : parts) {
        const Tensor& pv = t.val(p);
        if (t.wants(p)) {
          Tensor gp(pv.rows(), pv.cols());
          for (std::size_t i = 0; i < pv.rows(); ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) gp.at(i, j) = g.at(i, off2 + j);
          t.accum(p, gp);
        }
        off2 += pv.cols();
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const std::size_t c = val(parts[0]).cols();
    std::size_t n = 0;
    for (Var p : parts) {
      if (val(p).cols() != c) throw std::invalid_argument("concat_rows: col mismatch");
      n += val(p).rows();
    }
    Tensor out(n, c);
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& pv = val(p);
      std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + off * c);
      off += pv.rows();
    }
    return unless_const(parts, std::move(out), [parts, c](Tape& t, const Tensor& g) {
      std::size_t off2 = 0;
      for (Var p : parts) {
        const Tensor& pv = t.val(p);
        if (t.wants(p)) {
          Tensor gp(pv.rows(), pv.cols());
          std::copy(g.v.begin() + off2 * c, g.v.begin() + (off2 + pv.rows()) * c, gp.v.begin());
          t.accum(p, gp);
        }
        off2 += pv.rows();
      }
    });
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t n) {
    const Tensor& av = val(a);
    if (c0 + n > av.cols()) throw std::out_of_range("slice_cols");
    Tensor out(av.rows(), n);
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = av.at(i, c0 + j);
    return unless_const({a}, std::move(out), [a, c0](Tape& t, const Tensor& g) {
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga.at(i, c0 + j) += g.at(i, j);
    });
  }

  // mat (n x c) scaled per row by a column vector (n x 1)
  Var mul_bcast_col(Var a, Var col) {
    const Tensor& av = val(a);
    const Tensor& cv = val(col);
    if (cv.rows() != av.rows() || cv.cols() != 1)
      throw std::invalid_argument("mul_bcast_col: want " + std::to_string(av.rows()) + "x1");
    Tensor out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= cv.v[i];
    return unless_const({a, col}, std::move(out), [a, col](Tape& t, const Tensor& g) {
      const Tensor& av2 = t.val(a);
      const Tensor& cv2 = t.val(col);
      if (t.wants(a)) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.rows(); ++i)
          for (std::size_t j = 0; j < ga.cols(); ++j) ga.at(i, j) *= cv2.v[i];
        t.accum(a, ga);
      }
      if (t.wants(col)) {
        Tensor gc(cv2.rows(), 1);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gc.v[i] += g.at(i, j) * av2.at(i, j);
        t.accum(col, gc);
      }
    });
  }

  // mat (n x c) scaled per column by a row vector (1 x c)
  Var mul_row(Var a, Var r) {
    const Tensor& av = val(a);
    const Tensor& rv = val(r);
    if (rv.rows() != 1 || rv.cols() != av.cols())
      throw std::invalid_argument("mul_row: want 1x" + std::to_string(av.cols()));
    Tensor out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= rv.v[j];
    return unless_const({a, r}, std::move(out), [a, r](Tape& t, const Tensor& g) {
      const Tensor& av2 = t.val(a);
      const Tensor& rv2 = t.val(r);
      if (t.wants(a)) {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.rows(); ++i)
          for (std::size_t j = 0; j < ga.cols(); ++j) ga.at(i, j) *= rv2.v[j];
        t.accum(a, ga);
      }
      if (t.wants(r)) {
        Tensor gr(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gr.v[j] += g.at(i, j) * av2.at(i, j);
        t.accum(r, gr);
      }
    });
  }

  Var slice_rows(Var a, std::size_t r0, std::size_t n) {
    const Tensor& av = val(a);
    if (r0 + n > av.rows()) throw std::out_of_range("slice_rows");
    Tensor out(n, av.cols());
    std::copy(av.v.begin() + r0 * av.cols(), av.v.begin() + (r0 + n) * av.cols(), out.v.begin());
    return unless_const({a}, std::move(out), [a, r0](Tape& t, const Tensor& g) {
      Tensor& ga = t.grad_ref(a.id);
      const std::size_t c = g.cols();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) ga.at(r0 + i, j) += g.at(i, j);
    });
  }

  Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const Tensor& av = val(a);
    Tensor out(rows.size(), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(av.row_ptr(rows[i]), av.row_ptr(rows[i]) + av.cols(), out.row_ptr(i));
    return unless_const({a}, std::move(out),
                        [a, rows = std::move(rows)](Tape& t, const Tensor& g) {
                          Tensor& ga = t.grad_ref(a.id);
                          for (std::size_t i = 0; i < rows.size(); ++i)
                            for (std::size_t j = 0; j < g.cols(); ++j)
                              ga.at(rows[i], j) += g.at(i, j);
                        });
  }

  // out.row(i) = in.row(perm[i])
  Var permute_rows(Var a, std::vector<std::size_t> perm) {
    return gather_rows(a, std::move(perm));
  }

  // each row of a (B x c) repeated `times` consecutive rows -> (B*times x c)
  Var repeat_each_row(Var a, std::size_t times) {
    const Tensor& av = val(a);
    Tensor out(av.rows() * times, av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t r = 0; r < times; ++r)
        std::copy(av.row_ptr(i), av.row_ptr(i) + av.cols(), out.row_ptr(i * times + r));
    return unless_const({a}, std::move(out), [a, times](Tape& t, const Tensor& g) {
      const Tensor& av2 = t.val(a);
      Tensor ga(av2.rows(), av2.cols());
      for (std::size_t i = 0; i < av2.rows(); ++i)
        for (std::size_t r = 0; r < times; ++r)
          for (std::size_t j = 0; j < av2.cols(); ++j) ga.at(i, j) += g.at(i * times + r, j);
      t.accum(a, ga);
    });
  }

  // stacked (B*block x c) scaled elementwise by a (block x c) kernel tiled over B
  Var mul_tiled(Var a, Var kernel, std::size_t block) {
    const Tensor& av = val(a);
    const Tensor& kv = val(kernel);
    if (kv.rows() != block || kv.cols() != av.cols() || av.rows() % block != 0)
      throw std::invalid_argument("mul_tiled: shape mismatch");
    Tensor out = av;
    const std::size_t reps = av.rows() / block;
    for (std::size_t rep = 0; rep < reps; ++rep)
      for (std::size_t r = 0; r < block; ++r)
        for (std::size_t j = 0; j < av.cols(); ++j) out.at(rep * block + r, j) *= kv.at(r, j);
    return unless_const({a, kernel}, std::move(out),
                        [a, kernel, block, reps](Tape& t, const Tensor& g) {
                          const Tensor& av2 = t.val(a);
                          const Tensor& kv2 = t.val(kernel);
                          if (t.wants(a)) {
                            Tensor ga = g;
                            for (std::size_t rep = 0; rep < reps; ++rep)
                              for (std::size_t r = 0; r < block; ++r)
                                for (std::size_t j = 0; j < g.cols(); ++j)
                                  ga.at(rep * block + r, j) *= kv2.at(r, j);
                            t.accum(a, ga);
                          }
                          if (t.wants(kernel)) {
                            Tensor gk(block, g.cols());
                            for (std::size_t rep = 0; rep < reps; ++rep)
                              for (std::size_t r = 0; r < block; ++r)
                                for (std::size_t j = 0; j < g.cols(); ++j)
                                  gk.at(r, j) += g.at(rep * block + r, j) * av2.at(rep * block + r, j);
                            t.accum(kernel, gk);
                          }
                        });
  }

  // ---- fused layers -----------------------------------------------------

  // per-row normalization over the feature (column) dimension
  Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = val(x);
    const Tensor& gv = val(gamma);
    const Tensor& bv = val(beta);
    const std::size_t c = xv.cols();
    if (gv.size() != c || bv.size() != c)
      throw std::invalid_argument("layer_norm: gamma/beta must have feature width");
    Tensor out(xv.rows(), c);
    Tensor stats(xv.rows(), 2);  // mu, inv_std per row
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < c; ++j) mu += xv.at(i, j);
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xv.at(i, j) - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double inv = 1.0 / std::sqrt(var + eps);
      stats.at(i, 0) = mu;
      stats.at(i, 1) = inv;
      for (std::size_t j = 0; j < c; ++j)
        out.at(i, j) = gv.v[j] * (xv.at(i, j) - mu) * inv + bv.v[j];
    }
    return unless_const({x, gamma, beta}, std::move(out),
                        [x, gamma, beta, stats = std::move(stats), c](Tape& t, const Tensor& g) {
                          const Tensor& xv2 = t.val(x);
                          const Tensor& gv2 = t.val(gamma);
                          const double dc = static_cast<double>(c);
                          Tensor gx(xv2.rows(), c), gg(1, c), gb(1, c);
                          for (std::size_t i = 0; i < xv2.rows(); ++i) {
                            const double mu = stats.at(i, 0), inv = stats.at(i, 1);
                            double sum_gy = 0.0, sum_gyx = 0.0;
                            for (std::size_t j = 0; j < c; ++j) {
                              const double xhat = (xv2.at(i, j) - mu) * inv;
                              const double gy = g.at(i, j) * gv2.v[j];
                              sum_gy += gy;
                              sum_gyx += gy * xhat;
                              gg.v[j] += g.at(i, j) * xhat;
                              gb.v[j] += g.at(i, j);
                            }
                            for (std::size_t j = 0; j < c; ++j) {
                              const double xhat = (xv2.at(i, j) - mu) * inv;
                              const double gy = g.at(i, j) * gv2.v[j];
                              gx.at(i, j) = inv * (gy - sum_gy / dc - xhat * sum_gyx / dc);
                            }
                          }
                          if (t.wants(x)) t.accum(x, gx);
                          if (t.wants(gamma)) t.accum(gamma, gg);
                          if (t.wants(beta)) t.accum(beta, gb);
                        });
  }

  // row-wise softmax with optional additive mask (e.g. causal -inf mask)
  Var softmax_rows(Var x, const Tensor* mask = nullptr) {
    const Tensor& xv = val(x);
    if (mask) check_shape(xv, *mask, "softmax_rows mask");
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < xv.cols(); ++j) {
        const double s = xv.at(i, j) + (mask ? mask->at(i, j) : 0.0);
        if (s > mx) mx = s;
      }
      double z = 0.0;
      for (std::size_t j = 0; j < xv.cols(); ++j) {
        const double s = xv.at(i, j) + (mask ? mask->at(i, j) : 0.0);
        const double e = std::isinf(s) && s < 0 ? 0.0 : std::exp(s - mx);
        out.at(i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) /= z;
    }
    Var r = unless_const({x}, std::move(out), nullptr);
    attach(r, [x, r](Tape& t, const Tensor& g) {
      const Tensor& y = t.val(r);
      Tensor gx(y.rows(), y.cols());
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j)
          gx.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
      }
      t.accum(x, gx);
    });
    return r;
  }

  // clip(x, 0, hi) elementwise; at x == hi the cap branch wins and the
  // gradient routes to hi (later bins get the remainder)
  Var clip_box(Var x, Var hi) {
    const Tensor& xv = val(x);
    const Tensor& hv = val(hi);
    check_shape(xv, hv, "clip_box");
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double lo_clipped = xv.v[i] < 0.0 ? 0.0 : xv.v[i];
      out.v[i] = lo_clipped >= hv.v[i] ? hv.v[i] : lo_clipped;
    }
    return unless_const({x, hi}, std::move(out), [x, hi](Tape& t, const Tensor& g) {
      const Tensor& xv2 = t.val(x);
      const Tensor& hv2 = t.val(hi);
      if (t.wants(x)) {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (!(xv2.v[i] > 0.0 && xv2.v[i] < hv2.v[i])) gx.v[i] = 0.0;
        t.accum(x, gx);
      }
      if (t.wants(hi)) {
        Tensor gh = g;
        for (std::size_t i = 0; i < gh.size(); ++i)
          if (!(xv2.v[i] >= hv2.v[i])) gh.v[i] = 0.0;
        t.accum(hi, gh);
      }
    });
  }

  // ---- plumbing used by op implementations ------------------------------

  bool wants(Var x) const { return nodes_[x.id].needs_grad; }

  Tensor& grad_ref(int id) {
    touch_grad(id);
    return nodes_[id].grad;
  }

  void accum(Var x, const Tensor& g) {
    if (!wants(x)) return;
    Tensor& dst = grad_ref(x.id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst.v[i] += g.v[i];
  }

  void accum_scaled(Var x, const Tensor& g, double s) {
    if (!wants(x)) return;
    Tensor& dst = grad_ref(x.id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst.v[i] += s * g.v[i];
  }

  void accum_fill(Var x, double s) {
    if (!wants(x)) return;
    Tensor& dst = grad_ref(x.id);
    for (double& d : dst.v) d += s;
  }

  // register an op node: output value + backward(grad of output)
  Var make_op(const std::vector<Var>& inputs, Tensor out,
              std::function<void(Tape&, const Tensor&)> back) {
    return unless_const(inputs, std::move(out), std::move(back));
  }

  static Tensor mm(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    parallel_rows(n, k * m, [&](std::size_t i) {
      double* orow = out.row_ptr(i);
      const double* arow = a.row_ptr(i);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b.row_ptr(p);
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
    });
    return out;
  }

  static Tensor mm_nt(const Tensor& a, const Tensor& b) {  // a * b^T
    Tensor out(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    parallel_rows(n, k * m, [&](std::size_t i) {
      const double* arow = a.row_ptr(i);
      double* orow = out.row_ptr(i);
      for (std::size_t j = 0; j < m; ++j) {
        const double* brow = b.row_ptr(j);
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        orow[j] = s;
      }
    });
    return out;
  }

  static Tensor mm_tn(const Tensor& a, const Tensor& b) {  // a^T * b
    Tensor out(a.cols(), b.cols());
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = a.row_ptr(p);
      const double* brow = b.row_ptr(p);
      for (std::size_t i = 0; i < n; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* orow = out.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;

  Var push(Tensor t, bool needs_grad, std::function<void(Tape&)> back) {
#ifndef NDEBUG
    if (!t.all_finite()) throw std::runtime_error("tape: non-finite tensor");
#endif
    nodes_.push_back(Node{std::move(t), Tensor(), false, needs_grad, std::move(back)});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  void touch_grad(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.val.rows(), n.val.cols());
      n.has_grad = true;
    }
  }

  Var unless_const(const std::vector<Var>& inputs, Tensor out,
                   std::function<void(Tape&, const Tensor&)> back) {
    bool ng = false;
    for (Var x : inputs) ng = ng || nodes_[x.id].needs_grad;
    if (!ng || !back) return push(std::move(out), ng, nullptr);
    Var r = push(std::move(out), true, nullptr);
    attach_impl(r, std::move(back));
    return r;
  }

  void attach(Var r, std::function<void(Tape&, const Tensor&)> back) {
    if (nodes_[r.id].needs_grad) attach_impl(r, std::move(back));
  }

  void attach_impl(Var r, std::function<void(Tape&, const Tensor&)> back) {
    const int rid = r.id;
    nodes_[rid].back = [rid, back = std::move(back)](Tape& t) {
      back(t, t.nodes_[rid].grad);
    };
  }
};

}  // namespace vwapsig
