#include "pfsr/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pfsr/diff/kernels.hpp"
#include "pfsr/errors.hpp"
#include "scan_detail.hpp"

namespace pfsr::diff {
namespace {

const Tensor& val(Graph& g, Var v) { return g.value(v); }

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected rank 2, got " + shape_string(t.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

template <typename F, typename DF>
Var unary(Graph& g, Var a, F f, DF df, OpKind kind = OpKind::kGeneric) {
  const Tensor& x = val(g, a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return g.record(
      std::move(out), {a},
      [a, df](Graph& gr, const Tensor& go) {
        const Tensor& xv = gr.value(a);
        Tensor& ga = gr.grad_buffer(a);
        for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += go[i] * df(xv[i]);
      },
      kind);
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  // log(1 + e^x) without overflow
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& A = val(g, a);
  const Tensor& B = val(g, b);
  require_rank2(A, "matmul lhs");
  require_rank2(B, "matmul rhs");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: " + shape_string(A.shape()) + " . " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out(Shape{m, n});
  gemm_nn(A.values().data(), B.values().data(), out.values().data(), m, k, n);
  return g.record(
      std::move(out), {a, b},
      [a, b, m, k, n](Graph& gr, const Tensor& go) {
        if (gr.requires_grad(a)) {
          gemm_nt(go.values().data(), gr.value(b).values().data(),
                  gr.grad_buffer(a).values().data(), m, n, k);
        }
        if (gr.requires_grad(b)) {
          gemm_tn(gr.value(a).values().data(), go.values().data(),
                  gr.grad_buffer(b).values().data(), m, k, n);
        }
      },
      OpKind::kMatmul);
}

Var matmul_bt(Graph& g, Var a, Var b) {
  const Tensor& A = val(g, a);
  const Tensor& B = val(g, b);
  require_rank2(A, "matmul_bt lhs");
  require_rank2(B, "matmul_bt rhs");
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_bt: " + shape_string(A.shape()) + " . " +
                         shape_string(B.shape()) + "^T");
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out(Shape{m, n});
  gemm_nt(A.values().data(), B.values().data(), out.values().data(), m, k, n);
  return g.record(
      std::move(out), {a, b},
      [a, b, m, k, n](Graph& gr, const Tensor& go) {
        if (gr.requires_grad(a)) {
          // dA[m x k] += go[m x n] . B[n x k]
          gemm_nn(go.values().data(), gr.value(b).values().data(),
                  gr.grad_buffer(a).values().data(), m, n, k);
        }
        if (gr.requires_grad(b)) {
          // dB[n x k] += go^T[n x m] . A[m x k]
          gemm_tn(go.values().data(), gr.value(a).values().data(),
                  gr.grad_buffer(b).values().data(), m, n, k);
        }
      },
      OpKind::kMatmul);
}

Var add(Graph& g, Var a, Var b) {
  require_same_shape(val(g, a), val(g, b), "add");
  Tensor out = val(g, a);
  const Tensor& B = val(g, b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& go) {
    gr.accumulate_grad(a, go);
    gr.accumulate_grad(b, go);
  });
}

Var mul(Graph& g, Var a, Var b) {
  require_same_shape(val(g, a), val(g, b), "mul");
  Tensor out = val(g, a);
  const Tensor& B = val(g, b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(a);
    const Tensor& bv = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (gr.requires_grad(b)) {
      Tensor& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Graph& g, Var a, double s) {
  Tensor out = val(g, a);
  for (double& x : out.values()) x *= s;
  return g.record(std::move(out), {a}, [a, s](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  });
}

Var add_row_broadcast(Graph& g, Var a, Var row) {
  const Tensor& A = val(g, a);
  const Tensor& r = val(g, row);
  require_rank2(A, "add_row_broadcast");
  if (r.size() != A.cols()) throw DimensionError("add_row_broadcast: row length mismatch");
  Tensor out = A;
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += r[j];
  return g.record(std::move(out), {a, row}, [a, row, n](Graph& gr, const Tensor& go) {
    gr.accumulate_grad(a, go);
    if (gr.requires_grad(row)) {
      Tensor& gr_row = gr.grad_buffer(row);
      for (std::size_t i = 0; i < go.size(); ++i) gr_row[i % n] += go[i];
    }
  });
}

Var mul_row_broadcast(Graph& g, Var a, Var row) {
  const Tensor& A = val(g, a);
  const Tensor& r = val(g, row);
  require_rank2(A, "mul_row_broadcast");
  if (r.size() != A.cols()) throw DimensionError("mul_row_broadcast: row length mismatch");
  Tensor out = A;
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= r[i % n];
  return g.record(std::move(out), {a, row}, [a, row, n](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(a);
    const Tensor& rv = gr.value(row);
    if (gr.requires_grad(a)) {
      Tensor& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * rv[i % n];
    }
    if (gr.requires_grad(row)) {
      Tensor& grow = gr.grad_buffer(row);
      for (std::size_t i = 0; i < go.size(); ++i) grow[i % n] += go[i] * av[i];
    }
  });
}

Var mul_col_broadcast(Graph& g, Var a, Var col) {
  const Tensor& A = val(g, a);
  const Tensor& c = val(g, col);
  require_rank2(A, "mul_col_broadcast");
  if (c.size() != A.rows()) throw DimensionError("mul_col_broadcast: column length mismatch");
  Tensor out = A;
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i / n];
  return g.record(std::move(out), {a, col}, [a, col, n](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(a);
    const Tensor& cv = gr.value(col);
    if (gr.requires_grad(a)) {
      Tensor& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * cv[i / n];
    }
    if (gr.requires_grad(col)) {
      Tensor& gc = gr.grad_buffer(col);
      for (std::size_t i = 0; i < go.size(); ++i) gc[i / n] += go[i] * av[i];
    }
  });
}

Var silu(Graph& g, Var a) {
  return unary(
      g, a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      },
      OpKind::kSilu);
}

Var sigmoid(Graph& g, Var a) {
  return unary(
      g, a, sigmoid_scalar,
      [](double x) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 - s);
      });
}

Var softplus(Graph& g, Var a) {
  return unary(g, a, softplus_scalar, sigmoid_scalar, OpKind::kSoftplus);
}

Var neg_exp(Graph& g, Var a) {
  return unary(
      g, a, [](double x) { return -std::exp(x); }, [](double x) { return -std::exp(x); });
}

Var square(Graph& g, Var a) {
  return unary(
      g, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sum(Graph& g, Var a) {
  const Tensor& A = val(g, a);
  double s = 0.0;
  for (double x : A.values()) s += x;
  return g.record(Tensor::scalar(s), {a}, [a](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_buffer(a);
    const double v = go[0];
    for (double& x : ga.values()) x += v;
  });
}

Var slice_cols(Graph& g, Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = val(g, a);
  require_rank2(A, "slice_cols");
  const std::size_t n = A.cols();
  if (begin + count > n || count == 0) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" +
                         std::to_string(count) + ") outside " + std::to_string(n) + " columns");
  }
  const std::size_t m = A.rows();
  Tensor out(Shape{m, count});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(&A(i, begin), count, &out(i, 0));
  return g.record(std::move(out), {a}, [a, begin, count, m](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) ga(i, begin + j) += go(i, j);
  });
}

Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = val(g, a);
  require_rank2(A, "slice_rows");
  if (begin + count > A.rows() || count == 0) {
    throw DimensionError("slice_rows: range outside " + std::to_string(A.rows()) + " rows");
  }
  const std::size_t n = A.cols();
  Tensor out(Shape{count, n});
  std::copy_n(&A(begin, 0), count * n, out.values().data());
  return g.record(std::move(out), {a}, [a, begin, n](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_buffer(a);
    double* dst = &ga(begin, 0);
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i];
  });
}

Var select_rows(Graph& g, Var a, std::span<const std::size_t> rows) {
  const Tensor& A = val(g, a);
  require_rank2(A, "select_rows");
  const std::size_t n = A.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  if (idx.empty()) throw DimensionError("select_rows: no rows requested");
  Tensor out(Shape{idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= A.rows()) throw DimensionError("select_rows: row index out of range");
    std::copy_n(&A(idx[i], 0), n, &out(i, 0));
  }
  return g.record(std::move(out), {a}, [a, idx, n](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga(idx[i], j) += go(i, j);
  });
}

Var reverse_rows(Graph& g, Var a) {
  const Tensor& A = val(g, a);
  require_rank2(A, "reverse_rows");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&A(m - 1 - i, 0), n, &out(i, 0));
  return g.record(std::move(out), {a}, [a, m, n](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(m - 1 - i, j) += go(i, j);
  });
}

Var concat_rows(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  std::vector<Var> ps(parts.begin(), parts.end());
  const std::size_t n = val(g, ps[0]).cols();
  std::size_t m = 0;
  for (Var p : ps) {
    require_rank2(val(g, p), "concat_rows");
    if (val(g, p).cols() != n) throw DimensionError("concat_rows: column count mismatch");
    m += val(g, p).rows();
  }
  Tensor out(Shape{m, n});
  std::size_t off = 0;
  for (Var p : ps) {
    const Tensor& t = val(g, p);
    std::copy_n(t.values().data(), t.size(), out.values().data() + off);
    off += t.size();
  }
  return g.record(std::move(out), ps, [ps](Graph& gr, const Tensor& go) {
    std::size_t o = 0;
    for (Var p : ps) {
      const std::size_t len = gr.value(p).size();
      if (gr.requires_grad(p)) {
        Tensor& gp = gr.grad_buffer(p);
        for (std::size_t i = 0; i < len; ++i) gp[i] += go[o + i];
      }
      o += len;
    }
  });
}

Var row_dot(Graph& g, Var a, Var b) {
  const Tensor& A = val(g, a);
  const Tensor& B = val(g, b);
  require_rank2(A, "row_dot");
  require_same_shape(A, B, "row_dot");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(Shape{m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += A(i, j) * B(i, j);
    out[i] = acc;
  }
  return g.record(std::move(out), {a, b}, [a, b, m, n](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(a);
    const Tensor& bv = gr.value(b);
    if (gr.requires_grad(a)) {
      Tensor& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga(i, j) += go[i] * bv(i, j);
    }
    if (gr.requires_grad(b)) {
      Tensor& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb(i, j) += go[i] * av(i, j);
    }
  });
}

Var gather_rows(Graph& g, Var table, std::span<const std::int64_t> ids,
                std::int64_t padding_id) {
  const Tensor& T = val(g, table);
  require_rank2(T, "gather_rows");
  const std::size_t n = T.cols();
  std::vector<std::int64_t> id_copy(ids.begin(), ids.end());
  if (id_copy.empty()) throw DimensionError("gather_rows: empty id list");
  Tensor out(Shape{id_copy.size(), n});
  for (std::size_t t = 0; t < id_copy.size(); ++t) {
    const auto id = id_copy[t];
    if (id < 0 || static_cast<std::size_t>(id) >= T.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " outside table of " +
                           std::to_string(T.rows()) + " rows");
    }
    if (id == padding_id) continue;
    std::copy_n(&T(static_cast<std::size_t>(id), 0), n, &out(t, 0));
  }
  return g.record(std::move(out), {table},
                  [table, id_copy, n, padding_id](Graph& gr, const Tensor& go) {
                    Tensor& gt = gr.grad_buffer(table);
                    for (std::size_t t = 0; t < id_copy.size(); ++t) {
                      if (id_copy[t] == padding_id) continue;
                      const auto r = static_cast<std::size_t>(id_copy[t]);
                      for (std::size_t j = 0; j < n; ++j) gt(r, j) += go(t, j);
                    }
                  });
}

Var dropout(Graph& g, Var a, const std::vector<std::uint8_t>& keep, double rate) {
  const Tensor& A = val(g, a);
  if (keep.size() != A.size()) throw DimensionError("dropout: mask size mismatch");
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout: rate must be in [0, 1)");
  const double inv = 1.0 / (1.0 - rate);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? out[i] * inv : 0.0;
  return g.record(std::move(out), {a}, [a, keep, inv](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (keep[i]) ga[i] += go[i] * inv;
  });
}

Var causal_depthwise_conv(Graph& g, Var x, Var w) {
  Tensor out = kernels::causal_depthwise_conv(val(g, x), val(g, w));
  return g.record(
      std::move(out), {x, w},
      [x, w](Graph& gr, const Tensor& go) {
        const Tensor& xv = gr.value(x);
        const Tensor& wv = gr.value(w);
        const std::size_t L = xv.rows(), D = xv.cols(), K = wv.cols();
        const bool need_x = gr.requires_grad(x);
        const bool need_w = gr.requires_grad(w);
        Tensor* gx = need_x ? &gr.grad_buffer(x) : nullptr;
        Tensor* gw = need_w ? &gr.grad_buffer(w) : nullptr;
        for (std::size_t t = 0; t < L; ++t) {
          for (std::size_t j = 0; j < K && j <= t; ++j) {
            for (std::size_t d = 0; d < D; ++d) {
              const double gy = go(t, d);
              if (gx) (*gx)(t - j, d) += gy * wv(d, j);
              if (gw) (*gw)(d, j) += gy * xv(t - j, d);
            }
          }
        }
      },
      OpKind::kCausalConv);
}

Var selective_scan(Graph& g, Var u, Var delta, Var A, Var B, Var C, Var D) {
  std::vector<double> states;
  std::vector<double> decays;
  Tensor out = detail::scan_forward(val(g, u), val(g, delta), val(g, A), val(g, B), val(g, C),
                                    val(g, D), &states, &decays);
  return g.record(
      std::move(out), {u, delta, A, B, C, D},
      [u, delta, A, B, C, D, states = std::move(states), decays = std::move(decays)](
          Graph& gr, const Tensor& gy) {
        const Tensor& uv = gr.value(u);
        const Tensor& dv = gr.value(delta);
        const Tensor& Av = gr.value(A);
        const Tensor& Bv = gr.value(B);
        const Tensor& Cv = gr.value(C);
        const Tensor& Dv = gr.value(D);
        const std::size_t L = uv.rows(), din = uv.cols(), S = Av.cols();

        Tensor gu(uv.shape()), gdelta(dv.shape()), gA(Av.shape()), gB(Bv.shape()),
            gC(Cv.shape()), gD(Dv.shape());
        // Running d(loss)/d(h_t) for one channel.
        std::vector<double> gh(S);
        for (std::size_t d = 0; d < din; ++d) {
          std::fill(gh.begin(), gh.end(), 0.0);
          for (std::size_t t = L; t-- > 0;) {
            const double gyt = gy(t, d);
            const double ut = uv(t, d);
            const double dt = dv(t, d);
            const double* h = states.data() + (t * din + d) * S;
            const double* h_prev = t > 0 ? states.data() + ((t - 1) * din + d) * S : nullptr;
            const double* decay = decays.data() + (t * din + d) * S;
            gD[d] += gyt * ut;
            double gu_t = gyt * Dv[d];
            double gdt = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
              gC(t, s) += gyt * h[s];
              gh[s] += gyt * Cv(t, s);
              // h_t = decay * h_{t-1} + dt * B * u
              const double b = Bv(t, s);
              gdt += gh[s] * b * ut;
              gB(t, s) += gh[s] * dt * ut;
              gu_t += gh[s] * dt * b;
              if (h_prev) {
                const double gdecay = gh[s] * h_prev[s] * decay[s];
                gdt += gdecay * Av(d, s);
                gA(d, s) += gdecay * dt;
              }
              gh[s] *= decay[s];
            }
            gu(t, d) += gu_t;
            gdelta(t, d) += gdt;
          }
        }
        gr.accumulate_grad(u, gu);
        gr.accumulate_grad(delta, gdelta);
        gr.accumulate_grad(A, gA);
        gr.accumulate_grad(B, gB);
        gr.accumulate_grad(C, gC);
        gr.accumulate_grad(D, gD);
      },
      OpKind::kSelectiveScan);
}

Var cross_entropy(Graph& g, Var logits, std::span<const std::size_t> targets, double weight) {
  const Tensor& Z = val(g, logits);
  require_rank2(Z, "cross_entropy");
  const std::size_t m = Z.rows(), n = Z.cols();
  if (targets.size() != m) throw DimensionError("cross_entropy: one target per row required");
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  Tensor probs(Shape{m, n});
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] >= n) throw ContractError("cross_entropy: target column out of range");
    const auto row = Z.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs(i, j) = std::exp(row[j] - mx);
      z += probs(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) probs(i, j) /= z;
    total += -(row[tgt[i]] - mx - std::log(z));
  }
  return g.record(
      Tensor::scalar(weight * total), {logits},
      [logits, tgt, weight, probs = std::move(probs), n](Graph& gr, const Tensor& go) {
        Tensor& gz = gr.grad_buffer(logits);
        const double s = go[0] * weight;
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          for (std::size_t j = 0; j < n; ++j) gz(i, j) += s * probs(i, j);
          gz(i, tgt[i]) -= s;
        }
      },
      OpKind::kCrossEntropy);
}

}  // namespace pfsr::diff
