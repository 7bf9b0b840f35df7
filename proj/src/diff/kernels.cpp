#include "pfsr/diff/kernels.hpp"

#include <cmath>
#include <string>

#include "scan_detail.hpp"
#include "pfsr/errors.hpp"

namespace pfsr::diff {
namespace detail {

void check_scan_shapes(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                       const Tensor& C, const Tensor& D) {
  if (u.rank() != 2) throw DimensionError("selective_scan: u must be rank 2");
  const std::size_t L = u.rows();
  const std::size_t din = u.cols();
  if (L < 1) throw DimensionError("selective_scan: empty sequence");
  require_same_shape(u, delta, "selective_scan delta");
  if (A.rank() != 2 || A.rows() != din) {
    throw DimensionError("selective_scan: A must be [Din x S], got " + shape_string(A.shape()));
  }
  const std::size_t S = A.cols();
  if (B.rank() != 2 || B.rows() != L || B.cols() != S) {
    throw DimensionError("selective_scan: B must be [L x S], got " + shape_string(B.shape()));
  }
  require_same_shape(B, C, "selective_scan C");
  if (D.size() != din) {
    throw DimensionError("selective_scan: D must have Din entries, got " +
                         shape_string(D.shape()));
  }
  require_finite(u, "selective_scan u");
  require_finite(delta, "selective_scan delta");
  require_finite(A, "selective_scan A");
  require_finite(B, "selective_scan B");
  require_finite(C, "selective_scan C");
  require_finite(D, "selective_scan D");
}

Tensor scan_forward(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                    const Tensor& C, const Tensor& D, std::vector<double>* states,
                    std::vector<double>* decays) {
  check_scan_shapes(u, delta, A, B, C, D);
  const std::size_t L = u.rows();
  const std::size_t din = u.cols();
  const std::size_t S = A.cols();
  Tensor y(Shape{L, din});
  std::vector<double> h(din * S, 0.0);
  if (states) states->assign(L * din * S, 0.0);
  if (decays) decays->assign(L * din * S, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    const double* b = &B(t, 0);
    const double* c = &C(t, 0);
    for (std::size_t d = 0; d < din; ++d) {
      const double dt = delta(t, d);
      const double ut = u(t, d);
      const double* a = &A(d, 0);
      double* hd = h.data() + d * S;
      double acc = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        const double decay = std::exp(dt * a[s]);
        hd[s] = decay * hd[s] + dt * b[s] * ut;
        acc += c[s] * hd[s];
        if (decays) (*decays)[(t * din + d) * S + s] = decay;
      }
      if (states) {
        std::copy(hd, hd + S, states->data() + (t * din + d) * S);
      }
      y(t, d) = acc + D[d] * ut;
    }
  }
  return y;
}

void check_conv_shapes(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 2) {
    throw DimensionError("causal_depthwise_conv: x and w must be rank 2");
  }
  if (w.rows() != x.cols()) {
    throw DimensionError("causal_depthwise_conv: w must be [D x K] with D = " +
                         std::to_string(x.cols()) + ", got " + shape_string(w.shape()));
  }
  if (w.cols() < 1) throw DimensionError("causal_depthwise_conv: kernel size must be >= 1");
}

}  // namespace detail

namespace kernels {

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                      const Tensor& C, const Tensor& D) {
  return detail::scan_forward(u, delta, A, B, C, D, nullptr, nullptr);
}

Tensor causal_depthwise_conv(const Tensor& x, const Tensor& w) {
  detail::check_conv_shapes(x, w);
  const std::size_t L = x.rows();
  const std::size_t D = x.cols();
  const std::size_t K = w.cols();
  Tensor y(Shape{L, D});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < K && j <= t; ++j) {
      const double* xr = &x(t - j, 0);
      double* yr = &y(t, 0);
      for (std::size_t d = 0; d < D; ++d) yr[d] += w(d, j) * xr[d];
    }
  }
  return y;
}

}  // namespace kernels
}  // namespace pfsr::diff
