#pragma once

#include "pfsr/diff/tensor.hpp"

namespace pfsr::diff::kernels {

// Graph-free forward passes of the two sequence kernels. The Graph ops in
// ops.hpp wrap these and add the reverse rules.

// Per channel d, with h_0 = 0:
//   h_t = exp(delta[t,d] * A[d,:]) .* h_{t-1} + delta[t,d] * B[t,:] * u[t,d]
//   y[t,d] = <C[t,:], h_t> + D[d] * u[t,d]
// Shapes: u, delta [L x Din]; A [Din x S]; B, C [L x S]; D [Din] -> [L x Din].
// A is used as given (callers pass the already-negated continuous-time rates).
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A,
                      const Tensor& B, const Tensor& C, const Tensor& D);

// y[t,d] = sum_{j<K} w[d,j] * x[t-j,d], reading x[<0] as zero.
// Shapes: x [L x D]; w [D x K] -> [L x D].
Tensor causal_depthwise_conv(const Tensor& x, const Tensor& w);

}  // namespace pfsr::diff::kernels
