#pragma once

#include <vector>

#include "pfsr/diff/tensor.hpp"

// Internal helpers shared by the graph-free kernels and their Graph ops.
namespace pfsr::diff::detail {

void check_scan_shapes(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                       const Tensor& C, const Tensor& D);

// Runs the scan; optionally records h_t and exp(delta*A) per (t, d, s) for
// the reverse pass.
Tensor scan_forward(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                    const Tensor& C, const Tensor& D, std::vector<double>* states,
                    std::vector<double>* decays);

void check_conv_shapes(const Tensor& x, const Tensor& w);

}  // namespace pfsr::diff::detail
