#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pfsr/diff/graph.hpp"

namespace pfsr::diff {

// Differentiable ops. Every op validates shapes and throws DimensionError on
// mismatch. Rank-2 operands are [rows x cols]; "row broadcast" means a
// vector of length cols applied to every row.

Var matmul(Graph& g, Var a, Var b);     // [m x k] . [k x n]
Var matmul_bt(Graph& g, Var a, Var b);  // [m x k] . [n x k]^T

Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var add_row_broadcast(Graph& g, Var a, Var row);  // a[m x n] + row[n]
Var mul_row_broadcast(Graph& g, Var a, Var row);  // a[m x n] .* row[n]
Var mul_col_broadcast(Graph& g, Var a, Var col);  // a[m x n] .* col[m x 1]

Var silu(Graph& g, Var a);
Var sigmoid(Graph& g, Var a);
Var softplus(Graph& g, Var a);
Var neg_exp(Graph& g, Var a);  // -exp(a)
Var square(Graph& g, Var a);
Var sum(Graph& g, Var a);

Var slice_cols(Graph& g, Var a, std::size_t begin, std::size_t count);
Var slice_rows(Graph& g, Var a, std::size_t begin, std::size_t count);
Var select_rows(Graph& g, Var a, std::span<const std::size_t> rows);
Var reverse_rows(Graph& g, Var a);
Var concat_rows(Graph& g, std::span<const Var> parts);  // stacks equal-width blocks
Var row_dot(Graph& g, Var a, Var b);  // [m x n], [m x n] -> [m x 1]

// Embedding lookup: out[t,:] = table[ids[t],:]; an id equal to `padding_id`
// yields a zero row and receives no gradient.
Var gather_rows(Graph& g, Var table, std::span<const std::int64_t> ids,
                std::int64_t padding_id = 0);

// Multiplies by a fixed 0/1 keep-mask scaled by 1/(1-rate).
Var dropout(Graph& g, Var a, const std::vector<std::uint8_t>& keep, double rate);

Var causal_depthwise_conv(Graph& g, Var x, Var w);
Var selective_scan(Graph& g, Var u, Var delta, Var A, Var B, Var C, Var D);

// weight * sum_r -log softmax(logits[r,:])[targets[r]]. Targets are column
// indices. Returns a scalar.
Var cross_entropy(Graph& g, Var logits, std::span<const std::size_t> targets,
                  double weight = 1.0);

}  // namespace pfsr::diff
