#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pfsr/diff/graph.hpp"
#include "pfsr/diff/tensor.hpp"

namespace pfsr::test {

inline diff::Tensor random_tensor(std::mt19937_64& rng, diff::Shape shape, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  diff::Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

// Builds a scalar from leaf values; called once with gradients and again for
// every finite-difference probe.
using ScalarFn = std::function<diff::Var(diff::Graph&, const std::vector<diff::Var>&)>;

// Largest relative error between reverse-mode and central-difference
// gradients over every element of every input.
inline double max_gradient_error(std::vector<diff::Tensor> inputs, const ScalarFn& f,
                                 double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    diff::Graph g;
    std::vector<diff::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    g.backward(f(g, leaves));
    for (auto v : leaves) {
      const auto grad = g.grad(v).values();
      analytic.emplace_back(grad.begin(), grad.end());
    }
  }
  auto eval = [&] {
    diff::Graph g;
    std::vector<diff::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, false));
    return g.value(f(g, leaves)).item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = eval();
      inputs[k][i] = saved - h;
      const double down = eval();
      inputs[k][i] = saved;
      worst = std::max(worst, rel_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace pfsr::test
