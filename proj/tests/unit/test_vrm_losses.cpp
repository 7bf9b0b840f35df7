#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pfsr/errors.hpp"
#include "pfsr/losses/losses.hpp"
#include "pfsr/vrm/vrm.hpp"
#include "support.hpp"

using namespace pfsr;
using model::LayerMap;
using model::ParameterVector;
using vrm::FisherVector;

namespace {

LayerMap layers_of(std::initializer_list<std::size_t> lengths) {
  LayerMap m;
  std::size_t i = 0;
  for (std::size_t n : lengths) m.append("g" + std::to_string(i++), n);
  return m;
}

ParameterVector vec(const LayerMap& m, std::vector<double> v) { return {m, std::move(v)}; }

FisherVector normalized(std::vector<double> v) { return {std::move(v), true}; }

}  // namespace

TEST_SUITE("vrm") {
  TEST_CASE("Fisher values are mean squared gradients") {
    const std::vector<std::vector<double>> one = {{2.0, -3.0}};
    CHECK(vrm::fisher_from_gradients(one).values == std::vector<double>{4.0, 9.0});
    const std::vector<std::vector<double>> zero = {{0.0, 0.0}, {0.0, 0.0}};
    CHECK(vrm::fisher_from_gradients(zero).values == std::vector<double>{0.0, 0.0});
    CHECK_FALSE(vrm::fisher_from_gradients(one).normalized);
    CHECK_THROWS_AS(vrm::fisher_from_gradients({}), ContractError);
  }

  TEST_CASE("Fisher values on a tiny model match per-batch gradients") {
    model::ModelConfig c;
    c.embed_dim = 4;
    c.state_size = 2;
    c.conv_kernel = 2;
    c.expansion = 2;
    c.max_seq_len = 6;
    c.num_items = 7;
    const model::RecModel m(c);
    const auto p = m.init_parameters(3);
    const std::vector<ItemId> a = {1, 4, 2, 7}, b = {3, 3, 5}, d = {6, 1, 2, 4, 5};
    const std::vector<std::vector<model::SequenceTargets>> batches = {
        {{a, {1, 2, 3}}}, {{b, {1, 2}}, {a, {2}}}, {{d, {1, 4}}}};
    const auto fisher = vrm::fisher_values(m, p, batches);
    std::vector<double> expected(p.size(), 0.0);
    for (const auto& batch : batches) {
      std::size_t n = 0;
      for (const auto& s : batch) n += s.positions.size();
      std::vector<double> g(p.size());
      // Gradient of the mean log-likelihood (negative mean cross-entropy).
      model::next_item_loss(m, p, batch, -1.0 / static_cast<double>(n), {}, g);
      for (std::size_t i = 0; i < g.size(); ++i) expected[i] += g[i] * g[i] / 3.0;
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      worst = std::max(worst, std::abs(fisher.values[i] - expected[i]));
    }
    CHECK(worst <= 1e-10);
    CHECK_THROWS_AS(vrm::fisher_values(m, p, {}), ContractError);
  }

  TEST_CASE("layerwise normalization") {
    const auto one = layers_of({3});
    CHECK(vrm::layerwise_normalize({{1, 3, 5}, false}, one).values ==
          std::vector<double>{0.0, 0.5, 1.0});
    CHECK(vrm::layerwise_normalize({{2, 2}, false}, layers_of({2})).values ==
          std::vector<double>{0.0, 0.0});
    const auto two = layers_of({2, 3});
    const auto out = vrm::layerwise_normalize({{0, 10, 5, 5, 15}, false}, two);
    CHECK(out.normalized);
    CHECK(out.values == test::normalize_oracle({0, 10, 5, 5, 15}, two));
    CHECK(out.values == std::vector<double>{0, 1, 0, 0, 1});
    CHECK_THROWS_AS(vrm::layerwise_normalize(out, two), ContractError);
  }

  TEST_CASE("mask threshold") {
    auto p1 = [](std::vector<double> v, double lambda) {
      return vrm::build_masks(normalized(std::move(v)), lambda).p1;
    };
    CHECK(p1({0.5}, 0.5) == std::vector<std::uint8_t>{1});
    CHECK(vrm::build_masks(normalized({0.5}), 0.5).p2 == std::vector<std::uint8_t>{0});
    CHECK(p1({0.49, 0.51}, 0.5) == std::vector<std::uint8_t>{0, 1});
    CHECK(p1({0.0, 0.3, 1.0}, 0.0) == std::vector<std::uint8_t>{1, 1, 1});
    CHECK(vrm::build_masks(normalized({0.0, 0.3, 1.0}), 1.01).p2 ==
          std::vector<std::uint8_t>{1, 1, 1});
    CHECK_THROWS_AS(vrm::build_masks({{0.5}, false}, 0.5), ContractError);
  }

  TEST_CASE("mixing") {
    const auto l = layers_of({2});
    const auto local = vec(l, {1, 2}), global = vec(l, {10, 20});
    CHECK(vrm::mix_parameters(local, global, {{1, 0}, {0, 1}}) == vec(l, {1, 20}));
    CHECK(vrm::mix_parameters(local, global, {{1, 1}, {0, 0}}) == local);
    CHECK(vrm::mix_parameters(local, global, {{0, 0}, {1, 1}}) == global);
    CHECK_THROWS_AS(vrm::mix_parameters(local, vec(layers_of({1, 1}), {1, 2}), {{1, 0}, {0, 1}}),
                    ContractError);
  }

  TEST_CASE("random instances obey the elementwise rules") {
    std::mt19937_64 rng(41);
    std::uniform_int_distribution<std::size_t> groups(2, 5), len(1, 12);
    std::uniform_real_distribution<double> unit(0.0, 1.0), wide(-5.0, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
      LayerMap l;
      const std::size_t ng = groups(rng);
      for (std::size_t g = 0; g < ng; ++g) l.append("g" + std::to_string(g), len(rng));
      std::vector<double> raw(l.total()), a(l.total()), b(l.total());
      for (auto& v : raw) v = unit(rng) * unit(rng) * 10.0;
      for (auto& v : a) v = wide(rng);
      for (auto& v : b) v = wide(rng);
      const auto hat = vrm::layerwise_normalize({raw, false}, l);
      CHECK(hat.values == test::normalize_oracle(raw, l));
      const double lambda = unit(rng);
      const auto masks = vrm::build_masks(hat, lambda);
      const auto mixed = vrm::mix_parameters(vec(l, a), vec(l, b), masks);
      const auto higher = vrm::build_masks(hat, lambda + 0.1);
      for (std::size_t m = 0; m < l.total(); ++m) {
        CHECK(masks.p1[m] + masks.p2[m] == 1);
        CHECK(masks.p1[m] == (hat.values[m] >= lambda ? 1 : 0));
        CHECK(mixed[m] == (hat.values[m] >= lambda ? a[m] : b[m]));
        CHECK(higher.p1[m] <= masks.p1[m]);
      }
    }
  }

  TEST_CASE("group retention") {
    const auto l = layers_of({2, 2});
    const auto r = vrm::group_retention({{1, 0, 1, 1}, {0, 1, 0, 0}}, l);
    CHECK(r == std::vector<double>{0.5, 1.0});
  }
}

TEST_SUITE("losses") {
  TEST_CASE("cross-entropy") {
    std::vector<double> s(500, 0.0);
    CHECK(losses::rec_loss(s, 17) == doctest::Approx(std::log(500.0)).epsilon(1e-12));
    CHECK(std::abs(losses::rec_loss(s, 17) - 6.2146) < 1e-4);
    s[4] = 1000.0;
    CHECK(losses::rec_loss(s, 5) < 1e-6);
    CHECK_THROWS_AS(losses::rec_loss(s, 0), ContractError);
    CHECK_THROWS_AS(losses::rec_loss(s, 501), ContractError);

    std::mt19937_64 rng(43);
    const auto t = test::random_tensor(rng, {10}, -3.0, 3.0);
    double z = 0.0;
    for (double v : t.values()) z += std::exp(v);
    CHECK(std::abs(losses::rec_loss(t.values(), 4) - -std::log(std::exp(t[3]) / z)) <= 1e-12);
  }

  TEST_CASE("dynamic magnitude loss values") {
    const auto l = layers_of({2});
    const losses::LossConfig cfg;
    CHECK(losses::dynamic_magnitude_loss(vec(l, {2, 2}), vec(l, {1, 1}), vec(l, {0, 0}),
                                         normalized({1, 0}), cfg) == doctest::Approx(0.45));
    CHECK(losses::dynamic_magnitude_loss(vec(l, {1, 1}), vec(l, {1, 1}), vec(l, {1, 1}),
                                         normalized({0.3, 0.9}), cfg) == 0.0);
    losses::LossConfig off;
    off.gamma1 = off.gamma2 = 0.0;
    CHECK(losses::dynamic_magnitude_loss(vec(l, {5, -5}), vec(l, {1, 1}), vec(l, {0, 0}),
                                         normalized({0.3, 0.9}), off) == 0.0);
    // All-ones Fisher leaves only the proximal term to the previous local values.
    CHECK(losses::dynamic_magnitude_loss(vec(l, {3, 0}), vec(l, {1, 1}), vec(l, {9, 9}),
                                         normalized({1, 1}), cfg) ==
          doctest::Approx(0.05 * (4 + 1)));
    CHECK_THROWS_AS(losses::dynamic_magnitude_loss(vec(l, {1, 1}), vec(l, {1, 1}),
                                                   vec(layers_of({1, 1}), {1, 1}),
                                                   normalized({0, 0}), cfg),
                    ContractError);
  }

  TEST_CASE("dynamic magnitude loss gradient") {
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> wide(-2.0, 2.0), unit(0.0, 1.0);
    const auto l = layers_of({4, 3});
    std::vector<double> t(7), a(7), b(7), f(7);
    for (std::size_t i = 0; i < 7; ++i) {
      t[i] = wide(rng);
      a[i] = wide(rng);
      b[i] = wide(rng);
      f[i] = unit(rng);
    }
    const losses::LossConfig cfg;
    auto theta = vec(l, t);
    std::vector<double> grad(7, 0.0);
    losses::add_dynamic_magnitude_gradient(theta, vec(l, a), vec(l, b), normalized(f), cfg, grad);
    double worst = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      const double saved = theta[i];
      theta[i] = saved + 1e-5;
      const double up = losses::dynamic_magnitude_loss(theta, vec(l, a), vec(l, b), normalized(f), cfg);
      theta[i] = saved - 1e-5;
      const double down =
          losses::dynamic_magnitude_loss(theta, vec(l, a), vec(l, b), normalized(f), cfg);
      theta[i] = saved;
      worst = std::max(worst, test::rel_error(grad[i], (up - down) / 2e-5));
      CHECK(losses::dynamic_magnitude_loss(theta, vec(l, a), vec(l, b), normalized(f), cfg) >= 0.0);
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("reduction names") {
    CHECK(losses::parse_reduction("sum") == losses::Reduction::kSum);
    CHECK(losses::to_string(losses::parse_reduction("mean")) == "mean");
    CHECK_THROWS_AS(losses::parse_reduction("max"), ConfigError);
  }
}
