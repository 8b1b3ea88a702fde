// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "srdl/grad_check.hpp"
#include "srdl/losses.hpp"
#include "srdl/model.hpp"

using namespace srdl;
using srdl::testing::random_tensor;

namespace {

std::vector<double> random_logits(std::mt19937_64& rng, std::size_t c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> z(c);
  for (auto& v : z) v = u(rng);
  return z;
}

ProbabilityVector random_distribution(std::mt19937_64& rng, std::size_t c, double t) {
  return softened_softmax(random_logits(rng, c, -5, 5), t);
}

}  // namespace

TEST(SoftenedSoftmax, ZeroLogitsAreUniform) {
  for (double t : {0.5, 1.0, 3.0, 100.0}) {
    const auto p = softened_softmax(std::vector<double>(4, 0.0), t);
    for (double v : p.values) EXPECT_DOUBLE_EQ(v, 0.25);
    EXPECT_EQ(p.temperature, t);
  }
}

TEST(SoftenedSoftmax, TwoLogitClosedForm) {
  const auto p = softened_softmax(std::vector<double>{1, 0}, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p.values[0], e / (e + 1), 1e-15);
  EXPECT_NEAR(p.values[1], 1 / (e + 1), 1e-15);
  EXPECT_NEAR(p.values[0], 0.7311, 1e-4);
  EXPECT_NEAR(p.values[1], 0.2689, 1e-4);
}

TEST(SoftenedSoftmax, HighTemperatureApproachesUniform) {
  const auto p = softened_softmax(std::vector<double>{1, 0}, 1000.0);
  EXPECT_NEAR(p.values[0], 0.5, 1e-3);
  EXPECT_NEAR(p.values[1], 0.5, 1e-3);
}

TEST(SoftenedSoftmax, RejectsBadTemperatureAndLogits) {
  EXPECT_THROW(softened_softmax(std::vector<double>{1, 0}, 0.0), ContractError);
  EXPECT_THROW(softened_softmax(std::vector<double>{1, 0}, -1.0), ContractError);
  EXPECT_THROW(softened_softmax(std::vector<double>{1, NAN}, 1.0), ContractError);
}

TEST(SoftenedSoftmax, RowsSumToOneOnWideLogits) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> classes(2, 20);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto p = softened_softmax(random_logits(rng, classes(rng), -50, 50), 1.0);
    const double sum = std::accumulate(p.values.begin(), p.values.end(), 0.0);
    ASSERT_NEAR(sum, 1.0, 1e-9);
    for (double v : p.values) ASSERT_GE(v, 0.0);
  }
}

TEST(SoftenedSoftmax, HigherTemperatureFlattens) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto z = random_logits(rng, 6, -5, 5);
    double prev_spread = 2;
    for (double t : {0.5, 1.0, 2.0, 3.0, 8.0}) {
      const auto p = softened_softmax(z, t);
      const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
      const double spread = *hi - *lo;
      ASSERT_LT(spread, prev_spread);
      prev_spread = spread;
    }
  }
}

TEST(CrossEntropy, CertainLabelIsZero) {
  EXPECT_EQ(cross_entropy(ProbabilityVector{{0, 1, 0}, 1}, 1), 0.0);
}

TEST(CrossEntropy, UniformTenClassesIsLnTen) {
  const ProbabilityVector p{std::vector<double>(10, 0.1), 1};
  EXPECT_NEAR(cross_entropy(p, 3), 2.302585, 1e-6);
  EXPECT_NEAR(cross_entropy(p, 3), std::log(10.0), 1e-15);
}

TEST(CrossEntropy, ClampsZeroProbability) {
  EXPECT_NEAR(cross_entropy(ProbabilityVector{{1, 0}, 1}, 1), -std::log(kLogFloor), 1e-12);
  EXPECT_THROW(cross_entropy(ProbabilityVector{{0.5, 0.5}, 1}, 2), ContractError);
}

TEST(CrossEntropy, FusedGradientIsProbMinusOneHot) {
  std::mt19937_64 rng(3);
  const auto z = random_tensor({4, 5}, rng, -3, 3);
  const std::vector<int> labels{0, 4, 2, 2};
  Graph<double> g;
  auto vz = g.leaf(z);
  auto loss = softmax_cross_entropy(g, vz, std::span<const int>(labels));
  g.backward(loss);
  const auto grad = g.grad(vz);
  double mean_ce = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = softened_softmax(std::span<const double>(z.data().data() + i * 5, 5), 1.0);
    mean_ce += cross_entropy(p, static_cast<std::size_t>(labels[i])) / 4;
    for (std::size_t j = 0; j < 5; ++j) {
      const double expected = (p.values[j] - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0)) / 4;
      EXPECT_NEAR(grad[i * 5 + j], expected, 1e-15);
    }
  }
  EXPECT_NEAR(g.value(loss)[0], mean_ce, 1e-14);

  auto f = [&](Graph<double>& gr, std::span<const Var> v) {
    return softmax_cross_entropy(gr, v[0], std::span<const int>(labels));
  };
  EXPECT_LT(grad_check(f, {z}, 1e-5), 1e-6);
}

TEST(CrossEntropy, GradientProperty) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = dim(rng), c = dim(rng) + 1;
    std::uniform_int_distribution<int> label(0, static_cast<int>(c) - 1);
    std::vector<int> labels(b);
    for (auto& y : labels) y = label(rng);
    auto f = [&](Graph<double>& g, std::span<const Var> v) {
      return softmax_cross_entropy(g, v[0], std::span<const int>(labels));
    };
    ASSERT_LT(grad_check(f, {random_tensor({b, c}, rng, -4, 4)}, 1e-5), 1e-4) << "trial " << trial;
  }
}

TEST(KlImitation, SelfDivergenceIsZero) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto p = random_distribution(rng, 7, 3.0);
    ASSERT_NEAR(kl_imitation(p, p), 0.0, 1e-10);
  }
}

TEST(KlImitation, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto p = random_distribution(rng, 5, 2.0);
    const auto q = random_distribution(rng, 5, 2.0);
    ASSERT_GE(kl_imitation(p, q), 0.0);
  }
}

TEST(KlImitation, NearOneHotAgainstUniformIsLnTwo) {
  const double eps = 1e-12;
  const ProbabilityVector ref{{1 - eps, eps}, 1};
  const ProbabilityVector cur{{0.5, 0.5}, 1};
  // closed form: (1-eps) log((1-eps)/0.5) + eps log(eps/0.5)
  const double expected = (1 - eps) * std::log((1 - eps) / 0.5) + eps * std::log(eps / 0.5);
  EXPECT_NEAR(kl_imitation(ref, cur), expected, 1e-12);
  EXPECT_NEAR(kl_imitation(ref, cur), 0.6931, 1e-4);
}

TEST(KlImitation, RejectsMismatchedClassesOrTemperature) {
  EXPECT_THROW(kl_imitation(ProbabilityVector{{0.5, 0.5}, 1}, ProbabilityVector{{0.2, 0.3, 0.5}, 1}),
               ContractError);
  EXPECT_THROW(kl_imitation(ProbabilityVector{{0.5, 0.5}, 1}, ProbabilityVector{{0.5, 0.5}, 3}), ContractError);
}

TEST(KlImitation, GraphOpMatchesScalarAndGradient) {
  std::mt19937_64 rng(7);
  const double t = 3.0;
  const auto z = random_tensor({3, 4}, rng, -3, 3);
  Tensor<double> ref({3, 4});
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto r = random_distribution(rng, 4, t);
    std::copy(r.values.begin(), r.values.end(), ref.data().begin() + static_cast<std::ptrdiff_t>(i * 4));
    const auto q = softened_softmax(std::span<const double>(z.data().data() + i * 4, 4), t);
    expected += kl_imitation(r, q) / 3;
  }
  Graph<double> g;
  auto vz = g.leaf(z);
  auto kl = softened_kl(g, vz, ref, t);
  EXPECT_NEAR(g.value(kl)[0], expected, 1e-14);

  auto f = [&](Graph<double>& gr, std::span<const Var> v) { return softened_kl(gr, v[0], ref, t); };
  EXPECT_LT(grad_check(f, {z}, 1e-5), 1e-6);
}

TEST(KlImitation, GradientPropertyAcrossTemperatures) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  std::uniform_real_distribution<double> temp(0.5, 6.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = dim(rng), c = dim(rng) + 1;
    const double t = temp(rng);
    Tensor<double> ref({b, c});
    for (std::size_t i = 0; i < b; ++i) {
      const auto r = random_distribution(rng, c, t);
      std::copy(r.values.begin(), r.values.end(), ref.data().begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    auto f = [&](Graph<double>& g, std::span<const Var> v) { return softened_kl(g, v[0], ref, t); };
    ASSERT_LT(grad_check(f, {random_tensor({b, c}, rng, -4, 4)}, 1e-5), 1e-4) << "trial " << trial;
  }
}

TEST(SrdlTotal, WeightsKlByTemperatureSquared) {
  const auto r = srdl_total(1.0, 0.1, 3.0);
  EXPECT_NEAR(r.total, 1.9, 1e-12);
  EXPECT_EQ(r.ce, 1.0);
  EXPECT_EQ(r.kl, 0.1);
  EXPECT_EQ(r.temperature, 3.0);
  EXPECT_EQ(srdl_total(0.7, 0.0, 3.0).total, 0.7);
  EXPECT_EQ(srdl_total(0.5, 0.5, 1.0).total, 1.0);
  EXPECT_THROW(srdl_total(1.0, 0.1, 0.0), ContractError);
}

TEST(SrdlTotal, IdentityHoldsOnRandomInputs) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 5), temp(0.5, 6);
  for (int trial = 0; trial < 10000; ++trial) {
    const double ce = u(rng), kl = u(rng), t = temp(rng);
    const auto r = srdl_total(ce, kl, t);
    ASSERT_NEAR(r.total, r.ce + t * t * r.kl, 1e-9);
  }
}

TEST(SrdlTotal, KlWeightKeepsGradientShareTemperatureInvariant) {
  // For large T the soft-target gradient scales like 1/T^2; the T^2 weight
  // keeps its share of the total gradient roughly constant.
  std::mt19937_64 rng(10);
  const auto z = random_tensor({1, 5}, rng, -1, 1);
  const auto teacher = random_tensor({1, 5}, rng, -1, 1);
  auto kl_grad_norm = [&](double t) {
    Tensor<double> ref({1, 5});
    detail::softened_softmax_row(teacher.data().data(), 5, t, ref.data().data());
    Graph<double> g;
    auto vz = g.leaf(z);
    auto total = mul_const(g, softened_kl(g, vz, ref, t), Tensor<double>({1}, {t * t}));
    g.backward(total);
    double n = 0;
    const auto grad = g.grad(vz);
    for (double v : grad.data()) n += v * v;
    return std::sqrt(n);
  };
  const double a = kl_grad_norm(50.0), b = kl_grad_norm(100.0);
  EXPECT_NEAR(a / b, 1.0, 0.05) << a << " " << b;
}

TEST(SrdlObjective, FullStageTwoGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const ModelSpec spec{Arch::mlp, {6, 5}, {4}, 3};
  const double t = 3.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor<double>> params;
    for (const auto& e : init_params<double>(spec, static_cast<std::uint64_t>(trial)).entries) {
      params.push_back(e.value.rank() == 1 ? random_tensor(e.value.shape(), rng, -0.2, 0.2) : e.value);
    }
    const auto x = random_tensor({5, 4}, rng, -2, 2);
    std::uniform_int_distribution<int> label(0, 2);
    std::vector<int> labels(5);
    for (auto& y : labels) y = label(rng);
    Tensor<double> ref({5, 3});
    for (std::size_t i = 0; i < 5; ++i) {
      const auto r = random_distribution(rng, 3, t);
      std::copy(r.values.begin(), r.values.end(), ref.data().begin() + static_cast<std::ptrdiff_t>(i * 3));
    }
    auto f = [&](Graph<double>& g, std::span<const Var> v) {
      Var h = g.constant(x);
      for (std::size_t l = 0; l < 3; ++l) {
        h = add_bias(g, matmul(g, h, v[2 * l]), v[2 * l + 1]);
        if (l < 2) h = relu(g, h);
      }
      auto ce = softmax_cross_entropy(g, h, std::span<const int>(labels));
      auto kl = softened_kl(g, h, ref, t);
      return weighted_sum(g, ce, kl, t * t);
    };
    ASSERT_LT(grad_check(f, params, 1e-5), 1e-4) << "trial " << trial;
  }
}
