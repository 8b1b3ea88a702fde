// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include <fmt/format.h>

#include "oracles.hpp"
#include "srdl/evaluation.hpp"
#include "srdl/training.hpp"

using namespace srdl;
using srdl::testing::brute_force_retrieval;
using srdl::testing::random_retrieval;

namespace {

RetrievalSet one_dim(std::vector<double> probe, std::vector<std::int64_t> probe_ids,
                     std::vector<double> gallery, std::vector<std::int64_t> gallery_ids) {
  RetrievalSet s;
  s.dim = 1;
  s.probe = std::move(probe);
  s.probe_ids = std::move(probe_ids);
  s.gallery = std::move(gallery);
  s.gallery_ids = std::move(gallery_ids);
  return s;
}

Dataset toy_mixture() {
  MixtureParams p;
  p.classes = 3;
  p.per_class = 60;
  p.dim = 4;
  p.spread = 0.5;
  p.seed = 31;
  return synth_gaussian_mixture(p).first;
}

const ModelSpec kToy{Arch::mlp, {16}, {4}, 3};

Checkpoint converged_toy(const Dataset& data) {
  OptimizerConfig cfg;
  cfg.batch_size = 30;
  return train_vanilla<double>(kToy, TrainData{&data, nullptr, {}}, 40, cfg, 1).checkpoint;
}

}  // namespace

TEST(Top1, HandCaseWithTie) {
  const auto z = Tensor<double>::matrix({{1, 1, 0}, {0, 2, 1}, {3, 0, 0}});
  const std::vector<int> labels{0, 1, 2};
  EXPECT_DOUBLE_EQ(top1_accuracy(z, std::span<const int>(labels)), 2.0 / 3.0);
}

TEST(Top1, AllRightAndAllWrong) {
  const auto z = Tensor<double>::matrix({{5, 0}, {0, 5}});
  const std::vector<int> right{0, 1}, wrong{1, 0};
  EXPECT_EQ(top1_accuracy(z, std::span<const int>(right)), 1.0);
  EXPECT_EQ(top1_accuracy(z, std::span<const int>(wrong)), 0.0);
  const std::vector<int> short_labels{0};
  EXPECT_THROW(top1_accuracy(z, std::span<const int>(short_labels)), DimensionError);
}

TEST(Evaluate, MatchesDirectComputation) {
  const auto data = toy_mixture();
  const auto params = init_params<double>(kToy, 3);
  const auto r = evaluate(kToy, params, data);
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Graph<double> g;
  const auto& z = g.value(forward(g, kToy, params, gather_features<double>(data, rows), false).logits);
  double ce = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double* row = z.data().data() + 3 * i;
    const double lse = std::log(std::exp(row[0]) + std::exp(row[1]) + std::exp(row[2]));
    ce += lse - row[data.labels[i]];
  }
  EXPECT_NEAR(r.mean_ce, ce / static_cast<double>(data.size()), 1e-12);
  EXPECT_EQ(r.top1, top1_accuracy(z, std::span<const int>(data.labels)));
}

TEST(Cmc, HandCaseFirstMatchesAtOneAndThree) {
  const auto s = one_dim({0, 10}, {1, 2}, {0, 10, 11, 12}, {1, 3, 3, 2});
  const std::vector<std::size_t> ks{1, 2, 3, 4};
  EXPECT_EQ(cmc(s, ks), (std::vector<double>{0.5, 0.5, 1.0, 1.0}));
}

TEST(Cmc, NearestNeighbourTruthGivesPerfectRankOne) {
  const auto s = one_dim({0, 5, 9}, {7, 8, 9}, {0.1, 5.1, 9.1, 3}, {7, 8, 9, 7});
  const std::vector<std::size_t> k1{1};
  EXPECT_EQ(cmc(s, k1)[0], 1.0);
}

TEST(Cmc, ProbeWithoutTruthMatchIsDataError) {
  const auto s = one_dim({0}, {4}, {1, 2}, {1, 2});
  const std::vector<std::size_t> k1{1};
  EXPECT_THROW(cmc(s, k1), DataError);
  EXPECT_THROW(mean_average_precision(s), DataError);
}

TEST(MeanAveragePrecision, HandCases) {
  EXPECT_EQ(mean_average_precision(one_dim({0}, {1}, {1}, {1})), 1.0);
  // truth at ranks 1 and 3: AP = (1/1 + 2/3) / 2
  const double ap = mean_average_precision(one_dim({0}, {1}, {1, 2, 3}, {1, 0, 1}));
  EXPECT_EQ(ap, (1.0 / 1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_NEAR(ap, 5.0 / 6.0, 1e-15);
}

TEST(Retrieval, TopRankedTruthGivesPerfectScores) {
  const auto s = one_dim({0, 100}, {1, 2}, {0.5, 1, 100.5, 50}, {1, 1, 2, 3});
  const std::vector<std::size_t> ks{1, 4};
  EXPECT_EQ(cmc(s, ks), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(mean_average_precision(s), 1.0);
}

TEST(Retrieval, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(2024);
  std::vector<std::size_t> ks(50);
  std::iota(ks.begin(), ks.end(), std::size_t{1});
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_retrieval(rng, 20, 50);
    const auto oracle = brute_force_retrieval(s);
    const auto rates = cmc(s, ks);
    for (std::size_t k = 0; k < ks.size(); ++k) ASSERT_NEAR(rates[k], oracle.rank_rates[k], 1e-9) << trial;
    ASSERT_NEAR(mean_average_precision(s), oracle.map, 1e-9) << trial;
  }
}

TEST(Retrieval, CmcIsMonotoneAndReachesOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_retrieval(rng, 10, 30, 4, 6);
    std::vector<std::size_t> ks(30);
    std::iota(ks.begin(), ks.end(), std::size_t{1});
    const auto rates = cmc(s, ks);
    for (std::size_t k = 1; k < rates.size(); ++k) ASSERT_GE(rates[k], rates[k - 1]);
    ASSERT_EQ(rates.back(), 1.0);
  }
}

TEST(Retrieval, SameCameraExclusion) {
  auto s = one_dim({0}, {1}, {0, 3}, {1, 1});
  s.probe_cams = {0};
  s.gallery_cams = {0, 1};
  const std::vector<std::size_t> k1{1};
  EXPECT_EQ(cmc(s, k1)[0], 1.0);
  s.exclude_same_camera = true;
  EXPECT_EQ(cmc(s, k1)[0], 1.0);  // the other-camera match is now first
  EXPECT_EQ(mean_average_precision(s), 1.0);
  s.gallery_cams = {0, 0};
  EXPECT_THROW(cmc(s, k1), DataError);
}

TEST(Retrieval, FromEmbeddingsPicksFirstOfEachClassAsProbe) {
  const auto emb = Tensor<double>::matrix({{0, 0}, {1, 1}, {0, 1}, {5, 5}, {2, 2}});
  const std::vector<int> labels{0, 1, 0, 2, 1};
  const auto s = retrieval_from_embeddings(emb, std::span<const int>(labels));
  EXPECT_EQ(s.probe_ids, (std::vector<std::int64_t>{0, 1}));  // class 2 has one sample
  EXPECT_EQ(s.gallery_ids, (std::vector<std::int64_t>{0, 1}));
  EXPECT_EQ(s.gallery, (std::vector<double>{0, 1, 2, 2}));
}

TEST(Trcost, TabulatedResNetEntry) {
  const Flops v = trcost(80000000, 200, 50000);
  EXPECT_EQ(v, Flops{800000000000000ULL});
  EXPECT_EQ(to_string(v), "800000000000000");
  EXPECT_EQ(fmt::format("{:.2f}", in_1e16(v)), "0.08");
}

TEST(Trcost, UnitEpochAndSampleGiveForwardFlops) { EXPECT_EQ(trcost(12345, 1, 1), Flops{12345}); }

TEST(Trcost, ExactlyMultiplicative) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint64_t> f(1, 1ULL << 40), e(1, 1000), n(1, 1ULL << 20);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = f(rng), b = e(rng), c = n(rng);
    const Flops v = trcost(a, b, c);
    ASSERT_EQ(trcost(a, 2 * b, c), 2 * v);
    ASSERT_EQ(v / c, Flops{a} * b);
    ASSERT_EQ(parse_flops(to_string(v)), v);
  }
}

TEST(Trcost, OverflowSafeBeyondTenToTheTwenty) {
  // 1e10 * 1e5 * 1e6 = 1e21 does not fit 64 bits
  const Flops v = trcost(10000000000ULL, 100000, 1000000);
  EXPECT_EQ(to_string(v), "1000000000000000000000");
  const std::uint64_t big = ~std::uint64_t{0};
  EXPECT_EQ(trcost(big, big, 1), Flops{big} * big);
  EXPECT_THROW(trcost(big, big, big), ContractError);
  EXPECT_THROW(trcost(0, 1, 1), ContractError);
  EXPECT_THROW(parse_flops("12a"), FormatError);
}

TEST(Directions, UnitLengthAndDeterministic) {
  const auto a = random_directions(20, 37, 4);
  for (const auto& v : a) {
    double n2 = 0;
    for (double x : v) n2 += x * x;
    ASSERT_NEAR(std::sqrt(n2), 1.0, 1e-12);
  }
  EXPECT_EQ(a, random_directions(20, 37, 4));
  EXPECT_NE(a, random_directions(20, 37, 5));
}

TEST(Directions, MagnitudeGrid) {
  EXPECT_EQ(magnitude_grid(5, 11), (std::vector<double>{0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5}));
  EXPECT_EQ(magnitude_grid(5, 1), (std::vector<double>{0}));
  EXPECT_THROW(magnitude_grid(5, 0), ContractError);
}

TEST(Landscape, ZeroMagnitudeIsBaseLossAndCheckpointUntouched) {
  const auto data = toy_mixture();
  const auto ckpt = converged_toy(data);
  const auto copy = ckpt;
  const PerturbationSpec spec{random_directions(20, ckpt.params.element_count(), 1), magnitude_grid(5, 11)};
  const auto r = landscape_sweep<double>(ckpt, data, spec);
  EXPECT_EQ(r.base_loss, evaluate(kToy, ckpt.params.cast<double>(), data).mean_ce);
  ASSERT_EQ(r.losses.size(), 20u);
  double at_max = 0;
  for (const auto& curve : r.losses) {
    ASSERT_EQ(curve.size(), 11u);
    EXPECT_EQ(curve[0], r.base_loss);
    at_max += curve.back() / 20.0;
  }
  EXPECT_GT(at_max, r.base_loss);
  EXPECT_EQ(ckpt, copy);
  EXPECT_EQ(landscape_sweep<double>(ckpt, data, spec).losses, r.losses);
}

TEST(Landscape, RejectsNonUnitDirections) {
  const auto data = toy_mixture();
  const Checkpoint ckpt{kToy, init_params<float>(kToy, 1), StageTag::vanilla_final, 1, ""};
  auto dirs = random_directions(1, ckpt.params.element_count(), 1);
  for (auto& x : dirs[0]) x *= 1.01;
  EXPECT_THROW(landscape_sweep<double>(ckpt, data, PerturbationSpec{dirs, {0, 1}}), ContractError);
  dirs[0].pop_back();
  EXPECT_THROW(landscape_sweep<double>(ckpt, data, PerturbationSpec{dirs, {0, 1}}), DimensionError);
  EXPECT_THROW(landscape_sweep<double>(ckpt, data, PerturbationSpec{{}, {1, 0}}), ContractError);
}
