// Copyright 2026 The safetune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "safetune/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace safetune {
namespace {

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::kIoError;
}

EmbeddingSet FromRows(std::initializer_list<std::vector<double>> rows) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()),
              static_cast<Eigen::Index>(rows.begin()->size()));
  std::vector<std::string> ids;
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      m(r, static_cast<Eigen::Index>(j)) = row[j];
    }
    ids.push_back("r" + std::to_string(r));
    ++r;
  }
  return EmbeddingSet(std::move(ids), std::move(m));
}

TEST(CosineSimTest, Examples) {
  EXPECT_EQ(CosineSim(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 0)), 1.0);
  EXPECT_EQ(CosineSim(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)), 0.0);
  EXPECT_EQ(CosineSim(Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0)), -1.0);
}

TEST(CosineSimTest, ErrorsAndRange) {
  EXPECT_EQ(CodeOf([] { CosineSim(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)); }),
            ErrorCode::kZeroVector);
  EXPECT_EQ(CodeOf([] { CosineSim(Eigen::Vector2d(1, 0), Eigen::Vector3d(1, 0, 0)); }),
            ErrorCode::kDimensionMismatch);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const RowMatrix m = testing::RandomRows(2, 5, rng);
    const double c = CosineSim(m.row(0).transpose(), m.row(1).transpose());
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    EXPECT_NEAR(CosineSim(m.row(0).transpose(), 3.7 * m.row(0).transpose()),
                1.0, 1e-15);
  }
}

TEST(ComputeRelevanceTest, IdenticalCandidateScoresOne) {
  const EmbeddingSet pool = FromRows({{1, 2, 3}, {0, 1, 0}});
  const EmbeddingSet ft = FromRows({{2, 4, 6}, {-1, 0, 0}});
  const RelevanceScores q = ComputeRelevance(pool, ft);
  EXPECT_EQ(q[0], 1.0);
}

TEST(ComputeRelevanceTest, OrthogonalCandidateClampsToZero) {
  const EmbeddingSet pool = FromRows({{0, 0, 1}, {0, 0, -1}});
  const EmbeddingSet ft = FromRows({{1, 0, 0}, {0, 1, 0}, {0, 0.5, 0.5}});
  const RelevanceScores q = ComputeRelevance(pool, ft);
  EXPECT_EQ(q[1], 0.0);  // max cosine is 0, everything else negative
  const EmbeddingSet ortho = FromRows({{0, 0, 1}});
  const EmbeddingSet ft2 = FromRows({{1, 0, 0}, {0, 1, 0}});
  EXPECT_EQ(ComputeRelevance(ortho, ft2)[0], 0.0);
}

TEST(ComputeRelevanceTest, MatchesPairwiseMaxOracle) {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const EmbeddingSet pool = testing::RandomEmbeddings(6, 5, rng, "p");
    const EmbeddingSet ft = testing::RandomEmbeddings(4, 5, rng, "f");
    const RelevanceScores q = ComputeRelevance(pool, ft);
    for (std::size_t i = 0; i < 6; ++i) {
      double best = -2.0;
      for (std::size_t z = 0; z < 4; ++z) {
        best = std::max(best, testing::LoopCosine(pool.row(i).transpose(),
                                                  ft.row(z).transpose()));
      }
      EXPECT_NEAR(q[i], std::clamp(best, 0.0, 1.0), 1e-12);
    }
  }
}

TEST(ComputeRelevanceTest, InvariantToReferenceOrderAndThreads) {
  std::mt19937_64 rng(21);
  const EmbeddingSet pool = testing::RandomEmbeddings(40, 6, rng, "p");
  const EmbeddingSet ft = testing::RandomEmbeddings(15, 6, rng, "f");
  const RelevanceScores base = ComputeRelevance(pool, ft);
  std::vector<std::size_t> perm(ft.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const RelevanceScores shuffled = ComputeRelevance(pool, ft.Subset(perm));
    EXPECT_EQ(shuffled.values(), base.values());
  }
  for (unsigned threads : {2u, 3u, 8u}) {
    RelevanceOptions o;
    o.threads = threads;
    EXPECT_EQ(ComputeRelevance(pool, ft, o).values(), base.values());
  }
}

TEST(ComputeRelevanceTest, Errors) {
  const EmbeddingSet pool = FromRows({{1, 0}});
  EXPECT_EQ(CodeOf([&] { ComputeRelevance(pool, FromRows({{1, 0, 0}})); }),
            ErrorCode::kDimensionMismatch);
  const EmbeddingSet empty({}, RowMatrix(0, 2));
  EXPECT_EQ(CodeOf([&] { ComputeRelevance(pool, empty); }),
            ErrorCode::kEmptyReferenceSet);
}

TEST(ComputeRelevanceTest, ReferenceCapSubsamples) {
  std::mt19937_64 rng(22);
  const EmbeddingSet pool = testing::RandomEmbeddings(10, 4, rng, "p");
  const EmbeddingSet ft = testing::RandomEmbeddings(30, 4, rng, "f");
  const EmbeddingSet capped = SubsampleRows(ft, 7, 99);
  EXPECT_EQ(capped.size(), 7u);
  EXPECT_EQ(SubsampleRows(ft, 7, 99).ids(), capped.ids());
  EXPECT_EQ(SubsampleRows(ft, 0, 99).size(), 30u);
  EXPECT_EQ(SubsampleRows(ft, 30, 99).size(), 30u);
  RelevanceOptions o;
  o.ft_cap = 7;
  o.ft_cap_seed = 99;
  EXPECT_EQ(ComputeRelevance(pool, ft, o).values(),
            ComputeRelevance(pool, capped).values());
  // A subsample can only lower the max.
  const RelevanceScores full = ComputeRelevance(pool, ft);
  const RelevanceScores sub = ComputeRelevance(pool, ft, o);
  for (std::size_t i = 0; i < pool.size(); ++i) EXPECT_LE(sub[i], full[i]);
}

TEST(RelevanceScoresTest, RejectsOutOfRange) {
  EXPECT_THROW(RelevanceScores({0.5, 1.5}), Error);
  EXPECT_THROW(RelevanceScores({-0.1}), Error);
  EXPECT_THROW(RelevanceScores({std::nan("")}), Error);
}

TEST(KernelEntryTest, BetaZeroIsBaseKernel) {
  std::mt19937_64 rng(30);
  const EmbeddingSet pool = testing::RandomEmbeddings(8, 4, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> q(8);
  for (auto& v : q) v = u(rng);
  q[3] = 0.0;
  const WeightedKernelView view(pool, RelevanceScores(q), 0.0);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(view.entry(i, j), view.base_entry(i, j));
    }
  }
}

TEST(KernelEntryTest, UnitDiagonalAndHandValue) {
  const EmbeddingSet pool = FromRows({{1, 0}, {1, 0}, {0.3, 0.7}});
  const WeightedKernelView ones(pool, RelevanceScores::Uniform(3), 4.0);
  EXPECT_EQ(ones.entry(2, 2), 1.0);
  const WeightedKernelView halves(pool, RelevanceScores({0.5, 0.5, 1.0}), 4.0);
  // (q_i q_j)^beta * K with K = 1 for the identical rows 0 and 1.
  const double oracle = std::pow(0.5 * 0.5, 4.0) * Eigen::Vector2d(1, 0).dot(Eigen::Vector2d(1, 0));
  EXPECT_EQ(halves.entry(0, 1), 0.00390625);
  EXPECT_EQ(halves.entry(0, 1), oracle);
  EXPECT_EQ(halves.diag(0), std::pow(0.5, 8.0));
}

TEST(KernelEntryTest, IndexOutOfRange) {
  const EmbeddingSet pool = FromRows({{1, 0}, {0, 1}});
  const WeightedKernelView view(pool, RelevanceScores::Uniform(2), 1.0);
  EXPECT_EQ(CodeOf([&] { view.entry(0, 2); }), ErrorCode::kIndexOutOfRange);
  EXPECT_EQ(CodeOf([&] { view.entry(5, 0); }), ErrorCode::kIndexOutOfRange);
  EXPECT_EQ(CodeOf([&] { WeightedKernelView(pool, RelevanceScores::Uniform(3), 1.0); }),
            ErrorCode::kDimensionMismatch);
  EXPECT_THROW(WeightedKernelView(pool, RelevanceScores::Uniform(2), -1.0), Error);
}

TEST(KernelPropertyTest, SymmetricBitExact) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double beta : {0.0, 0.5, 1.0, 4.0, 10.0}) {
    const EmbeddingSet pool = testing::RandomEmbeddings(15, 7, rng);
    std::vector<double> q(15);
    for (auto& v : q) v = u(rng);
    const WeightedKernelView view(pool, RelevanceScores(q), beta);
    for (std::size_t i = 0; i < 15; ++i) {
      for (std::size_t j = 0; j < 15; ++j) {
        EXPECT_EQ(view.entry(i, j), view.entry(j, i));
      }
    }
  }
}

TEST(KernelPropertyTest, DampingMonotoneInBeta) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.0, 0.999);
  const EmbeddingSet pool = testing::RandomEmbeddings(12, 5, rng);
  std::vector<double> q(12);
  for (auto& v : q) v = u(rng);
  const std::vector<double> betas{0.0, 0.25, 1.0, 2.0, 4.0, 7.5, 10.0, 30.0};
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < 12; ++j) {
      if (i == j) continue;
      double prev = std::numeric_limits<double>::infinity();
      for (double beta : betas) {
        const WeightedKernelView view(pool, RelevanceScores(q), beta);
        const double now = std::abs(view.entry(i, j));
        EXPECT_LE(now, prev);
        prev = now;
      }
    }
  }
}

TEST(KernelPropertyTest, DeterminantFactorsIntoRelevanceAndDiversity) {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 4 + static_cast<std::size_t>(trial) % 29;
    const EmbeddingSet pool = testing::RandomEmbeddings(n, n + 3, rng);
    std::vector<double> q(n);
    for (auto& v : q) v = u(rng);
    for (double beta : {0.0, 1.0, 4.0, 10.0}) {
      const WeightedKernelView weighted(pool, RelevanceScores(q), beta);
      const WeightedKernelView base(pool, RelevanceScores::Uniform(n), 0.0);
      const Eigen::MatrixXd lhat = DenseKernel(weighted);
      const Eigen::MatrixXd l = DenseKernel(base);
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(1 + static_cast<std::size_t>(trial) % std::min<std::size_t>(n, 8));
      double weight = 1.0;
      for (std::size_t i : idx) weight *= std::pow(q[i], 2.0 * beta);
      const double lhs = testing::LuDet(lhat, idx);
      const double rhs = weight * testing::LuDet(l, idx);
      EXPECT_TRUE(testing::RelClose(lhs, rhs, 1e-8))
          << "beta " << beta << ": " << lhs << " vs " << rhs;
    }
  }
}

TEST(DenseKernelTest, MatchesEntriesAndIsPsd) {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const EmbeddingSet pool = testing::RandomEmbeddings(50, 6, rng);
  std::vector<double> q(50);
  for (auto& v : q) v = u(rng);
  const WeightedKernelView view(pool, RelevanceScores(q), 4.0);
  const Eigen::MatrixXd m = DenseKernel(view);
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 50; ++j) {
      EXPECT_EQ(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                view.entry(i, j));
    }
  }
  EXPECT_EQ(m, m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8);
  EXPECT_EQ(DenseKernel(view, kDefaultDenseCap, 4), m);
}

TEST(DenseKernelTest, PoolTooLarge) {
  std::mt19937_64 rng(35);
  const EmbeddingSet pool = testing::RandomEmbeddings(10, 3, rng);
  const WeightedKernelView view(pool, RelevanceScores::Uniform(10), 4.0);
  EXPECT_EQ(CodeOf([&] { DenseKernel(view, 9); }), ErrorCode::kPoolTooLarge);
  EXPECT_NO_THROW(DenseKernel(view, 10));
}

TEST(RelevanceIoTest, WritesPoolOrderAndReadsBack) {
  const std::vector<std::string> ids{"a", "b", "c"};
  const RelevanceScores q({0.25, 1.0, 0.1});
  std::stringstream buf;
  WriteRelevanceJsonl(buf, ids, q);
  EXPECT_EQ(buf.str(),
            "{\"id\":\"a\",\"q\":0.25}\n{\"id\":\"b\",\"q\":1.0}\n"
            "{\"id\":\"c\",\"q\":0.1}\n");
  const RelevanceScores back = ParseRelevanceJsonl(buf, {"c", "a", "b"});
  EXPECT_EQ(back.values(), (std::vector<double>{0.1, 0.25, 1.0}));
  std::stringstream missing("{\"id\":\"a\",\"q\":0.5}\n");
  EXPECT_EQ(CodeOf([&] { ParseRelevanceJsonl(missing, {"a", "z"}); }),
            ErrorCode::kMalformedRecord);
}

}  // namespace
}  // namespace safetune
