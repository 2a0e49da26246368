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

// Picks a small safety subset from a synthetic candidate pool, then trains a
// toy quadratic with the safety projection.
//
//   select_demo [seed]

#include <cstdint>
#include <iostream>
#include <random>
#include <string>

#include "safetune/bench/quadratic.hpp"
#include "safetune/dpp.hpp"
#include "safetune/relevance.hpp"
#include "safetune/spag.hpp"

namespace {

// n points scattered around `clusters` random directions.
safetune::EmbeddingSet Clustered(std::size_t n, std::size_t dim,
                                 std::size_t clusters, const std::string& prefix,
                                 std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  safetune::RowMatrix centers(static_cast<Eigen::Index>(clusters),
                              static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < centers.rows(); ++i) {
    for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(i, j) = normal(rng);
  }
  safetune::RowMatrix rows(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i % clusters);
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      rows(static_cast<Eigen::Index>(i), j) = centers(c, j) + 0.3 * normal(rng);
    }
    ids.push_back(prefix + std::to_string(i));
  }
  return safetune::EmbeddingSet(std::move(ids), std::move(rows));
}

}  // namespace

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 7;
  std::mt19937_64 rng(seed);

  const safetune::EmbeddingSet pool = Clustered(400, 32, 12, "safe-", rng);
  const safetune::EmbeddingSet ft = Clustered(300, 32, 4, "ft-", rng);

  const safetune::RelevanceScores q = safetune::ComputeRelevance(pool, ft);
  const safetune::WeightedKernelView kernel(pool, q, /*beta=*/4.0);
  const safetune::SelectionResult sel = safetune::GreedySelect(kernel, 10);

  std::cout << "selected " << sel.selected.size() << " of " << pool.size() << ":\n";
  for (std::size_t t = 0; t < sel.selected.size(); ++t) {
    const std::size_t i = sel.selected[t];
    std::cout << "  " << pool.ids()[i] << "  q=" << q[i] << "  gain=" << sel.gains[t]
              << '\n';
  }
  std::cout << "log det = " << sel.log_det << "\n\n";

  const auto inst = safetune::bench::MakeQuadratic(4, seed);
  safetune::SpagConfig config;
  config.eta_ft = 1e-2;
  config.tau = inst.problem.tau;
  config.max_steps = 3000;
  const safetune::TrainReport report = safetune::SpagTrain(
      safetune::bench::QuadraticOracle(inst.problem.utility),
      safetune::bench::QuadraticOracle(inst.problem.safety), config,
      Eigen::VectorXd::Zero(4));
  std::cout << "quadratic: tau = " << config.tau
            << ", final safety = " << report.final_safety_loss
            << ", final utility = " << report.final_utility_loss
            << " (constrained optimum " << inst.solution.constrained_utility << ")\n";
  return 0;
}
