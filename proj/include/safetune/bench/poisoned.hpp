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

// Poisoned fine-tuning scenario on 2-d logistic regression.
//
// The reference behaviour labels a point 1 iff x0 > 0. The fine-tuning set
// is a clean two-blob task that follows that rule plus a poison cluster
// whose labels are flipped. A pool of candidate safety points, spread over
// many clusters and labelled by the rule, supplies the safety subset; one
// cluster sits next to the poison. Held-out probes from the poison region,
// labelled by the rule, measure how much of the poisoned behaviour the
// trained model picked up.

#ifndef SAFETUNE_BENCH_POISONED_HPP_
#define SAFETUNE_BENCH_POISONED_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "safetune/dpp.hpp"
#include "safetune/embedding.hpp"
#include "safetune/error.hpp"
#include "safetune/relevance.hpp"
#include "safetune/spag.hpp"

namespace safetune::bench {

struct LabeledPoints {
  Eigen::MatrixXd x;  // n x 2
  Eigen::VectorXd y;  // labels in {0, 1}

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};

// Mean logistic loss of a linear classifier [w0, w1, bias] over a dataset.
// A batch seed draws `batch_size` rows with replacement; the full-batch
// seed averages over every row.
class LogisticOracle {
 public:
  LogisticOracle(LabeledPoints data, std::size_t batch_size)
      : data_(std::move(data)), batch_size_(batch_size) {
    if (data_.size() == 0) {
      throw Error(ErrorCode::kEmptyReferenceSet, "logistic oracle needs data");
    }
    if (batch_size_ < 1) {
      throw Error(ErrorCode::kInvalidConfig, "batch size must be >= 1");
    }
  }

  std::size_t dim() const { return 3; }

  double loss(const ParamVector& theta, BatchSeed seed) const {
    double total = 0.0;
    const auto rows = Batch(seed);
    for (std::size_t r : rows) total += PointLoss(theta, r);
    return total / static_cast<double>(rows.size());
  }

  ParamVector grad(const ParamVector& theta, BatchSeed seed) const {
    ParamVector g = ParamVector::Zero(3);
    const auto rows = Batch(seed);
    for (std::size_t r : rows) {
      const auto i = static_cast<Eigen::Index>(r);
      const double p = Sigmoid(Margin(theta, r));
      const double residual = p - data_.y(i);
      g(0) += residual * data_.x(i, 0);
      g(1) += residual * data_.x(i, 1);
      g(2) += residual;
    }
    return g / static_cast<double>(rows.size());
  }

  const LabeledPoints& data() const { return data_; }

 private:
  static double Sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                    : std::exp(z) / (1.0 + std::exp(z));
  }
  // log(1 + exp(z)) without overflow.
  static double Softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  }

  double Margin(const ParamVector& theta, std::size_t r) const {
    const auto i = static_cast<Eigen::Index>(r);
    return theta(0) * data_.x(i, 0) + theta(1) * data_.x(i, 1) + theta(2);
  }

  double PointLoss(const ParamVector& theta, std::size_t r) const {
    const double z = Margin(theta, r);
    return data_.y(static_cast<Eigen::Index>(r)) > 0.5 ? Softplus(-z)
                                                       : Softplus(z);
  }

  std::vector<std::size_t> Batch(BatchSeed seed) const {
    std::vector<std::size_t> rows;
    if (seed.is_full()) {
      rows.resize(data_.size());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      return rows;
    }
    std::mt19937_64 rng(seed.value);
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    rows.resize(batch_size_);
    for (auto& r : rows) r = pick(rng);
    return rows;
  }

  LabeledPoints data_;
  std::size_t batch_size_;
};

struct PoisonedConfig {
  std::size_t clean_points = 600;
  double poison_fraction = 0.10;
  std::size_t pool_clusters = 25;
  std::size_t points_per_cluster = 20;
  std::size_t probe_points = 200;
  std::size_t utility_batch = 32;
  std::size_t safety_batch = 1;
  std::size_t embedding_dim = 64;
};

struct PoisonedDataset {
  LabeledPoints clean;
  LabeledPoints poison;
  LabeledPoints safe_pool;
  LabeledPoints probes;
  double poison_fraction = 0.0;
  // Clean followed by poison.
  LabeledPoints fine_tune;
  // Aligned starting point and the safety threshold measured on it.
  ParamVector theta0;
  double tau = 0.0;
  std::size_t embedding_dim = 64;
  std::uint64_t lift_seed = 0;
};

namespace internal {

inline void AppendPoints(LabeledPoints& to, const LabeledPoints& from) {
  const Eigen::Index old = to.x.rows();
  to.x.conservativeResize(old + from.x.rows(), 2);
  to.y.conservativeResize(old + from.y.size());
  to.x.bottomRows(from.x.rows()) = from.x;
  to.y.tail(from.y.size()) = from.y;
}

inline LabeledPoints Blob(std::size_t n, double cx, double cy, double sd,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  LabeledPoints p;
  p.x.resize(static_cast<Eigen::Index>(n), 2);
  p.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.x.rows(); ++i) {
    p.x(i, 0) = cx + normal(rng);
    p.x(i, 1) = cy + normal(rng);
    p.y(i) = p.x(i, 0) > 0.0 ? 1.0 : 0.0;
  }
  return p;
}

// Random Fourier features: for unit-bandwidth Gaussian frequencies,
// <phi(a), phi(b)> approximates exp(-|a - b|^2 / 2), so cosine similarity
// between embeddings tracks spatial proximity. The lift depends only on
// `lift_seed`, so pool and reference share one feature map.
inline EmbeddingSet Embed(const LabeledPoints& p, const std::string& prefix,
                          std::size_t dim, std::uint64_t lift_seed) {
  std::mt19937_64 rng(lift_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * 3.141592653589793);
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd freq(d, 2);
  Eigen::VectorXd shift(d);
  for (Eigen::Index r = 0; r < d; ++r) {
    freq(r, 0) = normal(rng);
    freq(r, 1) = normal(rng);
    shift(r) = phase(rng);
  }
  RowMatrix m(p.x.rows(), d);
  std::vector<std::string> ids;
  ids.reserve(p.size());
  for (Eigen::Index i = 0; i < p.x.rows(); ++i) {
    const Eigen::Vector2d x = p.x.row(i).transpose();
    for (Eigen::Index r = 0; r < d; ++r) {
      m(i, r) = std::cos(freq.row(r).dot(x) + shift(r));
    }
    m.row(i).normalize();
    ids.push_back(prefix + std::to_string(i));
  }
  return EmbeddingSet(std::move(ids), std::move(m));
}

}  // namespace internal

inline constexpr double kPoisonCenterX = 1.5;
inline constexpr double kPoisonCenterY = 2.5;

inline PoisonedDataset MakePoisonedDataset(std::uint64_t seed,
                                           const PoisonedConfig& config = {}) {
  if (!(config.poison_fraction >= 0.0 && config.poison_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "poison fraction must be in [0, 1)");
  }
  std::mt19937_64 rng(seed);
  PoisonedDataset d;
  d.poison_fraction = config.poison_fraction;
  d.embedding_dim = config.embedding_dim;
  d.lift_seed = seed ^ 0x9e3779b97f4a7c15ULL;

  const std::size_t half = config.clean_points / 2;
  d.clean = internal::Blob(half, 2.0, 0.0, 0.7, rng);
  internal::AppendPoints(
      d.clean, internal::Blob(config.clean_points - half, -2.0, 0.0, 0.7, rng));

  const auto n_poison = static_cast<std::size_t>(
      std::llround(config.poison_fraction * static_cast<double>(config.clean_points)));
  d.poison = internal::Blob(n_poison, kPoisonCenterX, kPoisonCenterY, 0.4, rng);
  d.poison.y.setZero();  // flipped: the rule says 1 here

  // Candidate pool: one cluster beside the poison, the rest scattered over an
  // annulus around the origin.
  std::uniform_real_distribution<double> angle(0.0, 2.0 * 3.141592653589793);
  std::uniform_real_distribution<double> radius(1.5, 6.0);
  d.safe_pool.x.resize(0, 2);
  for (std::size_t c = 0; c < config.pool_clusters; ++c) {
    double cx = kPoisonCenterX + 0.3;
    double cy = kPoisonCenterY + 0.3;
    if (c > 0) {
      const double a = angle(rng);
      const double r = radius(rng);
      cx = r * std::cos(a);
      cy = r * std::sin(a);
    }
    internal::AppendPoints(
        d.safe_pool, internal::Blob(config.points_per_cluster, cx, cy, 0.3, rng));
  }

  d.probes = internal::Blob(config.probe_points, kPoisonCenterX,
                            kPoisonCenterY, 0.4, rng);

  d.fine_tune = d.clean;
  internal::AppendPoints(d.fine_tune, d.poison);

  // Aligned start: full-batch gradient descent on clean data plus the pool.
  LabeledPoints aligned = d.clean;
  internal::AppendPoints(aligned, d.safe_pool);
  const LogisticOracle pretrain(aligned, 1);
  d.theta0 = ParamVector::Zero(3);
  for (int it = 0; it < 300; ++it) {
    d.theta0 -= 0.5 * pretrain.grad(d.theta0, BatchSeed::Full());
  }
  d.tau = LogisticOracle(d.safe_pool, 1).loss(d.theta0, BatchSeed::Full());
  return d;
}

inline EmbeddingSet PoolEmbeddings(const PoisonedDataset& d) {
  return internal::Embed(d.safe_pool, "safe-", d.embedding_dim, d.lift_seed);
}

inline EmbeddingSet FineTuneEmbeddings(const PoisonedDataset& d) {
  return internal::Embed(d.fine_tune, "ft-", d.embedding_dim, d.lift_seed);
}

inline LabeledPoints SelectRows(const LabeledPoints& p,
                                const std::vector<std::size_t>& rows) {
  LabeledPoints out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), 2);
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = static_cast<Eigen::Index>(rows.at(r));
    if (rows[r] >= p.size()) {
      throw Error(ErrorCode::kIndexOutOfRange, "row " + std::to_string(rows[r]));
    }
    out.x.row(static_cast<Eigen::Index>(r)) = p.x.row(src);
    out.y(static_cast<Eigen::Index>(r)) = p.y(src);
  }
  return out;
}

inline std::size_t SubsetSizeFromFraction(double p, std::size_t ft_size) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "p must be in (0, 1]");
  }
  return static_cast<std::size_t>(std::ceil(p * static_cast<double>(ft_size)));
}

enum class SubsetStrategy { kRelevanceDiversity, kRandom };

struct PipelineOptions {
  SubsetStrategy strategy = SubsetStrategy::kRelevanceDiversity;
  double beta = 4.0;
  double p = 0.03;
  double eps = kDefaultGainFloor;
  double eta_ft = 0.1;
  std::size_t max_steps = 2000;
};

struct PipelineResult {
  std::vector<std::size_t> subset;
  TrainReport report;
  // Mean logistic loss on the poison-region probes, labelled by the rule.
  double probe_safety_loss = 0.0;
};

inline std::vector<std::size_t> RandomSubset(std::size_t n, std::size_t k,
                                             std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k && i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(std::min(k, n));
  return order;
}

// Select a safety subset, then train with SPAG on the poisoned set.
inline PipelineResult RunPoisonedPipeline(const PoisonedDataset& d,
                                          const PipelineOptions& options,
                                          std::uint64_t seed,
                                          const PoisonedConfig& config = {}) {
  const std::size_t k = SubsetSizeFromFraction(options.p, d.fine_tune.size());
  PipelineResult out;
  if (options.strategy == SubsetStrategy::kRelevanceDiversity) {
    const EmbeddingSet pool = PoolEmbeddings(d);
    const RelevanceScores q = ComputeRelevance(pool, FineTuneEmbeddings(d));
    const WeightedKernelView view(pool, q, options.beta);
    out.subset = GreedySelect(view, k, options.eps).selected;
  } else {
    out.subset = RandomSubset(d.safe_pool.size(), k, seed ^ 0x5eedULL);
  }
  const LogisticOracle utility(d.fine_tune, config.utility_batch);
  const LogisticOracle safety(SelectRows(d.safe_pool, out.subset),
                              config.safety_batch);
  SpagConfig sc;
  sc.eta_ft = options.eta_ft;
  sc.tau = d.tau;
  sc.max_steps = options.max_steps;
  sc.seed = seed;
  out.report = SpagTrain(utility, safety, sc, d.theta0);
  out.probe_safety_loss = LogisticOracle(d.probes, 1).loss(
      out.report.final_theta, BatchSeed::Full());
  return out;
}

// Writes pool/ft embeddings (jsonl) under `dir` for the CLI pipeline.
inline void WritePoisonedArtifacts(const PoisonedDataset& d,
                                   const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError,
                "cannot create '" + dir.string() + "': " + ec.message());
  }
  SaveEmbeddings((dir / "pool.jsonl").string(), PoolEmbeddings(d),
                 EmbeddingFormat::kJsonl);
  SaveEmbeddings((dir / "ft.jsonl").string(), FineTuneEmbeddings(d),
                 EmbeddingFormat::kJsonl);
}

}  // namespace safetune::bench

#endif  // SAFETUNE_BENCH_POISONED_HPP_
