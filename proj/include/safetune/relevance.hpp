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

// Relevance scores of candidates against a reference set, and the
// relevance-weighted cosine kernel built from them:
//
//   q_i     = clamp(max_z cos(x_i, x_z), 0, 1)
//   Lhat_ij = (q_i q_j)^beta * cos(x_i, x_j)
//
// The kernel is exposed lazily (WeightedKernelView) for selection and as a
// dense matrix for small pools.

#ifndef SAFETUNE_RELEVANCE_HPP_
#define SAFETUNE_RELEVANCE_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "safetune/embedding.hpp"
#include "safetune/error.hpp"
#include "safetune/parallel.hpp"

namespace safetune {

inline double CosineSim(const Eigen::Ref<const Eigen::VectorXd>& a,
                        const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cosine similarity of vectors with dimensions " +
                    std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > kZeroNormThreshold) || !(nb > kZeroNormThreshold)) {
    throw Error(ErrorCode::kZeroVector, "cosine similarity of a zero vector");
  }
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// Per-candidate relevance in [0, 1].
class RelevanceScores {
 public:
  RelevanceScores() = default;
  explicit RelevanceScores(std::vector<double> q) : q_(std::move(q)) {
    for (std::size_t i = 0; i < q_.size(); ++i) {
      if (!std::isfinite(q_[i]) || q_[i] < 0.0 || q_[i] > 1.0) {
        throw Error(ErrorCode::kMalformedRecord,
                    "relevance score " + std::to_string(i) +
                        " outside [0, 1]");
      }
    }
  }

  // All-ones scores: the weighted kernel collapses to the base kernel.
  static RelevanceScores Uniform(std::size_t n) {
    return RelevanceScores(std::vector<double>(n, 1.0));
  }

  std::size_t size() const { return q_.size(); }
  double operator[](std::size_t i) const { return q_[i]; }
  const std::vector<double>& values() const { return q_; }

 private:
  std::vector<double> q_;
};

namespace internal {

inline RowMatrix UnitRows(const RowMatrix& m) {
  RowMatrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).norm();
    if (!(norm > kZeroNormThreshold)) {
      throw Error(ErrorCode::kZeroVector,
                  "zero embedding at row " + std::to_string(i));
    }
    out.row(i) = m.row(i) / norm;
  }
  return out;
}

}  // namespace internal

struct RelevanceOptions {
  unsigned threads = 1;
  // Uniformly subsample the reference set to at most this many rows
  // (0 keeps every row).
  std::size_t ft_cap = 0;
  std::uint64_t ft_cap_seed = 0;
};

// Uniform subsample without replacement, order of the survivors preserved.
inline EmbeddingSet SubsampleRows(const EmbeddingSet& set, std::size_t cap,
                                  std::uint64_t seed) {
  if (cap == 0 || cap >= set.size()) return set;
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(cap);
  std::sort(order.begin(), order.end());
  return set.Subset(order);
}

inline RelevanceScores ComputeRelevance(const EmbeddingSet& pool,
                                        const EmbeddingSet& ft,
                                        const RelevanceOptions& options = {}) {
  if (ft.empty()) {
    throw Error(ErrorCode::kEmptyReferenceSet, "reference set is empty");
  }
  if (pool.dim() != ft.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "pool dimension " + std::to_string(pool.dim()) +
                    " != reference dimension " + std::to_string(ft.dim()));
  }
  const EmbeddingSet reference =
      SubsampleRows(ft, options.ft_cap, options.ft_cap_seed);
  const RowMatrix pool_unit = internal::UnitRows(pool.vectors());
  const RowMatrix ref_unit = internal::UnitRows(reference.vectors());
  std::vector<double> q(pool.size());
  ParallelFor(pool.size(), options.threads, [&](std::size_t i) {
    const auto xi = pool_unit.row(static_cast<Eigen::Index>(i));
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index z = 0; z < ref_unit.rows(); ++z) {
      best = std::max(best, xi.dot(ref_unit.row(z)));
    }
    q[i] = std::clamp(best, 0.0, 1.0);
  });
  return RelevanceScores(std::move(q));
}

// Lazy accessor for Lhat over a pool. Rows are re-normalized on
// construction so the base kernel is a Gram matrix of unit vectors.
class WeightedKernelView {
 public:
  WeightedKernelView(const EmbeddingSet& pool, RelevanceScores scores,
                     double beta)
      : unit_(internal::UnitRows(pool.vectors())),
        scores_(std::move(scores)),
        beta_(beta) {
    if (scores_.size() != pool.size()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "relevance count " + std::to_string(scores_.size()) +
                      " != pool size " + std::to_string(pool.size()));
    }
    if (!std::isfinite(beta_) || beta_ < 0.0) {
      throw Error(ErrorCode::kInvalidConfig, "beta must be finite and >= 0");
    }
  }

  std::size_t size() const { return static_cast<std::size_t>(unit_.rows()); }
  double beta() const { return beta_; }
  const RelevanceScores& scores() const { return scores_; }

  // Unweighted cosine kernel entry; exactly 1 on the diagonal.
  double base_entry(std::size_t i, std::size_t j) const {
    CheckIndex(i);
    CheckIndex(j);
    if (i == j) return 1.0;
    if (i > j) std::swap(i, j);
    return std::clamp(unit_.row(static_cast<Eigen::Index>(i))
                          .dot(unit_.row(static_cast<Eigen::Index>(j))),
                      -1.0, 1.0);
  }

  double entry(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    const double base = base_entry(i, j);
    return std::pow(scores_[i] * scores_[j], beta_) * base;
  }

  double diag(std::size_t i) const { return entry(i, i); }

 private:
  void CheckIndex(std::size_t i) const {
    if (i >= size()) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "kernel index " + std::to_string(i) + " >= " +
                      std::to_string(size()));
    }
  }

  RowMatrix unit_;
  RelevanceScores scores_;
  double beta_;
};

inline constexpr std::size_t kDefaultDenseCap = 4096;

template <typename Kernel>
Eigen::MatrixXd DenseKernel(const Kernel& kernel,
                            std::size_t cap = kDefaultDenseCap,
                            unsigned threads = 1) {
  const std::size_t n = kernel.size();
  if (n > cap) {
    throw Error(ErrorCode::kPoolTooLarge,
                "pool of " + std::to_string(n) + " exceeds dense cap " +
                    std::to_string(cap));
  }
  Eigen::MatrixXd m(n, n);
  ParallelFor(n, threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          kernel.entry(i, j);
    }
  });
  return m;
}

// Dense symmetric kernel adapter with the same accessor surface as
// WeightedKernelView, for selection over explicit matrices.
class MatrixKernel {
 public:
  explicit MatrixKernel(Eigen::MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) {
      throw Error(ErrorCode::kDimensionMismatch, "kernel must be square");
    }
  }

  std::size_t size() const { return static_cast<std::size_t>(m_.rows()); }
  double entry(std::size_t i, std::size_t j) const {
    if (i >= size() || j >= size()) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "kernel index out of range");
    }
    return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  double diag(std::size_t i) const { return entry(i, i); }
  const Eigen::MatrixXd& matrix() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

inline void WriteRelevanceJsonl(std::ostream& out,
                                const std::vector<std::string>& ids,
                                const RelevanceScores& scores) {
  if (ids.size() != scores.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "id count does not match score count");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nlohmann::json record;
    record["id"] = ids[i];
    record["q"] = scores[i];
    out << record.dump() << '\n';
  }
}

// Reads `{"id", "q"}` records and reorders them to match `ids`.
inline RelevanceScores ParseRelevanceJsonl(std::istream& in,
                                           const std::vector<std::string>& ids) {
  std::unordered_map<std::string, double> by_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (internal::IsBlank(line)) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error(ErrorCode::kMalformedRecord,
                  internal::LineTag(line_no) + ": invalid JSON");
    }
    if (!record.is_object() || !record.contains("id") ||
        !record["id"].is_string() || !record.contains("q") ||
        !record["q"].is_number()) {
      throw Error(ErrorCode::kMalformedRecord,
                  internal::LineTag(line_no) + ": expected {id, q}");
    }
    if (!by_id.emplace(record["id"].get<std::string>(),
                       record["q"].get<double>())
             .second) {
      throw Error(ErrorCode::kDuplicateId,
                  internal::LineTag(line_no) + ": duplicate id");
    }
  }
  if (by_id.empty()) throw Error(ErrorCode::kEmptyFile, "no relevance records");
  std::vector<double> q;
  q.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::kMalformedRecord,
                  "no relevance score for id '" + id + "'");
    }
    q.push_back(it->second);
  }
  return RelevanceScores(std::move(q));
}

}  // namespace safetune

#endif  // SAFETUNE_RELEVANCE_HPP_
