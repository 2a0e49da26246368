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

// Greedy MAP inference for an L-ensemble DPP.
//
// For the selected set C with Cholesky factor L_C = F F^T, every remaining
// candidate i keeps coordinates w_i (F w_i = L_{C,i}) and its gain
// d_i^2 = L_ii - |w_i|^2, which equals det(L_{C+i}) / det(L_C). After item j
// joins C, each candidate is updated in O(|C|):
//
//   e_i = (L_ij - <w_i, w_j>) / d_j,   w_i <- [w_i, e_i],   d_i^2 -= e_i^2
//
// and row j of F is [w_j, d_j]. k steps cost O(N k^2) time and O(N k)
// memory, touching the kernel diagonal plus one column per step.

#ifndef SAFETUNE_DPP_HPP_
#define SAFETUNE_DPP_HPP_

#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "safetune/error.hpp"
#include "safetune/parallel.hpp"

namespace safetune {

template <typename K>
concept KernelAccessor = requires(const K& k, std::size_t i) {
  { k.size() } -> std::convertible_to<std::size_t>;
  { k.entry(i, i) } -> std::convertible_to<double>;
  { k.diag(i) } -> std::convertible_to<double>;
};

inline constexpr double kDefaultGainFloor = 1e-8;

struct SelectionResult {
  std::vector<std::size_t> selected;
  std::vector<double> gains;
  double log_det = 0.0;
  bool stopped_early = false;
  std::size_t requested_k = 0;
};

template <KernelAccessor Kernel>
class GreedySelector {
 public:
  GreedySelector(const Kernel& kernel, std::size_t k, double eps,
                 unsigned threads = 1)
      : kernel_(kernel),
        n_(kernel.size()),
        k_(k),
        eps_(eps),
        threads_(threads) {
    if (k_ < 1 || k_ > n_) {
      throw Error(ErrorCode::kInvalidK, "k = " + std::to_string(k_) +
                                            " outside [1, " +
                                            std::to_string(n_) + "]");
    }
    if (!(eps_ > 0.0) || !std::isfinite(eps_)) {
      throw Error(ErrorCode::kInvalidConfig, "gain floor must be positive");
    }
    chosen_.assign(n_, false);
    coords_.assign(n_ * k_, 0.0);
    gain_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) gain_[i] = Touch(i, i);
    factor_.reserve(k_ * k_);
  }

  // Adds the best remaining candidate. Returns false, without selecting,
  // when k items are already chosen or the best gain is at or below eps.
  bool Step() {
    const std::size_t m = selected_.size();
    if (m >= k_) return false;
    std::size_t best = n_;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_; ++i) {
      if (!chosen_[i] && gain_[i] > best_gain) {
        best = i;
        best_gain = gain_[i];
      }
    }
    if (best == n_ || !(best_gain > eps_)) {
      stopped_early_ = true;
      return false;
    }
    const double d = std::sqrt(best_gain);
    const double* wj = &coords_[best * k_];
    // New factor row [w_j, d_j], stored packed lower-triangular.
    factor_.insert(factor_.end(), wj, wj + m);
    factor_.push_back(d);
    chosen_[best] = true;
    selected_.push_back(best);
    gains_.push_back(best_gain);

    ParallelFor(n_, threads_, [&](std::size_t i) {
      if (chosen_[i]) return;
      double* wi = &coords_[i * k_];
      double dot = 0.0;
      for (std::size_t t = 0; t < m; ++t) dot += wi[t] * wj[t];
      const double e = (Touch(i, best) - dot) / d;
      wi[m] = e;
      gain_[i] -= e * e;
    });
    return true;
  }

  SelectionResult Run() {
    while (Step()) {
    }
    SelectionResult r;
    r.selected = selected_;
    r.gains = gains_;
    r.log_det = 0.0;
    for (double g : gains_) r.log_det += std::log(g);
    r.stopped_early = selected_.size() < k_;
    r.requested_k = k_;
    return r;
  }

  const std::vector<std::size_t>& selected() const { return selected_; }
  const std::vector<double>& gains() const { return gains_; }
  bool stopped_early() const { return stopped_early_; }

  // Maintained lower-triangular F with F F^T = L_C (selection order).
  Eigen::MatrixXd Factor() const {
    const std::size_t m = selected_.size();
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(m, m);
    std::size_t pos = 0;
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c <= r; ++c) {
        f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            factor_[pos++];
      }
    }
    return f;
  }

  // Current d_i^2 of candidate i (meaningful for unselected i).
  double Gain(std::size_t i) const { return gain_.at(i); }

  // Current w_i, length |C|.
  Eigen::VectorXd Coordinates(std::size_t i) const {
    const std::size_t m = selected_.size();
    Eigen::VectorXd w(m);
    for (std::size_t t = 0; t < m; ++t) {
      w(static_cast<Eigen::Index>(t)) = coords_.at(i * k_ + t);
    }
    return w;
  }

 private:
  double Touch(std::size_t i, std::size_t j) const {
    const double v = kernel_.entry(i, j);
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFiniteKernel,
                  "kernel entry (" + std::to_string(i) + ", " +
                      std::to_string(j) + ") is not finite");
    }
    return v;
  }

  const Kernel& kernel_;
  std::size_t n_;
  std::size_t k_;
  double eps_;
  unsigned threads_;
  std::vector<bool> chosen_;
  std::vector<double> coords_;  // n x k, row i holds w_i
  std::vector<double> gain_;
  std::vector<double> factor_;
  std::vector<std::size_t> selected_;
  std::vector<double> gains_;
  bool stopped_early_ = false;
};

template <KernelAccessor Kernel>
SelectionResult GreedySelect(const Kernel& kernel, std::size_t k,
                             double eps = kDefaultGainFloor,
                             unsigned threads = 1) {
  GreedySelector<Kernel> selector(kernel, k, eps, threads);
  return selector.Run();
}

// Pivots at or below this mark a numerically singular submatrix.
inline constexpr double kSingularPivot = 1e-300;

// log det of kernel[subset, subset] by Cholesky; -inf when singular or
// indefinite.
inline double SubsetLogDet(const Eigen::MatrixXd& kernel,
                           const std::vector<std::size_t>& subset) {
  const auto n = static_cast<std::size_t>(kernel.rows());
  std::vector<bool> seen(n, false);
  for (std::size_t idx : subset) {
    if (idx >= n) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "subset index " + std::to_string(idx));
    }
    if (seen[idx]) {
      throw Error(ErrorCode::kDuplicateIndex,
                  "subset index " + std::to_string(idx) + " repeated");
    }
    seen[idx] = true;
  }
  const std::size_t m = subset.size();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
  double log_det = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    double pivot = kernel(static_cast<Eigen::Index>(subset[j]),
                          static_cast<Eigen::Index>(subset[j]));
    for (Eigen::Index t = 0; t < jj; ++t) pivot -= l(jj, t) * l(jj, t);
    if (!(pivot > kSingularPivot)) {
      return -std::numeric_limits<double>::infinity();
    }
    const double root = std::sqrt(pivot);
    l(jj, jj) = root;
    log_det += std::log(pivot);
    for (std::size_t i = j + 1; i < m; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double s = kernel(static_cast<Eigen::Index>(subset[i]),
                        static_cast<Eigen::Index>(subset[j]));
      for (Eigen::Index t = 0; t < jj; ++t) s -= l(ii, t) * l(jj, t);
      l(ii, jj) = s / root;
    }
  }
  return log_det;
}

inline constexpr std::size_t kMaxExhaustiveN = 20;

struct MapResult {
  std::vector<std::size_t> subset;
  double log_det = -std::numeric_limits<double>::infinity();
};

// Exact size-k MAP by enumeration in lexicographic order; the first subset
// reaching the maximum wins ties.
inline MapResult BruteForceMap(const Eigen::MatrixXd& kernel, std::size_t k) {
  const auto n = static_cast<std::size_t>(kernel.rows());
  if (kernel.rows() != kernel.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "kernel must be square");
  }
  if (n > kMaxExhaustiveN) {
    throw Error(ErrorCode::kTooLargeForExhaustive,
                "N = " + std::to_string(n) + " exceeds " +
                    std::to_string(kMaxExhaustiveN));
  }
  if (k < 1 || k > n) {
    throw Error(ErrorCode::kInvalidK, "k = " + std::to_string(k) +
                                          " outside [1, " + std::to_string(n) +
                                          "]");
  }
  std::vector<std::size_t> combo(k);
  std::iota(combo.begin(), combo.end(), std::size_t{0});
  MapResult best;
  best.subset = combo;
  best.log_det = SubsetLogDet(kernel, combo);
  while (true) {
    // Advance to the next combination.
    std::size_t pos = k;
    while (pos > 0 && combo[pos - 1] == n - k + (pos - 1)) --pos;
    if (pos == 0) break;
    ++combo[pos - 1];
    for (std::size_t t = pos; t < k; ++t) combo[t] = combo[t - 1] + 1;
    const double v = SubsetLogDet(kernel, combo);
    if (v > best.log_det) {
      best.log_det = v;
      best.subset = combo;
    }
  }
  return best;
}

inline nlohmann::json SelectionToJson(const SelectionResult& result,
                                      const std::vector<std::string>& ids,
                                      double beta) {
  nlohmann::json doc;
  std::vector<std::string> selected_ids;
  selected_ids.reserve(result.selected.size());
  for (std::size_t i : result.selected) selected_ids.push_back(ids.at(i));
  doc["selected_ids"] = selected_ids;
  doc["gains"] = result.gains;
  doc["log_det"] = result.log_det;
  doc["stopped_early"] = result.stopped_early;
  doc["k_requested"] = result.requested_k;
  doc["beta"] = beta;
  return doc;
}

}  // namespace safetune

#endif  // SAFETUNE_DPP_HPP_
