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

// Quadratically constrained quadratic test problems
//
//   min 1/2 x'A_u x - b_u'x + c_u   s.t.   1/2 x'A_s x - b_s'x + c_s <= tau
//
// whose optimum is known from the KKT system: x(lambda) solves
// (A_u + lambda A_s) x = b_u + lambda b_s, and lambda >= 0 is the root of
// the non-increasing scalar function L_s(x(lambda)) - tau.

#ifndef SAFETUNE_BENCH_QUADRATIC_HPP_
#define SAFETUNE_BENCH_QUADRATIC_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "safetune/error.hpp"
#include "safetune/spag.hpp"

namespace safetune::bench {

struct QuadraticForm {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  double c = 0.0;

  double Value(const Eigen::VectorXd& x) const {
    return 0.5 * x.dot(a * x) - b.dot(x) + c;
  }
  Eigen::VectorXd Gradient(const Eigen::VectorXd& x) const {
    return a * x - b;
  }
};

struct QuadraticProblem {
  QuadraticForm utility;
  QuadraticForm safety;
  double tau = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(utility.b.size()); }
};

struct QuadraticSolution {
  Eigen::VectorXd constrained;
  Eigen::VectorXd unconstrained;
  double multiplier = 0.0;
  double constrained_utility = 0.0;
  double unconstrained_safety = 0.0;
};

// Full-batch oracles over one side of the problem; the batch seed is ignored.
class QuadraticOracle {
 public:
  explicit QuadraticOracle(QuadraticForm form) : form_(std::move(form)) {}

  std::size_t dim() const { return static_cast<std::size_t>(form_.b.size()); }
  double loss(const ParamVector& theta, BatchSeed) const {
    return form_.Value(theta);
  }
  ParamVector grad(const ParamVector& theta, BatchSeed) const {
    return form_.Gradient(theta);
  }

 private:
  QuadraticForm form_;
};

inline QuadraticSolution SolveConstrainedQuadratic(const QuadraticProblem& p) {
  const Eigen::Index n = p.utility.b.size();
  if (p.utility.a.rows() != n || p.utility.a.cols() != n ||
      p.safety.a.rows() != n || p.safety.a.cols() != n ||
      p.safety.b.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "inconsistent problem sizes");
  }
  auto solve_at = [&](double lambda) -> Eigen::VectorXd {
    const Eigen::MatrixXd m = p.utility.a + lambda * p.safety.a;
    return m.ldlt().solve(p.utility.b + lambda * p.safety.b);
  };
  QuadraticSolution s;
  s.unconstrained = solve_at(0.0);
  s.unconstrained_safety = p.safety.Value(s.unconstrained);
  if (s.unconstrained_safety <= p.tau) {
    s.constrained = s.unconstrained;
  } else {
    auto excess = [&](double lambda) {
      return p.safety.Value(solve_at(lambda)) - p.tau;
    };
    double lo = 0.0;
    double hi = 1.0;
    int doublings = 0;
    while (excess(hi) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (++doublings > 200) {
        throw Error(ErrorCode::kInvalidConfig,
                    "safety constraint appears infeasible");
      }
    }
    // Bisect until the bracket stops shrinking in floating point.
    for (int it = 0; it < 2000; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      (excess(mid) > 0.0 ? lo : hi) = mid;
    }
    s.multiplier = hi;
    s.constrained = solve_at(hi);
  }
  s.constrained_utility = p.utility.Value(s.constrained);
  return s;
}

struct QuadraticInstance {
  QuadraticProblem problem;
  QuadraticSolution solution;
};

// Multiplier cap for generated instances. A trust radius equal to the
// utility learning rate can only balance a utility pull of up to one unit of
// safety gradient, so generated optima keep lambda* at or below this.
inline constexpr double kMaxGeneratedMultiplier = 0.5;

namespace internal {

inline Eigen::MatrixXd RandomSpd(Eigen::Index n, double lo, double hi,
                                 std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(lo, hi);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = normal(rng);
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::VectorXd eig(n);
  for (Eigen::Index i = 0; i < n; ++i) eig(i) = uniform(rng);
  Eigen::MatrixXd a = q * eig.asDiagonal() * q.transpose();
  return 0.5 * (a + a.transpose());
}

}  // namespace internal

// Random instance whose unconstrained optimum violates the constraint. The
// safety loss is a PD bowl with minimum 0, so the feasible set always has
// interior; utility is shifted so its unconstrained minimum value is 0.
inline QuadraticInstance MakeQuadratic(std::size_t dim, std::uint64_t seed) {
  if (dim < 1) throw Error(ErrorCode::kInvalidConfig, "dim must be >= 1");
  const auto n = static_cast<Eigen::Index>(dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Eigen::MatrixXd a_u = internal::RandomSpd(n, 1.0, 4.0, rng);
  const Eigen::MatrixXd a_s = internal::RandomSpd(n, 1.0, 4.0, rng);
  Eigen::VectorXd safe_center(n);
  Eigen::VectorXd offset(n);
  for (Eigen::Index i = 0; i < n; ++i) safe_center(i) = normal(rng);
  for (Eigen::Index i = 0; i < n; ++i) offset(i) = normal(rng);
  offset /= offset.norm();
  const Eigen::VectorXd utility_opt = safe_center + offset;

  QuadraticProblem p;
  p.utility.a = a_u;
  p.utility.b = a_u * utility_opt;
  p.utility.c = 0.5 * utility_opt.dot(a_u * utility_opt);
  p.safety.a = a_s;
  p.safety.b = a_s * safe_center;
  p.safety.c = 0.5 * safe_center.dot(a_s * safe_center);
  p.tau = 0.25 * p.safety.Value(utility_opt);

  QuadraticSolution s = SolveConstrainedQuadratic(p);
  if (s.multiplier > kMaxGeneratedMultiplier) {
    // Scaling the utility by c leaves the optimum fixed and multiplies the
    // multiplier by c. Shrinking utility (rather than growing safety) also
    // shrinks the utility gradient at the optimum, which sets the size of
    // the fixed-step safety overshoot.
    const double c = kMaxGeneratedMultiplier / s.multiplier;
    p.utility.a *= c;
    p.utility.b *= c;
    p.utility.c *= c;
    s = SolveConstrainedQuadratic(p);
  }
  return QuadraticInstance{std::move(p), std::move(s)};
}

}  // namespace safetune::bench

#endif  // SAFETUNE_BENCH_QUADRATIC_HPP_
