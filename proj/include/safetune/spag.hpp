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

// Safety-projected alternating gradient training.
//
// Each step takes a plain gradient step on the utility loss,
//
//   theta+ = theta - eta_ft * grad L_ft(theta),
//
// then, if the safety loss l at theta+ exceeds tau, moves theta+ onto the
// linearized safety half-space {l + <g, theta - theta+> <= tau}:
//
//   alpha = min((l - tau) / |g|^2, eta_safe),   theta = theta+ - alpha * g.
//
// Unclamped, this is the exact Euclidean projection onto the half-space.
// Clamped, the correction stays inside the ball of radius eta_safe * |g|.

#ifndef SAFETUNE_SPAG_HPP_
#define SAFETUNE_SPAG_HPP_

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "safetune/error.hpp"

namespace safetune {

using ParamVector = Eigen::VectorXd;

// Identifies the mini-batch an oracle evaluates. Full() asks for the loss
// over the whole dataset.
struct BatchSeed {
  std::uint64_t value = 0;

  static constexpr BatchSeed Full() {
    return BatchSeed{std::numeric_limits<std::uint64_t>::max()};
  }
  constexpr bool is_full() const { return value == Full().value; }
  friend constexpr bool operator==(BatchSeed, BatchSeed) = default;
};

// Batch seed for (run seed, step, phase), from a counter-based mix so any
// step can be replayed without running the ones before it.
inline BatchSeed DeriveBatchSeed(std::uint64_t seed, std::uint64_t step,
                                 std::uint64_t phase) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ step);
  h = mix(h ^ (phase + 1));
  // Never collide with the full-batch sentinel.
  if (h == BatchSeed::Full().value) h -= 1;
  return BatchSeed{h};
}

enum class Phase : std::uint64_t { kUtility = 0, kSafety = 1 };

// Loss and gradient oracle, deterministic in (theta, batch seed).
template <typename O>
concept LossOracle = requires(const O& o, const ParamVector& theta,
                              BatchSeed seed) {
  { o.dim() } -> std::convertible_to<std::size_t>;
  { o.loss(theta, seed) } -> std::convertible_to<double>;
  { o.grad(theta, seed) } -> std::convertible_to<ParamVector>;
};

// Oracle assembled from callables; handy for tests and small problems.
struct FunctionOracle {
  std::size_t n = 0;
  std::function<double(const ParamVector&, BatchSeed)> loss_fn;
  std::function<ParamVector(const ParamVector&, BatchSeed)> grad_fn;

  std::size_t dim() const { return n; }
  double loss(const ParamVector& theta, BatchSeed seed) const {
    return loss_fn(theta, seed);
  }
  ParamVector grad(const ParamVector& theta, BatchSeed seed) const {
    return grad_fn(theta, seed);
  }
};

struct SpagConfig {
  double eta_ft = 5e-5;
  double tau = 0.2;
  // Trust-region radius; unset means "same as eta_ft".
  std::optional<double> eta_safe;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;

  double trust_radius() const { return eta_safe.value_or(eta_ft); }

  void Validate() const {
    if (!(eta_ft > 0.0) || !std::isfinite(eta_ft)) {
      throw Error(ErrorCode::kInvalidConfig, "eta_ft must be positive");
    }
    if (!std::isfinite(tau)) {
      throw Error(ErrorCode::kInvalidConfig, "tau must be finite");
    }
    if (eta_safe && (!(*eta_safe > 0.0) || !std::isfinite(*eta_safe))) {
      throw Error(ErrorCode::kInvalidConfig, "eta_safe must be positive");
    }
    if (max_steps < 1) {
      throw Error(ErrorCode::kInvalidConfig, "max_steps must be >= 1");
    }
  }
};

inline SpagConfig SpagConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
  }
  SpagConfig c;
  try {
    if (j.contains("eta_ft")) c.eta_ft = j.at("eta_ft").get<double>();
    if (j.contains("tau")) c.tau = j.at("tau").get<double>();
    if (j.contains("eta_safe") && !j.at("eta_safe").is_null()) {
      c.eta_safe = j.at("eta_safe").get<double>();
    }
    if (j.contains("max_steps")) {
      const auto steps = j.at("max_steps").get<std::int64_t>();
      if (steps < 1) {
        throw Error(ErrorCode::kInvalidConfig, "max_steps must be >= 1");
      }
      c.max_steps = static_cast<std::size_t>(steps);
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  c.Validate();
  return c;
}

inline SpagConfig LoadSpagConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  return SpagConfigFromJson(j);
}

struct StepReport {
  std::size_t step = 0;
  double utility_loss = 0.0;
  // Safety loss on the step's safety batch at theta+.
  double safety_loss = 0.0;
  bool projection_applied = false;
  double alpha = 0.0;
  bool clamped = false;
  double grad_safe_norm_sq = 0.0;
  // |theta_new - theta+|.
  double correction_norm = 0.0;
  // Constraint violated but the safety gradient vanished; step skipped.
  bool degenerate = false;
};

struct TrainReport {
  std::vector<StepReport> steps;
  ParamVector final_theta;
  double final_safety_loss = 0.0;
  double final_utility_loss = 0.0;
};

namespace internal {

inline void RequireFinite(const ParamVector& v, const char* what) {
  if (!v.allFinite()) {
    throw Error(ErrorCode::kNonFiniteGradient,
                std::string(what) + " has non-finite entries");
  }
}

inline void RequireSameDim(const ParamVector& a, const ParamVector& b,
                           const char* what) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": " + std::to_string(a.size()) +
                    " vs " + std::to_string(b.size()));
  }
}

}  // namespace internal

inline ParamVector UtilityStep(const ParamVector& theta,
                               const ParamVector& grad_ft, double eta_ft) {
  internal::RequireSameDim(theta, grad_ft, "utility gradient dimension");
  internal::RequireFinite(grad_ft, "utility gradient");
  if (!(eta_ft > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "eta_ft must be positive");
  }
  return theta - eta_ft * grad_ft;
}

inline constexpr double kDegenerateGradNormSq = 1e-30;

struct ProjectionOutcome {
  ParamVector theta;
  bool applied = false;
  double alpha = 0.0;
  bool clamped = false;
  double grad_norm_sq = 0.0;
};

inline ProjectionOutcome SafetyProjection(const ParamVector& theta_plus,
                                          double l_safe,
                                          const ParamVector& grad_safe,
                                          double tau, double eta_safe) {
  internal::RequireSameDim(theta_plus, grad_safe, "safety gradient dimension");
  if (!(eta_safe > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "eta_safe must be positive");
  }
  if (!std::isfinite(l_safe)) {
    throw Error(ErrorCode::kNonFiniteGradient, "safety loss is not finite");
  }
  ProjectionOutcome out;
  if (l_safe <= tau) {
    out.theta = theta_plus;
    return out;
  }
  internal::RequireFinite(grad_safe, "safety gradient");
  const double norm_sq = grad_safe.squaredNorm();
  if (norm_sq <= kDegenerateGradNormSq) {
    throw Error(ErrorCode::kDegenerateGradient,
                "safety constraint violated with vanishing gradient");
  }
  const double step = (l_safe - tau) / norm_sq;
  out.applied = true;
  out.grad_norm_sq = norm_sq;
  out.alpha = step < eta_safe ? step : eta_safe;
  out.clamped = out.alpha == eta_safe;
  out.theta = theta_plus - out.alpha * grad_safe;
  return out;
}

// Gradient of L_ft + lambda * (L_safe - tau).
inline ParamVector PenalizedGradient(const ParamVector& grad_ft,
                                     const ParamVector& grad_safe,
                                     double lambda) {
  internal::RequireSameDim(grad_ft, grad_safe, "penalized gradient");
  return grad_ft + lambda * grad_safe;
}

namespace internal {

template <typename Fn>
auto AtStep(std::size_t step, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "step " + std::to_string(step) + ": " + e.detail());
  }
}

template <typename Oracle>
void RequireOracleDim(const Oracle& oracle, const ParamVector& theta0,
                      const char* which) {
  if (oracle.dim() != static_cast<std::size_t>(theta0.size())) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(which) + " oracle dimension " +
                    std::to_string(oracle.dim()) + " != parameter dimension " +
                    std::to_string(theta0.size()));
  }
}

}  // namespace internal

template <LossOracle Utility, LossOracle Safety>
TrainReport SpagTrain(const Utility& utility, const Safety& safety,
                      const SpagConfig& config, const ParamVector& theta0) {
  config.Validate();
  internal::RequireOracleDim(utility, theta0, "utility");
  internal::RequireOracleDim(safety, theta0, "safety");
  const double eta_safe = config.trust_radius();
  TrainReport report;
  report.steps.reserve(config.max_steps);
  ParamVector theta = theta0;
  for (std::size_t t = 0; t < config.max_steps; ++t) {
    StepReport rec;
    rec.step = t;
    const BatchSeed ft_seed =
        DeriveBatchSeed(config.seed, t, static_cast<std::uint64_t>(Phase::kUtility));
    const BatchSeed safe_seed =
        DeriveBatchSeed(config.seed, t, static_cast<std::uint64_t>(Phase::kSafety));
    rec.utility_loss =
        internal::AtStep(t, [&] { return utility.loss(theta, ft_seed); });
    const ParamVector theta_plus = internal::AtStep(t, [&] {
      return UtilityStep(theta, utility.grad(theta, ft_seed), config.eta_ft);
    });
    rec.safety_loss =
        internal::AtStep(t, [&] { return safety.loss(theta_plus, safe_seed); });
    if (rec.safety_loss <= config.tau) {
      theta = theta_plus;
    } else {
      const ParamVector g = internal::AtStep(
          t, [&] { return ParamVector(safety.grad(theta_plus, safe_seed)); });
      try {
        ProjectionOutcome p = internal::AtStep(t, [&] {
          return SafetyProjection(theta_plus, rec.safety_loss, g, config.tau,
                                  eta_safe);
        });
        rec.projection_applied = p.applied;
        rec.alpha = p.alpha;
        rec.clamped = p.clamped;
        rec.grad_safe_norm_sq = p.grad_norm_sq;
        rec.correction_norm = (p.theta - theta_plus).norm();
        theta = std::move(p.theta);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateGradient) throw;
        rec.degenerate = true;
        rec.grad_safe_norm_sq = g.squaredNorm();
        theta = theta_plus;
      }
    }
    report.steps.push_back(rec);
  }
  report.final_theta = theta;
  report.final_utility_loss = utility.loss(theta, BatchSeed::Full());
  report.final_safety_loss = safety.loss(theta, BatchSeed::Full());
  return report;
}

struct PenaltyConfig {
  double lambda = 0.0;
  double eta = 5e-5;
  double tau = 0.2;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
};

// Gradient descent on L_ft + lambda * (L_safe - tau). StepReport records the
// safety loss at the pre-step parameters; projection fields stay zero.
template <LossOracle Utility, LossOracle Safety>
TrainReport PenaltyTrain(const Utility& utility, const Safety& safety,
                         const PenaltyConfig& config,
                         const ParamVector& theta0) {
  if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda)) {
    throw Error(ErrorCode::kInvalidConfig, "lambda must be >= 0");
  }
  if (!(config.eta > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "eta must be positive");
  }
  if (config.max_steps < 1) {
    throw Error(ErrorCode::kInvalidConfig, "max_steps must be >= 1");
  }
  internal::RequireOracleDim(utility, theta0, "utility");
  internal::RequireOracleDim(safety, theta0, "safety");
  TrainReport report;
  report.steps.reserve(config.max_steps);
  ParamVector theta = theta0;
  for (std::size_t t = 0; t < config.max_steps; ++t) {
    StepReport rec;
    rec.step = t;
    const BatchSeed ft_seed =
        DeriveBatchSeed(config.seed, t, static_cast<std::uint64_t>(Phase::kUtility));
    const BatchSeed safe_seed =
        DeriveBatchSeed(config.seed, t, static_cast<std::uint64_t>(Phase::kSafety));
    rec.utility_loss =
        internal::AtStep(t, [&] { return utility.loss(theta, ft_seed); });
    ParamVector g = internal::AtStep(
        t, [&] { return ParamVector(utility.grad(theta, ft_seed)); });
    if (config.lambda > 0.0) {
      rec.safety_loss =
          internal::AtStep(t, [&] { return safety.loss(theta, safe_seed); });
      g = internal::AtStep(t, [&] {
        return PenalizedGradient(g, safety.grad(theta, safe_seed),
                                 config.lambda);
      });
    }
    theta = internal::AtStep(t, [&] { return UtilityStep(theta, g, config.eta); });
    report.steps.push_back(rec);
  }
  report.final_theta = theta;
  report.final_utility_loss = utility.loss(theta, BatchSeed::Full());
  report.final_safety_loss = safety.loss(theta, BatchSeed::Full());
  return report;
}

inline nlohmann::json StepReportToJson(const StepReport& s) {
  return nlohmann::json{{"step", s.step},
                        {"utility_loss", s.utility_loss},
                        {"safety_loss", s.safety_loss},
                        {"projection_applied", s.projection_applied},
                        {"alpha", s.alpha},
                        {"clamped", s.clamped},
                        {"grad_safe_norm_sq", s.grad_safe_norm_sq},
                        {"correction_norm", s.correction_norm},
                        {"degenerate", s.degenerate}};
}

// One StepReport per line, then a summary object.
inline void WriteTrainReportJsonl(std::ostream& out, const TrainReport& r) {
  for (const auto& s : r.steps) out << StepReportToJson(s).dump() << '\n';
  nlohmann::json summary;
  summary["summary"] = true;
  summary["steps"] = r.steps.size();
  summary["final_theta"] = std::vector<double>(
      r.final_theta.data(), r.final_theta.data() + r.final_theta.size());
  summary["final_safety_loss"] = r.final_safety_loss;
  summary["final_utility_loss"] = r.final_utility_loss;
  out << summary.dump() << '\n';
}

}  // namespace safetune

#endif  // SAFETUNE_SPAG_HPP_
