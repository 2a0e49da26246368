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

#ifndef SAFETUNE_BENCH_COMPARISON_HPP_
#define SAFETUNE_BENCH_COMPARISON_HPP_

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "safetune/spag.hpp"

namespace safetune::bench {

struct ComparisonMethods {
  bool spag = true;
  bool plain = true;
  std::vector<double> penalty_lambdas;
};

struct ComparisonOptions {
  SpagConfig spag;  // tau, eta_ft, max_steps, seed shared by every method
  ComparisonMethods methods;
  // Slack on tau for the `feasible` column.
  double feasibility_tol = 1e-3;
};

struct ComparisonRow {
  std::string method;
  double final_utility_loss = 0.0;
  double final_safety_loss = 0.0;
  bool feasible = false;
  TrainReport report;
};

namespace internal {

inline std::string ShortestDouble(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace internal

// Runs SPAG, plain gradient descent (penalty with lambda = 0) and the
// requested penalty weights from the same start; one row per method.
template <LossOracle Utility, LossOracle Safety>
std::vector<ComparisonRow> RunComparison(const Utility& utility,
                                         const Safety& safety,
                                         const ParamVector& theta0,
                                         const ComparisonOptions& options) {
  options.spag.Validate();
  std::vector<ComparisonRow> rows;
  auto add = [&](std::string name, TrainReport report) {
    ComparisonRow row;
    row.method = std::move(name);
    row.final_utility_loss = report.final_utility_loss;
    row.final_safety_loss = report.final_safety_loss;
    row.feasible =
        report.final_safety_loss <= options.spag.tau + options.feasibility_tol;
    row.report = std::move(report);
    rows.push_back(std::move(row));
  };
  auto penalty = [&](double lambda) {
    PenaltyConfig pc;
    pc.lambda = lambda;
    pc.eta = options.spag.eta_ft;
    pc.tau = options.spag.tau;
    pc.max_steps = options.spag.max_steps;
    pc.seed = options.spag.seed;
    return PenaltyTrain(utility, safety, pc, theta0);
  };
  if (options.methods.spag) {
    add("spag", SpagTrain(utility, safety, options.spag, theta0));
  }
  if (options.methods.plain) add("plain", penalty(0.0));
  for (double lambda : options.methods.penalty_lambdas) {
    add("penalty(" + internal::ShortestDouble(lambda) + ")", penalty(lambda));
  }
  return rows;
}

inline void WriteComparisonCsv(std::ostream& out,
                               const std::vector<ComparisonRow>& rows) {
  out << "method,final_utility_loss,final_safety_loss,feasible\n";
  for (const auto& r : rows) {
    out << r.method << ',' << internal::ShortestDouble(r.final_utility_loss)
        << ',' << internal::ShortestDouble(r.final_safety_loss) << ','
        << (r.feasible ? "true" : "false") << '\n';
  }
}

inline void WriteComparisonTable(std::ostream& out,
                                 const std::vector<ComparisonRow>& rows) {
  std::size_t width = std::string("method").size();
  for (const auto& r : rows) width = std::max(width, r.method.size());
  std::ostringstream s;
  s << std::left << std::setw(static_cast<int>(width)) << "method"
    << "  " << std::right << std::setw(14) << "utility" << "  "
    << std::setw(14) << "safety" << "  " << "feasible\n";
  for (const auto& r : rows) {
    s << std::left << std::setw(static_cast<int>(width)) << r.method << "  "
      << std::right << std::scientific << std::setprecision(6)
      << std::setw(14) << r.final_utility_loss << "  " << std::setw(14)
      << r.final_safety_loss << "  " << (r.feasible ? "yes" : "no") << '\n';
  }
  out << s.str();
}

}  // namespace safetune::bench

#endif  // SAFETUNE_BENCH_COMPARISON_HPP_
