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

// safetune command-line tool: relevance scoring, subset selection, exact
// MAP oracle and training demos.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "safetune/bench/comparison.hpp"
#include "safetune/bench/poisoned.hpp"
#include "safetune/bench/quadratic.hpp"
#include "safetune/dpp.hpp"
#include "safetune/embedding.hpp"
#include "safetune/relevance.hpp"
#include "safetune/spag.hpp"

namespace {

using safetune::Error;
using safetune::ErrorCode;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitEarlyStop = 3;
constexpr int kExitNumerical = 4;

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  2  usage, I/O or validation error\n"
    "  3  success with warning (selection stopped early)\n"
    "  4  internal numerical failure";

// Ingestion flags shared by subcommands that read embedding files.
struct InputFlags {
  std::string format = "auto";
  std::string pooling = "none";
  unsigned threads = 1;
};

void AddInputFlags(CLI::App* cmd, InputFlags& f) {
  cmd->add_option("--format", f.format,
                  "Embedding file format; auto picks csv for *.csv, else jsonl")
      ->check(CLI::IsMember({"auto", "jsonl", "csv"}))
      ->capture_default_str();
  cmd->add_option("--pooling", f.pooling,
                  "'mean' accepts token_states records and mean-pools them "
                  "(jsonl only)")
      ->check(CLI::IsMember({"none", "mean"}))
      ->capture_default_str();
  cmd->add_option("--threads", f.threads,
                  "Worker threads; results do not depend on this")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();
}

safetune::EmbeddingSet Load(const std::string& path, const InputFlags& f) {
  safetune::LoadOptions opts;
  opts.mean_pool_tokens = f.pooling == "mean";
  if (f.format == "auto") return safetune::LoadEmbeddings(path, opts);
  const auto format = f.format == "csv" ? safetune::EmbeddingFormat::kCsv
                                        : safetune::EmbeddingFormat::kJsonl;
  return safetune::LoadEmbeddings(path, format, opts);
}

std::ofstream OpenOut(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path + "'");
  return out;
}

void WriteJsonFile(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out = OpenOut(path);
  out << doc.dump(2) << '\n';
}

safetune::RelevanceScores ReadRelevance(const std::string& path,
                                        const safetune::EmbeddingSet& pool) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path + "'");
  return safetune::ParseRelevanceJsonl(in, pool.ids());
}

// ---- relevance ------------------------------------------------------------

struct RelevanceFlags {
  std::string pool;
  std::string ft;
  std::string out;
  std::size_t ft_cap = 0;
  std::uint64_t ft_cap_seed = 0;
  InputFlags input;
};

int RunRelevance(const RelevanceFlags& f) {
  const safetune::EmbeddingSet pool = Load(f.pool, f.input);
  const safetune::EmbeddingSet ft = Load(f.ft, f.input);
  safetune::RelevanceOptions opts;
  opts.threads = f.input.threads;
  opts.ft_cap = f.ft_cap;
  opts.ft_cap_seed = f.ft_cap_seed;
  const safetune::RelevanceScores q = safetune::ComputeRelevance(pool, ft, opts);
  {
    std::ofstream out = OpenOut(f.out);
    safetune::WriteRelevanceJsonl(out, pool.ids(), q);
  }
  const auto& v = q.values();
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = v.empty() ? 0.0 : sum / static_cast<double>(v.size());
  const double lo = v.empty() ? 0.0 : *std::min_element(v.begin(), v.end());
  const double hi = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  std::cout << "n=" << v.size() << " min=" << lo << " mean=" << mean
            << " max=" << hi << '\n';
  return kExitOk;
}

// ---- select ---------------------------------------------------------------

struct SelectFlags {
  std::string pool;
  std::string ft;
  std::string relevance;
  std::string out;
  double beta = 4.0;
  std::optional<std::size_t> k;
  std::optional<double> p;
  double eps = safetune::kDefaultGainFloor;
  InputFlags input;
};

constexpr double kDefaultFraction = 0.03;

int RunSelect(const SelectFlags& f) {
  if (f.k && f.p) {
    throw Error(ErrorCode::kInvalidConfig, "--k and --p are mutually exclusive");
  }
  const safetune::EmbeddingSet pool = Load(f.pool, f.input);
  std::optional<safetune::EmbeddingSet> ft;
  if (!f.ft.empty()) ft.emplace(Load(f.ft, f.input));
  std::size_t k = 0;
  if (f.k) {
    k = *f.k;
  } else {
    if (!ft) {
      throw Error(ErrorCode::kInvalidConfig,
                  "--p (default 0.03) sizes the subset from the ft set; pass "
                  "--ft or give --k");
    }
    k = safetune::bench::SubsetSizeFromFraction(f.p.value_or(kDefaultFraction),
                                                ft->size());
  }
  safetune::RelevanceScores q = safetune::RelevanceScores::Uniform(0);
  if (!f.relevance.empty()) {
    q = ReadRelevance(f.relevance, pool);
  } else {
    safetune::RelevanceOptions opts;
    opts.threads = f.input.threads;
    q = safetune::ComputeRelevance(pool, *ft, opts);
  }
  const safetune::WeightedKernelView view(pool, q, f.beta);
  const safetune::SelectionResult r =
      safetune::GreedySelect(view, k, f.eps, f.input.threads);
  WriteJsonFile(f.out, safetune::SelectionToJson(r, pool.ids(), f.beta));
  std::cout << "selected " << r.selected.size() << " of " << pool.size()
            << " (k=" << k << ")\n";
  if (r.stopped_early) {
    std::cerr << "warning: stopped early after " << r.selected.size()
              << " items; remaining gains at or below eps=" << f.eps << '\n';
    return kExitEarlyStop;
  }
  return kExitOk;
}

// ---- oracle ---------------------------------------------------------------

struct OracleFlags {
  std::string pool;
  std::string ft;
  std::string relevance;
  std::string out;
  double beta = 4.0;
  std::size_t k = 0;
  InputFlags input;
};

int RunOracle(const OracleFlags& f) {
  const safetune::EmbeddingSet pool = Load(f.pool, f.input);
  if (pool.size() > safetune::kMaxExhaustiveN) {
    throw Error(ErrorCode::kTooLargeForExhaustive,
                "pool has " + std::to_string(pool.size()) +
                    " items; the exhaustive oracle allows at most " +
                    std::to_string(safetune::kMaxExhaustiveN));
  }
  safetune::RelevanceScores q = safetune::RelevanceScores::Uniform(pool.size());
  if (!f.relevance.empty()) {
    q = ReadRelevance(f.relevance, pool);
  } else if (!f.ft.empty()) {
    q = safetune::ComputeRelevance(pool, Load(f.ft, f.input));
  }
  const safetune::WeightedKernelView view(pool, q, f.beta);
  const safetune::MapResult r =
      safetune::BruteForceMap(safetune::DenseKernel(view), f.k);
  std::vector<std::string> ids;
  for (std::size_t i : r.subset) ids.push_back(pool.ids()[i]);
  nlohmann::json doc;
  doc["selected_ids"] = ids;
  doc["log_det"] = r.log_det;
  doc["k"] = f.k;
  doc["beta"] = f.beta;
  const std::string text = doc.dump(2);
  if (f.out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream out = OpenOut(f.out);
    out << text << '\n';
  }
  return kExitOk;
}

// ---- train-demo -----------------------------------------------------------

struct TrainDemoFlags {
  std::string problem = "quadratic";
  std::string config;
  std::string out;
  std::size_t dim = 5;
  std::uint64_t problem_seed = 0;
  std::vector<double> lambdas{0.1, 1.0, 10.0};
  double beta = 4.0;
  double p = kDefaultFraction;
};

// Demo defaults differ from the library defaults: the synthetic problems
// are small and well conditioned.
safetune::SpagConfig DemoConfig(const TrainDemoFlags& f, double problem_tau,
                                double eta_ft, std::size_t max_steps) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + f.config + "'");
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kInvalidConfig, e.what());
    }
    if (!j.is_object()) {
      throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
    }
  }
  // The generated problem supplies tau unless the config pins it.
  if (!j.contains("tau")) j["tau"] = problem_tau;
  if (!j.contains("eta_ft")) j["eta_ft"] = eta_ft;
  if (!j.contains("max_steps")) j["max_steps"] = max_steps;
  return safetune::SpagConfigFromJson(j);
}

void WriteDemoOutputs(const std::filesystem::path& dir, double tau,
                      const std::vector<safetune::bench::ComparisonRow>& rows) {
  {
    std::ofstream out = OpenOut((dir / "train_report.jsonl").string());
    safetune::WriteTrainReportJsonl(out, rows.front().report);
  }
  {
    std::ofstream out = OpenOut((dir / "comparison.csv").string());
    safetune::bench::WriteComparisonCsv(out, rows);
  }
  std::ostringstream table;
  safetune::bench::WriteComparisonTable(table, rows);
  {
    std::ofstream out = OpenOut((dir / "comparison.txt").string());
    out << table.str();
  }
  std::cout << "tau = " << tau << '\n' << table.str();
}

void MakeDir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError,
                "cannot create '" + dir.string() + "': " + ec.message());
  }
}

int RunTrainDemo(const TrainDemoFlags& f) {
  const std::filesystem::path dir(f.out);
  safetune::bench::ComparisonMethods methods;
  methods.penalty_lambdas = f.lambdas;
  if (f.problem == "quadratic") {
    const auto inst = safetune::bench::MakeQuadratic(f.dim, f.problem_seed);
    safetune::bench::ComparisonOptions opts;
    opts.spag = DemoConfig(f, inst.problem.tau, 1e-2, 5000);
    opts.methods = methods;
    const safetune::bench::QuadraticOracle u(inst.problem.utility);
    const safetune::bench::QuadraticOracle s(inst.problem.safety);
    const auto rows = safetune::bench::RunComparison(
        u, s, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.dim)), opts);
    MakeDir(dir);
    WriteDemoOutputs(dir, opts.spag.tau, rows);
    nlohmann::json opt;
    opt["tau"] = opts.spag.tau;
    opt["multiplier"] = inst.solution.multiplier;
    opt["constrained_utility"] = inst.solution.constrained_utility;
    opt["constrained_theta"] = std::vector<double>(
        inst.solution.constrained.data(),
        inst.solution.constrained.data() + inst.solution.constrained.size());
    WriteJsonFile((dir / "optimum.json").string(), opt);
    return kExitOk;
  }

  // logreg: poisoned fine-tuning set, safety subset picked by the DPP.
  const auto data = safetune::bench::MakePoisonedDataset(f.problem_seed);
  const safetune::bench::PoisonedConfig pc;
  safetune::bench::ComparisonOptions opts;
  opts.spag = DemoConfig(f, data.tau, 0.1, 2000);
  opts.methods = methods;
  MakeDir(dir);
  safetune::bench::WritePoisonedArtifacts(data, dir);
  const safetune::EmbeddingSet pool = safetune::bench::PoolEmbeddings(data);
  const safetune::RelevanceScores q = safetune::ComputeRelevance(
      pool, safetune::bench::FineTuneEmbeddings(data));
  const std::size_t k =
      safetune::bench::SubsetSizeFromFraction(f.p, data.fine_tune.size());
  const safetune::WeightedKernelView view(pool, q, f.beta);
  const safetune::SelectionResult sel = safetune::GreedySelect(view, k);
  WriteJsonFile((dir / "selection.json").string(),
                safetune::SelectionToJson(sel, pool.ids(), f.beta));
  const safetune::bench::LogisticOracle u(data.fine_tune, pc.utility_batch);
  const safetune::bench::LogisticOracle s(
      safetune::bench::SelectRows(data.safe_pool, sel.selected), pc.safety_batch);
  const auto rows = safetune::bench::RunComparison(u, s, data.theta0, opts);
  WriteDemoOutputs(dir, opts.spag.tau, rows);
  return kExitOk;
}

int ExitCodeFor(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kNonFiniteKernel:
    case ErrorCode::kNonFiniteGradient:
    case ErrorCode::kDegenerateGradient:
      return kExitNumerical;
    default:
      return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relevance-diversity safety subset selection and "
               "safety-projected training"};
  app.footer(kExitCodes);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  RelevanceFlags rf;
  CLI::App* rel = app.add_subcommand(
      "relevance", "Score each pool item by its best cosine match in the ft set");
  rel->add_option("--pool", rf.pool, "Candidate pool embeddings")->required();
  rel->add_option("--ft", rf.ft, "Fine-tuning set embeddings")->required();
  rel->add_option("--out", rf.out, "Output relevance jsonl {id, q}")->required();
  rel->add_option("--ft-cap", rf.ft_cap,
                  "Score against a uniform subsample of at most M ft rows "
                  "(0 = use all)")
      ->capture_default_str();
  rel->add_option("--ft-cap-seed", rf.ft_cap_seed, "Seed for --ft-cap")
      ->capture_default_str();
  AddInputFlags(rel, rf.input);
  rel->footer(kExitCodes);

  SelectFlags sf;
  CLI::App* sel = app.add_subcommand(
      "select", "Greedy relevance-diversity subset selection");
  sel->add_option("--pool", sf.pool, "Candidate pool embeddings")->required();
  sel->add_option("--ft", sf.ft,
                  "Fine-tuning set embeddings; relevance is computed from it "
                  "unless --relevance is given, and --p sizes the subset "
                  "from its row count");
  sel->add_option("--relevance", sf.relevance,
                  "Precomputed relevance jsonl (takes precedence over --ft "
                  "for scoring)");
  sel->add_option("--beta", sf.beta, "Relevance exponent")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  auto* sel_k = sel->add_option("--k", sf.k, "Subset size")
                    ->check(CLI::PositiveNumber);
  auto* sel_p = sel->add_option("--p", sf.p,
                                "Subset size as a fraction of the ft set, "
                                "k = ceil(p * |ft|); 0.03 when neither --k nor "
                                "--p is given")
                    ->check(CLI::Range(0.0, 1.0));
  sel_k->excludes(sel_p);
  sel_p->excludes(sel_k);
  sel->add_option("--eps", sf.eps, "Stop once the best gain is at or below this")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sel->add_option("--out", sf.out, "Output selection json")->required();
  AddInputFlags(sel, sf.input);
  sel->footer(kExitCodes);

  OracleFlags of;
  CLI::App* ora = app.add_subcommand(
      "oracle", "Exact size-k MAP subset by enumeration (pools of at most 20)");
  ora->add_option("--pool", of.pool, "Candidate pool embeddings")->required();
  ora->add_option("--k", of.k, "Subset size")->required()->check(CLI::PositiveNumber);
  ora->add_option("--beta", of.beta, "Relevance exponent")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  auto* ora_ft = ora->add_option("--ft", of.ft,
                                 "Fine-tuning set for relevance (default: all q = 1)");
  auto* ora_rel = ora->add_option("--relevance", of.relevance,
                                  "Precomputed relevance jsonl");
  ora_ft->excludes(ora_rel);
  ora_rel->excludes(ora_ft);
  ora->add_option("--out", of.out, "Output json (default: stdout)");
  AddInputFlags(ora, of.input);
  ora->footer(kExitCodes);

  TrainDemoFlags tf;
  CLI::App* demo = app.add_subcommand(
      "train-demo", "Compare safety-projected training with plain and penalty "
                    "descent on a synthetic problem");
  demo->add_option("--problem", tf.problem, "Synthetic problem")
      ->check(CLI::IsMember({"quadratic", "logreg"}))
      ->capture_default_str();
  demo->add_option("--config", tf.config,
                   "Training config json {eta_ft, tau, eta_safe, max_steps, "
                   "seed}; missing keys use demo defaults (quadratic: eta_ft "
                   "0.01, 5000 steps; logreg: eta_ft 0.1, 2000 steps; tau from "
                   "the generated problem; eta_safe = eta_ft)");
  demo->add_option("--out", tf.out,
                   "Output directory (train_report.jsonl, comparison.csv, "
                   "comparison.txt, plus problem artifacts)")
      ->required();
  demo->add_option("--dim", tf.dim, "Quadratic problem dimension")
      ->check(CLI::Range(std::size_t{1}, std::size_t{10000}))
      ->capture_default_str();
  demo->add_option("--problem-seed", tf.problem_seed, "Problem generator seed")
      ->capture_default_str();
  demo->add_option("--lambdas", tf.lambdas, "Penalty weights for the baseline rows")
      ->delimiter(',')
      ->capture_default_str();
  demo->add_option("--beta", tf.beta, "Relevance exponent (logreg)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  demo->add_option("--p", tf.p, "Safety subset fraction of the ft set (logreg)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  demo->footer(kExitCodes);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (rel->parsed()) return RunRelevance(rf);
    if (sel->parsed()) {
      if (sf.ft.empty() && sf.relevance.empty()) {
        throw Error(ErrorCode::kInvalidConfig, "one of --ft or --relevance is required");
      }
      return RunSelect(sf);
    }
    if (ora->parsed()) return RunOracle(of);
    if (demo->parsed()) return RunTrainDemo(tf);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCodeFor(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitUsage;
}
