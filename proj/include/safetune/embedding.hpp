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

// Embedding ingestion: validated containers for candidate / reference
// embeddings, file readers and writers, mean pooling over token states.

#ifndef SAFETUNE_EMBEDDING_HPP_
#define SAFETUNE_EMBEDDING_HPP_

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "safetune/error.hpp"

namespace safetune {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Norms at or below this are treated as zero by Normalize / CosineSim.
inline constexpr double kZeroNormThreshold = 1e-15;

// N x d block of finite embeddings with unique string ids, one row per id.
class EmbeddingSet {
 public:
  EmbeddingSet(std::vector<std::string> ids, RowMatrix vectors)
      : ids_(std::move(ids)), vectors_(std::move(vectors)) {
    if (vectors_.cols() < 1) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "embedding dimension must be at least 1");
    }
    if (static_cast<Eigen::Index>(ids_.size()) != vectors_.rows()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "id count " + std::to_string(ids_.size()) +
                      " does not match row count " +
                      std::to_string(vectors_.rows()));
    }
    std::unordered_set<std::string> seen;
    seen.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!seen.insert(ids_[i]).second) {
        throw Error(ErrorCode::kDuplicateId, "duplicate id '" + ids_[i] + "'");
      }
      if (!vectors_.row(static_cast<Eigen::Index>(i)).allFinite()) {
        throw Error(ErrorCode::kMalformedRecord,
                    "non-finite component in '" + ids_[i] + "'");
      }
    }
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
  bool empty() const { return ids_.empty(); }

  const std::vector<std::string>& ids() const { return ids_; }
  const RowMatrix& vectors() const { return vectors_; }
  auto row(std::size_t i) const {
    return vectors_.row(static_cast<Eigen::Index>(i));
  }

  // Copy restricted to `indices`, in the given order.
  EmbeddingSet Subset(const std::vector<std::size_t>& indices) const {
    std::vector<std::string> ids;
    ids.reserve(indices.size());
    RowMatrix rows(static_cast<Eigen::Index>(indices.size()), vectors_.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] >= size()) {
        throw Error(ErrorCode::kIndexOutOfRange,
                    "subset index " + std::to_string(indices[r]));
      }
      ids.push_back(ids_[indices[r]]);
      rows.row(static_cast<Eigen::Index>(r)) = row(indices[r]);
    }
    return EmbeddingSet(std::move(ids), std::move(rows));
  }

 private:
  std::vector<std::string> ids_;
  RowMatrix vectors_;
};

// T x d hidden states of one input sequence (row t is position t).
class TokenStates {
 public:
  explicit TokenStates(RowMatrix states) : states_(std::move(states)) {
    if (states_.rows() < 1) {
      throw Error(ErrorCode::kMalformedRecord,
                  "token states need at least one position");
    }
    if (states_.cols() < 1) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "token state dimension must be at least 1");
    }
    if (!states_.allFinite()) {
      throw Error(ErrorCode::kMalformedRecord, "non-finite token state");
    }
  }

  const RowMatrix& states() const { return states_; }
  std::size_t length() const { return static_cast<std::size_t>(states_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(states_.cols()); }

 private:
  RowMatrix states_;
};

/// Sequence embedding as the average of all token positions.
inline Eigen::VectorXd MeanPool(const TokenStates& ts) {
  const RowMatrix& s = ts.states();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(s.cols());
  for (Eigen::Index t = 0; t < s.rows(); ++t) out += s.row(t).transpose();
  return out / static_cast<double>(s.rows());
}

inline Eigen::VectorXd Normalize(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double norm = v.norm();
  if (!(norm > kZeroNormThreshold)) {
    throw Error(ErrorCode::kZeroVector, "cannot normalize a zero vector");
  }
  return v / norm;
}

enum class EmbeddingFormat { kJsonl, kCsv };

inline EmbeddingFormat FormatFromPath(std::string_view path) {
  constexpr std::string_view kCsvSuffix = ".csv";
  if (path.size() >= kCsvSuffix.size() &&
      path.substr(path.size() - kCsvSuffix.size()) == kCsvSuffix) {
    return EmbeddingFormat::kCsv;
  }
  return EmbeddingFormat::kJsonl;
}

struct LoadOptions {
  // Scale every row to unit length after parsing.
  bool normalize = true;
  // Accept `token_states` records and mean-pool them (jsonl only).
  bool mean_pool_tokens = false;
};

namespace internal {

inline bool IsBlank(std::string_view line) {
  return line.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

inline std::string LineTag(std::size_t line_no) {
  return "line " + std::to_string(line_no);
}

inline std::vector<double> ParseNumberArray(const nlohmann::json& arr,
                                            std::size_t line_no) {
  if (!arr.is_array()) {
    throw Error(ErrorCode::kMalformedRecord,
                LineTag(line_no) + ": expected an array of numbers");
  }
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& x : arr) {
    if (!x.is_number()) {
      throw Error(ErrorCode::kMalformedRecord,
                  LineTag(line_no) + ": non-numeric component");
    }
    const double v = x.get<double>();
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kMalformedRecord,
                  LineTag(line_no) + ": non-finite component");
    }
    out.push_back(v);
  }
  return out;
}

inline EmbeddingSet Assemble(std::vector<std::string> ids,
                             const std::vector<std::vector<double>>& rows,
                             std::size_t dim, const LoadOptions& options) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()),
              static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Eigen::Map<const Eigen::VectorXd> v(rows[r].data(),
                                        static_cast<Eigen::Index>(dim));
    if (options.normalize) {
      const double norm = v.norm();
      if (!(norm > kZeroNormThreshold)) {
        throw Error(ErrorCode::kZeroVector,
                    "cannot normalize zero embedding '" + ids[r] + "'");
      }
      m.row(static_cast<Eigen::Index>(r)) = (v / norm).transpose();
    } else {
      m.row(static_cast<Eigen::Index>(r)) = v.transpose();
    }
  }
  return EmbeddingSet(std::move(ids), std::move(m));
}

// Tracks the common dimension and duplicate ids while streaming records.
class RecordCollector {
 public:
  void Add(std::string id, std::vector<double> row) {
    if (!seen_.insert(id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate id '" + id + "'");
    }
    if (rows_.empty()) {
      dim_ = row.size();
    } else if (row.size() != dim_) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "record '" + id + "' has dimension " +
                      std::to_string(row.size()) + ", expected " +
                      std::to_string(dim_));
    }
    ids_.push_back(std::move(id));
    rows_.push_back(std::move(row));
  }

  EmbeddingSet Finish(const LoadOptions& options) && {
    if (rows_.empty()) throw Error(ErrorCode::kEmptyFile, "no records found");
    if (dim_ == 0) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "embedding dimension must be at least 1");
    }
    return Assemble(std::move(ids_), rows_, dim_, options);
  }

 private:
  std::unordered_set<std::string> seen_;
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> rows_;
  std::size_t dim_ = 0;
};

}  // namespace internal

inline EmbeddingSet ParseEmbeddingsJsonl(std::istream& in,
                                         const LoadOptions& options = {}) {
  internal::RecordCollector collector;
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
        !record["id"].is_string()) {
      throw Error(ErrorCode::kMalformedRecord,
                  internal::LineTag(line_no) + ": missing string field 'id'");
    }
    std::string id = record["id"].get<std::string>();
    std::vector<double> row;
    if (record.contains("embedding")) {
      row = internal::ParseNumberArray(record["embedding"], line_no);
    } else if (record.contains("token_states")) {
      if (!options.mean_pool_tokens) {
        throw Error(ErrorCode::kMalformedRecord,
                    internal::LineTag(line_no) +
                        ": token_states record requires mean pooling");
      }
      const auto& states = record["token_states"];
      if (!states.is_array() || states.empty()) {
        throw Error(ErrorCode::kMalformedRecord,
                    internal::LineTag(line_no) +
                        ": token_states must be a non-empty array");
      }
      std::vector<std::vector<double>> positions;
      for (const auto& s : states) {
        positions.push_back(internal::ParseNumberArray(s, line_no));
        if (positions.back().size() != positions.front().size()) {
          throw Error(ErrorCode::kDimensionMismatch,
                      "record '" + id + "' has ragged token states");
        }
      }
      RowMatrix m(static_cast<Eigen::Index>(positions.size()),
                  static_cast<Eigen::Index>(positions.front().size()));
      for (std::size_t t = 0; t < positions.size(); ++t) {
        for (std::size_t j = 0; j < positions[t].size(); ++j) {
          m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
              positions[t][j];
        }
      }
      const Eigen::VectorXd pooled = MeanPool(TokenStates(std::move(m)));
      row.assign(pooled.data(), pooled.data() + pooled.size());
    } else {
      throw Error(ErrorCode::kMalformedRecord,
                  internal::LineTag(line_no) +
                      ": expected 'embedding' or 'token_states'");
    }
    collector.Add(std::move(id), std::move(row));
  }
  return std::move(collector).Finish(options);
}

// Header `id,e0,...,e{d-1}`, one vector per row. Ids may not contain commas.
inline EmbeddingSet ParseEmbeddingsCsv(std::istream& in,
                                       const LoadOptions& options = {}) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t header_dim = 0;
  bool have_header = false;
  internal::RecordCollector collector;
  while (std::getline(in, line)) {
    ++line_no;
    if (internal::IsBlank(line)) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!have_header) {
      if (fields.empty() || fields[0] != "id") {
        throw Error(ErrorCode::kMalformedRecord,
                    internal::LineTag(line_no) + ": header must start with 'id'");
      }
      for (std::size_t j = 1; j < fields.size(); ++j) {
        if (fields[j] != "e" + std::to_string(j - 1)) {
          throw Error(ErrorCode::kMalformedRecord,
                      internal::LineTag(line_no) + ": expected column e" +
                          std::to_string(j - 1));
        }
      }
      header_dim = fields.size() - 1;
      have_header = true;
      continue;
    }
    if (fields.size() != header_dim + 1) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "record '" + std::string(fields[0]) + "' has " +
                      std::to_string(fields.size() - 1) +
                      " components, header declares " +
                      std::to_string(header_dim));
    }
    std::vector<double> row(header_dim);
    for (std::size_t j = 0; j < header_dim; ++j) {
      const std::string_view f = fields[j + 1];
      const char* end = f.data() + f.size();
      auto [ptr, ec] = std::from_chars(f.data(), end, row[j]);
      if (ec != std::errc() || ptr != end || !std::isfinite(row[j])) {
        throw Error(ErrorCode::kMalformedRecord,
                    internal::LineTag(line_no) + ": bad number '" +
                        std::string(f) + "'");
      }
    }
    collector.Add(std::string(fields[0]), std::move(row));
  }
  if (!have_header) throw Error(ErrorCode::kEmptyFile, "no header found");
  return std::move(collector).Finish(options);
}

inline EmbeddingSet LoadEmbeddings(const std::string& path,
                                   EmbeddingFormat format,
                                   const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path + "'");
  if (format == EmbeddingFormat::kCsv) {
    if (options.mean_pool_tokens) {
      throw Error(ErrorCode::kMalformedRecord,
                  "token states are only supported in jsonl files");
    }
    return ParseEmbeddingsCsv(in, options);
  }
  return ParseEmbeddingsJsonl(in, options);
}

inline EmbeddingSet LoadEmbeddings(const std::string& path,
                                   const LoadOptions& options = {}) {
  return LoadEmbeddings(path, FormatFromPath(path), options);
}

// Shortest round-trip number formatting, so a reload is bit-exact.
inline void WriteEmbeddingsJsonl(std::ostream& out, const EmbeddingSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    nlohmann::json record;
    record["id"] = set.ids()[i];
    auto row = set.row(i);
    record["embedding"] = std::vector<double>(row.begin(), row.end());
    out << record.dump() << '\n';
  }
}

inline void WriteEmbeddingsCsv(std::ostream& out, const EmbeddingSet& set) {
  out << "id";
  for (std::size_t j = 0; j < set.dim(); ++j) out << ",e" << j;
  out << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.ids()[i];
    for (std::size_t j = 0; j < set.dim(); ++j) {
      char buf[32];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf),
                                     set.row(i)(static_cast<Eigen::Index>(j)));
      out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

inline void SaveEmbeddings(const std::string& path, const EmbeddingSet& set,
                           EmbeddingFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path + "'");
  if (format == EmbeddingFormat::kCsv) {
    WriteEmbeddingsCsv(out, set);
  } else {
    WriteEmbeddingsJsonl(out, set);
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for '" + path + "'");
}

}  // namespace safetune

#endif  // SAFETUNE_EMBEDDING_HPP_
