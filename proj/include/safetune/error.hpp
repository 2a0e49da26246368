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

#ifndef SAFETUNE_ERROR_HPP_
#define SAFETUNE_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace safetune {

enum class ErrorCode {
  kMalformedRecord,
  kDimensionMismatch,
  kDuplicateId,
  kEmptyFile,
  kZeroVector,
  kEmptyReferenceSet,
  kIndexOutOfRange,
  kPoolTooLarge,
  kInvalidK,
  kNonFiniteKernel,
  kTooLargeForExhaustive,
  kDuplicateIndex,
  kNonFiniteGradient,
  kDegenerateGradient,
  kInvalidConfig,
  kIoError,
};

constexpr std::string_view ToString(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kEmptyFile: return "EmptyFile";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEmptyReferenceSet: return "EmptyReferenceSet";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kPoolTooLarge: return "PoolTooLarge";
    case ErrorCode::kInvalidK: return "InvalidK";
    case ErrorCode::kNonFiniteKernel: return "NonFiniteKernel";
    case ErrorCode::kTooLargeForExhaustive: return "TooLargeForExhaustive";
    case ErrorCode::kDuplicateIndex: return "DuplicateIndex";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kDegenerateGradient: return "DegenerateGradient";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can map them onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ToString(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace safetune

#endif  // SAFETUNE_ERROR_HPP_
