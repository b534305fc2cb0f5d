// Copyright 2026 The RelBert Authors.
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relbert {

enum class ErrorCode {
  kParseError,
  kValidationError,
  kMissingTableFile,
  kHeaderMismatch,
  kRowArityError,
  kInvalidArgument,
  kTooFewRows,
  kSentenceTooLong,
  kShapeMismatch,
  kTargetOutOfRange,
  kNonScalarLoss,
  kUnknownSpace,
  kNoMaskedPositions,
  kMissingGradient,
  kNumericalDivergence,
  kDigestMismatch,
  kNoEligibleCells,
  kVocabularyMismatch,
  kNoLabelSpec,
  kIoError,
  kEmptyCorpus,
  kUnknownColumn,
  kCheckpointFormat,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kMissingTableFile: return "MissingTableFile";
    case ErrorCode::kHeaderMismatch: return "HeaderMismatch";
    case ErrorCode::kRowArityError: return "RowArityError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kTooFewRows: return "TooFewRows";
    case ErrorCode::kSentenceTooLong: return "SentenceTooLong";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kTargetOutOfRange: return "TargetOutOfRange";
    case ErrorCode::kNonScalarLoss: return "NonScalarLoss";
    case ErrorCode::kUnknownSpace: return "UnknownSpace";
    case ErrorCode::kNoMaskedPositions: return "NoMaskedPositions";
    case ErrorCode::kMissingGradient: return "MissingGradient";
    case ErrorCode::kNumericalDivergence: return "NumericalDivergence";
    case ErrorCode::kDigestMismatch: return "DigestMismatch";
    case ErrorCode::kNoEligibleCells: return "NoEligibleCells";
    case ErrorCode::kVocabularyMismatch: return "VocabularyMismatch";
    case ErrorCode::kNoLabelSpec: return "NoLabelSpec";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kUnknownColumn: return "UnknownColumn";
    case ErrorCode::kCheckpointFormat: return "CheckpointFormat";
  }
  return "Unknown";
}

// Every failure the library reports. The message names the offending entity.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Process exit codes: 2 input validation, 3 state mismatch, 4 divergence.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDigestMismatch:
    case ErrorCode::kVocabularyMismatch:
    case ErrorCode::kCheckpointFormat:
      return 3;
    case ErrorCode::kNumericalDivergence:
      return 4;
    default:
      return 2;
  }
}

}  // namespace relbert
