#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqrec {

// Coarse failure classes. The CLI prints the category as the first token of
// its single-line error message so scripts can dispatch on it.
enum class ErrorCategory {
  kIo,
  kIngest,
  kConfig,
  kData,
  kModel,
  kParameter,
  kCheckpoint,
  kContract,
};

constexpr std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kIngest: return "ingest";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kData: return "data";
    case ErrorCategory::kModel: return "model";
    case ErrorCategory::kParameter: return "parameter";
    case ErrorCategory::kCheckpoint: return "checkpoint";
    case ErrorCategory::kContract: return "contract";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace seqrec
