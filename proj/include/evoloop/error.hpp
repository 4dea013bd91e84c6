#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evoloop {

enum class ErrorCode {
  MissingModule,
  EmptySpec,
  NoOpEdit,
  ParseError,
  OverlappingSplits,
  EmptySplit,
  OutOfRangeStageCount,
  RuntimeFailure,
  EmptyBatch,
  EmptyTrajectory,
  NoFailureEvidence,
  BlamerOutputUnparseable,
  MissingSection,
  MissingScore,
  NonNumericScore,
  NoMissingTag,
  MutatorOutputUnparseable,
  UnknownTarget,
  TargetMismatch,
  EmptyPopulation,
  UnnormalizedWeights,
  EmptySelectionSet,
  CassetteMiss,
  TransportError,
  BudgetExceeded,
  UnboundSlot,
  UnknownCommand,
  ConfigError,
  IoError,
  SchemaVersionMismatch,
  IncompleteLogs,
};

std::string_view error_name(ErrorCode code);

// Every failure raised by the library carries one of the typed codes above;
// the CLI prints error_name(code()) on stderr.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace evoloop
