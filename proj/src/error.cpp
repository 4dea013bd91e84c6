#include "evoloop/error.hpp"

namespace evoloop {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingModule: return "MissingModule";
    case ErrorCode::EmptySpec: return "EmptySpec";
    case ErrorCode::NoOpEdit: return "NoOpEdit";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::OverlappingSplits: return "OverlappingSplits";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::OutOfRangeStageCount: return "OutOfRangeStageCount";
    case ErrorCode::RuntimeFailure: return "RuntimeFailure";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::NoFailureEvidence: return "NoFailureEvidence";
    case ErrorCode::BlamerOutputUnparseable: return "BlamerOutputUnparseable";
    case ErrorCode::MissingSection: return "MissingSection";
    case ErrorCode::MissingScore: return "MissingScore";
    case ErrorCode::NonNumericScore: return "NonNumericScore";
    case ErrorCode::NoMissingTag: return "NoMissingTag";
    case ErrorCode::MutatorOutputUnparseable: return "MutatorOutputUnparseable";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::TargetMismatch: return "TargetMismatch";
    case ErrorCode::EmptyPopulation: return "EmptyPopulation";
    case ErrorCode::UnnormalizedWeights: return "UnnormalizedWeights";
    case ErrorCode::EmptySelectionSet: return "EmptySelectionSet";
    case ErrorCode::CassetteMiss: return "CassetteMiss";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::UnboundSlot: return "UnboundSlot";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::IncompleteLogs: return "IncompleteLogs";
  }
  return "Unknown";
}

}  // namespace evoloop
