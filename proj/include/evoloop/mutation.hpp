#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoloop/blame.hpp"
#include "evoloop/environment.hpp"
#include "evoloop/llm_gateway.hpp"
#include "evoloop/policy_model.hpp"
#include "evoloop/rollout.hpp"

namespace evoloop {

inline constexpr std::size_t kMaxSpecChars = 8000;

struct MutationProposal {
  ModuleKind target{ModuleKind::Planner};
  std::string error_mode;
  std::string edit_summary;
  std::string revised_spec;
  std::string feedback;
  std::vector<std::string> warnings;
};

struct MutatorOutput {
  ModuleKind target{ModuleKind::Planner};
  std::string error_mode;
  std::string edit_summary;
  std::string revised_spec;
  std::vector<std::string> warnings;
};

// Reads the four-section editor reply. When `requested` is given and section 1
// names another module, the requested module wins and a TargetMismatch
// warning is recorded. Throws MissingSection or UnknownTarget.
MutatorOutput parse_mutator_output(std::string_view text, std::optional<ModuleKind> requested = std::nullopt);

class Mutator {
 public:
  virtual ~Mutator() = default;
  virtual MutationProposal propose(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                                   std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame) = 0;
};

// Appends "RULE: <t>" for the first missing tag t of the failing subgoal's
// stage for `target`. Needs the suite to see each task's requirements.
class OracleMutator final : public Mutator {
 public:
  explicit OracleMutator(const TaskSuite& suite) : suite_(&suite) {}
  MutationProposal propose(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                           std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame) override;

 private:
  const TaskSuite* suite_;
};

class ModelMutator final : public Mutator {
 public:
  ModelMutator(LlmClient client, const TaskSuite* suite = nullptr) : client_(std::move(client)), suite_(suite) {}
  MutationProposal propose(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                           std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame) override;

  static std::string render_prompt(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                                   std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame,
                                   const TaskInstance* task);

 private:
  LlmClient client_;
  const TaskSuite* suite_;
};

MutationProposal generate_feedback(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                                   std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame,
                                   Mutator& mutator);

PolicyGenome build_child(const PolicyGenome& parent, const MutationProposal& proposal, int generation);

}  // namespace evoloop
