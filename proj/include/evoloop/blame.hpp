#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoloop/environment.hpp"
#include "evoloop/llm_gateway.hpp"
#include "evoloop/rollout.hpp"

namespace evoloop {

enum class EventKind { ToolChoiceOutcome, ArgumentValidity, ExecutionOutcome, SynthesisGrounding };
enum class Verdict { Pass, Fail };

std::string_view event_kind_name(EventKind kind);

struct DiagnosticEvent {
  int step_index{0};
  ModuleKind module{ModuleKind::Planner};
  EventKind kind{EventKind::ExecutionOutcome};
  Verdict verdict{Verdict::Pass};
  std::string detail;

  bool operator==(const DiagnosticEvent&) const = default;
};

// Indexed by pipeline_index().
using ModuleScores = std::array<double, 4>;

struct BlameReport {
  ModuleScores scores{};
  ModuleKind target{ModuleKind::Planner};
  std::vector<std::string> evidence;
  std::string diagnosis;
  bool fallback{false};               // heuristic target after an unparseable blamer reply
  std::vector<std::string> warnings;  // e.g. clamped scores
};

nlohmann::json blame_report_to_json(const BlameReport& report);

// One event per stage step; FINISH steps produce none.
std::vector<DiagnosticEvent> extract_diagnostics(const Trajectory& trajectory);
std::string render_events(std::span<const DiagnosticEvent> events);

// Highest score; ties go to the earliest pipeline stage.
ModuleKind argmax_target(const ModuleScores& scores);

struct BlamerOutput {
  ModuleScores scores{};
  std::vector<std::string> evidence;
  std::string diagnosis;
  std::vector<std::string> warnings;
};

// Reads the "1. Scores / 2. Evidence / 3. One sentence diagnosis" reply.
// Scores may sit on one line or several. Negative scores clamp to 0; if any
// score exceeds 1, all scores are divided by the largest so it lands on 1 and
// the ranking is preserved.
BlamerOutput parse_blamer_output(std::string_view text);

class Blamer {
 public:
  virtual ~Blamer() = default;
  virtual BlameReport blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                            const TaskInstance* task) = 0;
};

// Blames the module of the earliest FAIL event with score 1.
class OracleBlamer final : public Blamer {
 public:
  BlameReport blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                    const TaskInstance* task) override;
};

// Uniformly random target; the ablation baseline.
class RandomBlamer final : public Blamer {
 public:
  explicit RandomBlamer(std::uint64_t seed) : rng_(seed) {}
  BlameReport blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                    const TaskInstance* task) override;

 private:
  std::mt19937_64 rng_;
};

class ModelBlamer final : public Blamer {
 public:
  explicit ModelBlamer(LlmClient client) : client_(std::move(client)) {}
  BlameReport blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                    const TaskInstance* task) override;

  static std::string render_prompt(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                                   const TaskInstance* task);

 private:
  LlmClient client_;
};

// Precondition: episode.reward < 1 (throws std::invalid_argument otherwise).
BlameReport assign_blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                         Blamer& blamer, const TaskInstance* task = nullptr);

// Index of the lowest-reward episode (earliest on ties); nullopt when every
// reward is 1. Throws EmptyBatch.
std::optional<std::size_t> select_blame_episode(std::span<const EpisodeRecord> episodes);

// Module of the earliest FAIL event, if any.
std::optional<ModuleKind> first_failing_module(std::span<const DiagnosticEvent> diagnostics);

}  // namespace evoloop
