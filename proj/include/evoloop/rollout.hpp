#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoloop/environment.hpp"
#include "evoloop/llm_gateway.hpp"
#include "evoloop/policy_model.hpp"

namespace evoloop {

enum class ActionKind { Reason, ToolCall, Finish };

struct Action {
  ActionKind kind{ActionKind::Reason};
  std::string text;  // reasoning text or final answer
  std::string tool;
  nlohmann::json arguments = nlohmann::json::object();

  static Action reason(std::string text) { return {ActionKind::Reason, std::move(text), {}, nlohmann::json::object()}; }
  static Action tool_call(std::string tool, nlohmann::json args) {
    return {ActionKind::ToolCall, {}, std::move(tool), std::move(args)};
  }
  static Action finish(std::string answer) { return {ActionKind::Finish, std::move(answer), {}, nlohmann::json::object()}; }

  bool operator==(const Action&) const = default;
};

// Every stage step carries the observation of its stage check (including
// REASON steps); FINISH never does.
struct Step {
  int index{0};
  std::string state_summary;
  Action action;
  std::optional<Observation> observation;
  ModuleKind acting_module{ModuleKind::Planner};

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::vector<Step> steps;

  int length() const { return static_cast<int>(steps.size()); }
  bool operator==(const Trajectory&) const = default;
};

struct EpisodeRecord {
  std::string task_id;
  std::string genome_id;
  Trajectory trajectory;
  std::string final_answer;
  double reward{0.0};
  int stages_passed{0};

  bool operator==(const EpisodeRecord&) const = default;
};

struct StageContext {
  const TaskInstance& task;
  int subgoal;
  ModuleKind module;
  const ToolDef& tool;
  // Tool outputs observed so far in this episode.
  const std::vector<std::string>& history;
};

// One stage = (spec text, stage context) -> stage output.
class ModuleRuntime {
 public:
  virtual ~ModuleRuntime() = default;
  virtual StageOutput run_stage(const std::string& spec_text, const StageContext& ctx) const = 0;
};

// Exhibits exactly the RULE tags of the spec text; answers by quoting the
// tool outputs it has seen.
class ScriptedRuntime final : public ModuleRuntime {
 public:
  StageOutput run_stage(const std::string& spec_text, const StageContext& ctx) const override;
};

// Sends the spec text as the system message of each stage call and reads the
// stage's exhibited rules back from the reply.
class ModelRuntime final : public ModuleRuntime {
 public:
  explicit ModelRuntime(LlmClient client) : client_(std::move(client)) {}
  StageOutput run_stage(const std::string& spec_text, const StageContext& ctx) const override;

 private:
  LlmClient client_;
};

struct ExecutorOptions {
  // Unset: the pipeline bound 4 * num_subgoals + 1 applies.
  std::optional<int> max_steps;
};

inline constexpr int kDefaultModelMaxSteps = 25;

EpisodeRecord execute_episode(const PolicyGenome& genome, const TaskInstance& task,
                              const Environment& env, const ModuleRuntime& runtime,
                              const ExecutorOptions& options = {});

struct BatchResult {
  double mean_reward{0.0};
  std::vector<EpisodeRecord> episodes;
};

// Throws EmptyBatch for an empty task list. Episodes keep task order.
BatchResult evaluate_batch(const PolicyGenome& genome, std::span<const TaskInstance> tasks,
                           const Environment& env, const ModuleRuntime& runtime,
                           const ExecutorOptions& options = {});

double mean_reward(std::span<const EpisodeRecord> episodes);

nlohmann::json episode_to_json(const EpisodeRecord& episode);
EpisodeRecord episode_from_json(const nlohmann::json& j);
// Plain-text rendering used in blamer and mutator prompts.
std::string render_trajectory(const Trajectory& trajectory);

}  // namespace evoloop
