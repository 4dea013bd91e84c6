#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoloop/policy_model.hpp"

namespace evoloop {

enum class OutcomeFlag { Ok, Empty, SchemaViolation, ExecError, WrongTool, Ungrounded };

std::string_view flag_name(OutcomeFlag flag);
OutcomeFlag parse_flag_name(std::string_view name);

struct Observation {
  int step_index{0};
  std::string payload;
  std::set<OutcomeFlag> outcome_flags;

  bool ok() const { return outcome_flags.count(OutcomeFlag::Ok) > 0; }
  bool operator==(const Observation&) const = default;
};

enum class ValueKind { String, Number, Boolean, Enum };

struct ParamSchema {
  ValueKind kind{ValueKind::String};
  std::vector<std::string> allowed;  // only for Enum

  bool operator==(const ParamSchema&) const = default;
};

struct ToolDef {
  std::string name;
  std::map<std::string, ParamSchema> argument_schema;
  std::string documentation;

  bool operator==(const ToolDef&) const = default;
};

// Empty result means the arguments conform; otherwise one message per problem.
std::vector<std::string> validate_arguments(const ToolDef& tool, const nlohmann::json& args);

// Schema-conforming placeholder arguments for a tool.
nlohmann::json placeholder_arguments(const ToolDef& tool);

std::vector<ToolDef> parse_tool_suite(const nlohmann::json& j);
// Inverse of one parse_tool_suite element.
nlohmann::json tool_to_json(const ToolDef& tool);
std::vector<ToolDef> load_tool_suite(const std::filesystem::path& path);

using StageKey = std::pair<int, ModuleKind>;  // (subgoal index, module)
using SkillMap = std::map<StageKey, std::set<std::string>>;

struct TaskInstance {
  std::string id;
  std::string instruction;
  int num_subgoals{1};
  std::string gold_answer;
  SkillMap required_skills;
  // Tags whose presence makes the stage fail; used to build suites with
  // mutually exclusive specialist skills.
  SkillMap forbidden_skills;

  bool operator==(const TaskInstance&) const = default;
};

struct TaskSuite {
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> selection;

  bool operator==(const TaskSuite&) const = default;
  const TaskInstance* find(std::string_view id) const;
};

TaskSuite parse_task_suite(const nlohmann::json& j);
TaskSuite load_task_suite(const std::filesystem::path& path);
nlohmann::json task_to_json(const TaskInstance& task);

// Tokens t such that some line, trimmed, is exactly "RULE: t" (any run of
// spaces after the colon) with t free of internal whitespace.
std::set<std::string> scripted_tags(std::string_view spec_text);

// Graded prefix reward: stages_passed / (4 * num_subgoals); a full pass also
// needs the gold answer inside final_answer, otherwise one stage is withheld.
double score(const TaskInstance& task, const std::string& final_answer, int stages_passed);

// What one module produced for one stage.
struct StageOutput {
  std::string text;
  std::set<std::string> tags;
  nlohmann::json arguments = nlohmann::json::object();  // caller stage only
};

struct StageCheck {
  bool passed{false};
  OutcomeFlag flag{OutcomeFlag::Ok};
  std::string payload;
  std::vector<std::string> missing_tags;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual ToolDef tool_for(const TaskInstance& task, int subgoal) const = 0;
  virtual StageCheck check_stage(const TaskInstance& task, int subgoal, ModuleKind module,
                                 const StageOutput& output) const = 0;
  virtual double score(const TaskInstance& task, const std::string& final_answer,
                       int stages_passed) const = 0;
  // Backend tag used to key evaluation caches.
  virtual std::string name() const = 0;
};

// Stage (g, m) passes iff required_skills[(g, m)] is a subset of the output's
// tags and no forbidden tag is present. Stateless; safe to share.
class ScriptedEnvironment final : public Environment {
 public:
  explicit ScriptedEnvironment(std::vector<ToolDef> tools = {}) : tools_(std::move(tools)) {}

  ToolDef tool_for(const TaskInstance& task, int subgoal) const override;
  StageCheck check_stage(const TaskInstance& task, int subgoal, ModuleKind module,
                         const StageOutput& output) const override;
  double score(const TaskInstance& task, const std::string& final_answer,
               int stages_passed) const override {
    return evoloop::score(task, final_answer, stages_passed);
  }
  std::string name() const override { return "scripted"; }

  // The flag a failing stage of this module records.
  static OutcomeFlag failure_flag(ModuleKind module);
  // Sorted required tags of the stage absent from `tags`.
  static std::vector<std::string> missing_tags(const TaskInstance& task, int subgoal,
                                               ModuleKind module,
                                               const std::set<std::string>& tags);

 private:
  std::vector<ToolDef> tools_;
};

}  // namespace evoloop
