#include "evoloop/rollout.hpp"

#include <algorithm>
#include <sstream>

#include "evoloop/error.hpp"
#include "evoloop/prompts.hpp"

namespace evoloop {
namespace {

using nlohmann::json;

std::string_view action_kind_name(ActionKind kind) {
  switch (kind) {
    case ActionKind::Reason: return "REASON";
    case ActionKind::ToolCall: return "TOOL_CALL";
    case ActionKind::Finish: return "FINISH";
  }
  return "REASON";
}

json action_to_json(const Action& a) {
  json j{{"type", std::string(action_kind_name(a.kind))}};
  switch (a.kind) {
    case ActionKind::Reason: j["text"] = a.text; break;
    case ActionKind::ToolCall:
      j["tool"] = a.tool;
      j["arguments"] = a.arguments;
      break;
    case ActionKind::Finish: j["answer"] = a.text; break;
  }
  return j;
}

Action action_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "REASON") return Action::reason(j.at("text").get<std::string>());
  if (type == "TOOL_CALL") return Action::tool_call(j.at("tool").get<std::string>(), j.at("arguments"));
  if (type == "FINISH") return Action::finish(j.at("answer").get<std::string>());
  throw Error(ErrorCode::ParseError, "unknown action type '" + type + "'");
}

json observation_to_json(const Observation& o) {
  json flags = json::array();
  for (auto f : o.outcome_flags) flags.push_back(std::string(flag_name(f)));
  return {{"step_index", o.step_index}, {"payload", o.payload}, {"outcome_flags", flags}};
}

Observation observation_from_json(const json& j) {
  Observation o;
  o.step_index = j.at("step_index").get<int>();
  o.payload = j.at("payload").get<std::string>();
  for (const auto& f : j.at("outcome_flags")) o.outcome_flags.insert(parse_flag_name(f.get<std::string>()));
  return o;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

Action stage_action(ModuleKind module, const StageOutput& output, const ToolDef& tool) {
  if (module == ModuleKind::Caller) return Action::tool_call(tool.name, output.arguments);
  return Action::reason(output.text);
}

}  // namespace

StageOutput ScriptedRuntime::run_stage(const std::string& spec_text, const StageContext& ctx) const {
  StageOutput out;
  out.tags = scripted_tags(spec_text);
  const std::string where = "subgoal " + std::to_string(ctx.subgoal + 1) + " of " +
                            std::to_string(ctx.task.num_subgoals);
  switch (ctx.module) {
    case ModuleKind::Planner: out.text = "plan " + where + ": " + ctx.task.instruction; break;
    case ModuleKind::Selector: out.text = "select " + ctx.tool.name + " for " + where; break;
    case ModuleKind::Caller:
      out.text = "call " + ctx.tool.name;
      out.arguments = placeholder_arguments(ctx.tool);
      break;
    case ModuleKind::Synthesizer: out.text = "answer: " + join(ctx.history, "; "); break;
  }
  return out;
}

EpisodeRecord execute_episode(const PolicyGenome& genome, const TaskInstance& task,
                              const Environment& env, const ModuleRuntime& runtime,
                              const ExecutorOptions& options) {
  EpisodeRecord record;
  record.task_id = task.id;
  record.genome_id = genome.id();

  const int pipeline_cap = 4 * task.num_subgoals + 1;
  const int cap = options.max_steps ? std::min(pipeline_cap, std::max(1, *options.max_steps)) : pipeline_cap;

  auto& steps = record.trajectory.steps;
  std::vector<std::string> history;
  std::string answer;
  bool runtime_failed = false;
  bool truncated = false;

  for (int g = 0; g < task.num_subgoals && !truncated; ++g) {
    const ToolDef tool = env.tool_for(task, g);
    for (ModuleKind module : kAllModules) {
      const int index = static_cast<int>(steps.size());
      if (index >= cap - 1) {
        // Budget exhausted before the pipeline finished.
        steps.push_back({index, "step budget exhausted", Action::finish(""), std::nullopt,
                         ModuleKind::Synthesizer});
        answer.clear();
        truncated = true;
        break;
      }
      const std::string summary = "subgoal " + std::to_string(g) + " stage " + std::string(module_name(module));
      StageContext ctx{task, g, module, tool, history};
      StageOutput output;
      try {
        output = runtime.run_stage(genome.text(module), ctx);
      } catch (const std::exception& e) {
        steps.push_back({index, summary, Action::reason(""),
                         Observation{index, std::string("runtime failure: ") + e.what(), {OutcomeFlag::ExecError}},
                         module});
        runtime_failed = true;
        truncated = true;
        break;
      }
      const StageCheck check = env.check_stage(task, g, module, output);
      steps.push_back({index, summary, stage_action(module, output, tool),
                       Observation{index, check.payload, {check.flag}}, module});
      if (!check.passed) {
        truncated = true;
        break;
      }
      ++record.stages_passed;
      if (module == ModuleKind::Caller) history.push_back(check.payload);
      if (module == ModuleKind::Synthesizer) answer = output.text;
    }
  }

  if (!truncated) {
    const int index = static_cast<int>(steps.size());
    steps.push_back({index, "done", Action::finish(answer), std::nullopt, ModuleKind::Synthesizer});
  }
  const bool finished = !steps.empty() && steps.back().action.kind == ActionKind::Finish;
  record.final_answer = finished ? answer : std::string();
  record.reward = runtime_failed ? 0.0 : env.score(task, record.final_answer, record.stages_passed);
  return record;
}

double mean_reward(std::span<const EpisodeRecord> episodes) {
  if (episodes.empty()) throw Error(ErrorCode::EmptyBatch, "no episodes");
  double sum = 0.0;
  for (const auto& e : episodes) sum += e.reward;
  return sum / static_cast<double>(episodes.size());
}

BatchResult evaluate_batch(const PolicyGenome& genome, std::span<const TaskInstance> tasks,
                           const Environment& env, const ModuleRuntime& runtime,
                           const ExecutorOptions& options) {
  if (tasks.empty()) throw Error(ErrorCode::EmptyBatch, "evaluate_batch needs at least one task");
  BatchResult result;
  result.episodes.reserve(tasks.size());
  for (const auto& task : tasks) result.episodes.push_back(execute_episode(genome, task, env, runtime, options));
  result.mean_reward = mean_reward(result.episodes);
  return result;
}

json episode_to_json(const EpisodeRecord& e) {
  json steps = json::array();
  for (const auto& s : e.trajectory.steps) {
    steps.push_back({{"index", s.index},
                     {"acting_module", std::string(module_name(s.acting_module))},
                     {"state_summary", s.state_summary},
                     {"action", action_to_json(s.action)},
                     {"observation", s.observation ? observation_to_json(*s.observation) : json(nullptr)}});
  }
  return {{"task_id", e.task_id},     {"genome_id", e.genome_id},         {"reward", e.reward},
          {"final_answer", e.final_answer}, {"stages_passed", e.stages_passed}, {"steps", steps}};
}

EpisodeRecord episode_from_json(const json& j) {
  try {
    EpisodeRecord e;
    e.task_id = j.at("task_id").get<std::string>();
    e.genome_id = j.at("genome_id").get<std::string>();
    e.reward = j.at("reward").get<double>();
    e.final_answer = j.at("final_answer").get<std::string>();
    e.stages_passed = j.value("stages_passed", 0);
    for (const auto& s : j.at("steps")) {
      Step step;
      step.index = s.at("index").get<int>();
      auto module = parse_module_name(s.at("acting_module").get<std::string>());
      if (!module) throw Error(ErrorCode::ParseError, "unknown acting_module");
      step.acting_module = *module;
      step.state_summary = s.value("state_summary", "");
      step.action = action_from_json(s.at("action"));
      if (!s.at("observation").is_null()) step.observation = observation_from_json(s.at("observation"));
      e.trajectory.steps.push_back(std::move(step));
    }
    return e;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("episode: ") + ex.what());
  }
}

std::string render_trajectory(const Trajectory& trajectory) {
  std::ostringstream out;
  for (const auto& s : trajectory.steps) {
    out << "[" << s.index << "] " << module_name(s.acting_module) << " " << action_kind_name(s.action.kind);
    switch (s.action.kind) {
      case ActionKind::ToolCall: out << " " << s.action.tool << " " << s.action.arguments.dump(); break;
      default: out << " " << s.action.text; break;
    }
    if (s.observation) {
      out << "\n    observation:";
      for (auto f : s.observation->outcome_flags) out << " " << flag_name(f);
      out << " | " << s.observation->payload;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace evoloop

namespace evoloop {

StageOutput ModelRuntime::run_stage(const std::string& spec_text, const StageContext& ctx) const {
  std::string history;
  for (const auto& h : ctx.history) history += "- " + h + "\n";
  if (history.empty()) history = "(none)\n";
  std::string user = render_template(
      prompts::kStageUserTemplate,
      {{"module", std::string(module_name(ctx.module))},
       {"task", ctx.task.instruction},
       {"subgoal", std::to_string(ctx.subgoal + 1)},
       {"num_subgoals", std::to_string(ctx.task.num_subgoals)},
       {"history", history}});
  if (ctx.module == ModuleKind::Caller) {
    user += "\nTool: " + tool_to_json(ctx.tool).dump() + "\nReturn the arguments as one JSON object.";
  }
  StageOutput out;
  out.text = client_.chat({{Role::System, spec_text}, {Role::User, user}});
  out.tags = scripted_tags(out.text);
  if (ctx.module == ModuleKind::Caller) {
    const auto open = out.text.find('{');
    const auto close = out.text.rfind('}');
    if (open != std::string::npos && close != std::string::npos && close > open) {
      auto parsed = nlohmann::json::parse(out.text.substr(open, close - open + 1), nullptr, false);
      if (!parsed.is_discarded() && parsed.is_object()) out.arguments = std::move(parsed);
    }
  }
  return out;
}

}  // namespace evoloop
