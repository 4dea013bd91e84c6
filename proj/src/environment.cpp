#include "evoloop/environment.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "evoloop/error.hpp"

namespace evoloop {
namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

ParamSchema parse_param(const json& j) {
  if (j.is_string()) {
    const auto kind = j.get<std::string>();
    if (kind == "string") return {ValueKind::String, {}};
    if (kind == "number") return {ValueKind::Number, {}};
    if (kind == "boolean") return {ValueKind::Boolean, {}};
    throw Error(ErrorCode::ParseError, "unknown value kind '" + kind + "'");
  }
  if (j.is_object() && j.contains("enum")) {
    auto allowed = j.at("enum").get<std::vector<std::string>>();
    if (allowed.empty()) throw Error(ErrorCode::ParseError, "enum with no allowed values");
    return {ValueKind::Enum, std::move(allowed)};
  }
  throw Error(ErrorCode::ParseError, "bad parameter schema " + j.dump());
}

SkillMap parse_skills(const json& list, int num_subgoals, const std::string& task_id) {
  SkillMap out;
  for (const auto& item : list) {
    const int subgoal = item.at("subgoal").get<int>();
    if (subgoal < 0 || subgoal >= num_subgoals) {
      throw Error(ErrorCode::ParseError, "task " + task_id + ": subgoal index out of range");
    }
    auto module = parse_module_name(item.at("module").get<std::string>());
    if (!module) throw Error(ErrorCode::ParseError, "task " + task_id + ": unknown module");
    auto& tags = out[{subgoal, *module}];
    for (const auto& t : item.at("tags")) tags.insert(t.get<std::string>());
  }
  return out;
}

json skills_to_json(const SkillMap& skills) {
  json arr = json::array();
  for (const auto& [key, tags] : skills) {
    arr.push_back({{"subgoal", key.first},
                   {"module", std::string(module_name(key.second))},
                   {"tags", std::vector<std::string>(tags.begin(), tags.end())}});
  }
  return arr;
}

TaskInstance parse_task(const json& j) {
  TaskInstance t;
  t.id = j.at("id").get<std::string>();
  t.instruction = j.at("instruction").get<std::string>();
  t.num_subgoals = j.at("num_subgoals").get<int>();
  if (t.num_subgoals <= 0) throw Error(ErrorCode::ParseError, "task " + t.id + ": num_subgoals must be positive");
  t.gold_answer = j.at("gold_answer").get<std::string>();
  t.required_skills = parse_skills(j.at("required_skills"), t.num_subgoals, t.id);
  if (j.contains("forbidden_skills")) {
    t.forbidden_skills = parse_skills(j.at("forbidden_skills"), t.num_subgoals, t.id);
  }
  return t;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace

std::string_view flag_name(OutcomeFlag flag) {
  switch (flag) {
    case OutcomeFlag::Ok: return "OK";
    case OutcomeFlag::Empty: return "EMPTY";
    case OutcomeFlag::SchemaViolation: return "SCHEMA_VIOLATION";
    case OutcomeFlag::ExecError: return "EXEC_ERROR";
    case OutcomeFlag::WrongTool: return "WRONG_TOOL";
    case OutcomeFlag::Ungrounded: return "UNGROUNDED";
  }
  return "OK";
}

OutcomeFlag parse_flag_name(std::string_view name) {
  for (auto f : {OutcomeFlag::Ok, OutcomeFlag::Empty, OutcomeFlag::SchemaViolation,
                 OutcomeFlag::ExecError, OutcomeFlag::WrongTool, OutcomeFlag::Ungrounded}) {
    if (flag_name(f) == name) return f;
  }
  throw Error(ErrorCode::ParseError, "unknown outcome flag '" + std::string(name) + "'");
}

std::vector<std::string> validate_arguments(const ToolDef& tool, const json& args) {
  std::vector<std::string> problems;
  if (!args.is_object()) return {"arguments must be an object"};
  for (const auto& [name, schema] : tool.argument_schema) {
    auto it = args.find(name);
    if (it == args.end()) {
      problems.push_back("missing parameter '" + name + "'");
      continue;
    }
    switch (schema.kind) {
      case ValueKind::String:
        if (!it->is_string()) problems.push_back("'" + name + "' must be a string");
        break;
      case ValueKind::Number:
        if (!it->is_number()) problems.push_back("'" + name + "' must be a number");
        break;
      case ValueKind::Boolean:
        if (!it->is_boolean()) problems.push_back("'" + name + "' must be a boolean");
        break;
      case ValueKind::Enum:
        if (!it->is_string() ||
            std::find(schema.allowed.begin(), schema.allowed.end(), it->get<std::string>()) ==
                schema.allowed.end()) {
          problems.push_back("'" + name + "' is not an allowed value");
        }
        break;
    }
  }
  for (const auto& [key, _] : args.items()) {
    if (!tool.argument_schema.count(key)) problems.push_back("unknown parameter '" + key + "'");
  }
  return problems;
}

json placeholder_arguments(const ToolDef& tool) {
  json args = json::object();
  for (const auto& [name, schema] : tool.argument_schema) {
    switch (schema.kind) {
      case ValueKind::String: args[name] = name; break;
      case ValueKind::Number: args[name] = 0; break;
      case ValueKind::Boolean: args[name] = false; break;
      case ValueKind::Enum: args[name] = schema.allowed.front(); break;
    }
  }
  return args;
}

json tool_to_json(const ToolDef& tool) {
  json schema = json::object();
  for (const auto& [name, param] : tool.argument_schema) {
    switch (param.kind) {
      case ValueKind::String: schema[name] = "string"; break;
      case ValueKind::Number: schema[name] = "number"; break;
      case ValueKind::Boolean: schema[name] = "boolean"; break;
      case ValueKind::Enum: schema[name] = json{{"enum", param.allowed}}; break;
    }
  }
  return json{{"name", tool.name}, {"argument_schema", schema}, {"documentation", tool.documentation}};
}

std::vector<ToolDef> parse_tool_suite(const json& j) {
  std::vector<ToolDef> tools;
  std::unordered_set<std::string> seen;
  try {
    for (const auto& item : j) {
      ToolDef tool;
      tool.name = item.at("name").get<std::string>();
      if (!seen.insert(tool.name).second) {
        throw Error(ErrorCode::ParseError, "duplicate tool name '" + tool.name + "'");
      }
      for (const auto& [param, schema] : item.at("argument_schema").items()) {
        tool.argument_schema.emplace(param, parse_param(schema));
      }
      tool.documentation = item.value("documentation", "");
      tools.push_back(std::move(tool));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("tool suite: ") + e.what());
  }
  return tools;
}

std::vector<ToolDef> load_tool_suite(const std::filesystem::path& path) {
  return parse_tool_suite(read_json_file(path));
}

const TaskInstance* TaskSuite::find(std::string_view id) const {
  for (const auto* split : {&train, &selection}) {
    for (const auto& t : *split) {
      if (t.id == id) return &t;
    }
  }
  return nullptr;
}

TaskSuite parse_task_suite(const json& j) {
  TaskSuite suite;
  try {
    for (const auto& t : j.at("train")) suite.train.push_back(parse_task(t));
    for (const auto& t : j.at("selection")) suite.selection.push_back(parse_task(t));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("task suite: ") + e.what());
  }
  if (suite.train.empty()) throw Error(ErrorCode::EmptySplit, "train split is empty");
  if (suite.selection.empty()) throw Error(ErrorCode::EmptySplit, "selection split is empty");
  std::unordered_set<std::string> train_ids;
  for (const auto& t : suite.train) {
    if (!train_ids.insert(t.id).second) throw Error(ErrorCode::ParseError, "duplicate task id " + t.id);
  }
  std::unordered_set<std::string> sel_ids;
  for (const auto& t : suite.selection) {
    if (train_ids.count(t.id)) throw Error(ErrorCode::OverlappingSplits, "task " + t.id + " in both splits");
    if (!sel_ids.insert(t.id).second) throw Error(ErrorCode::ParseError, "duplicate task id " + t.id);
  }
  return suite;
}

TaskSuite load_task_suite(const std::filesystem::path& path) {
  return parse_task_suite(read_json_file(path));
}

json task_to_json(const TaskInstance& task) {
  json j{{"id", task.id},
         {"instruction", task.instruction},
         {"num_subgoals", task.num_subgoals},
         {"gold_answer", task.gold_answer},
         {"required_skills", skills_to_json(task.required_skills)}};
  if (!task.forbidden_skills.empty()) j["forbidden_skills"] = skills_to_json(task.forbidden_skills);
  return j;
}

std::set<std::string> scripted_tags(std::string_view spec_text) {
  static constexpr std::string_view kPrefix = "RULE:";
  std::set<std::string> tags;
  std::istringstream lines{std::string(spec_text)};
  std::string raw;
  while (std::getline(lines, raw)) {
    std::string_view line = trim(raw);
    if (line.substr(0, kPrefix.size()) != kPrefix) continue;
    std::string_view tag = trim(line.substr(kPrefix.size()));
    if (tag.empty()) continue;
    if (tag.find_first_of(" \t\r\n\f\v") != std::string_view::npos) continue;
    tags.emplace(tag);
  }
  return tags;
}

double score(const TaskInstance& task, const std::string& final_answer, int stages_passed) {
  const int total = 4 * task.num_subgoals;
  if (stages_passed < 0 || stages_passed > total) {
    throw Error(ErrorCode::OutOfRangeStageCount,
                std::to_string(stages_passed) + " not in [0, " + std::to_string(total) + "]");
  }
  int credited = stages_passed;
  if (credited == total && final_answer.find(task.gold_answer) == std::string::npos) {
    credited = total - 1;
  }
  return static_cast<double>(credited) / static_cast<double>(total);
}

OutcomeFlag ScriptedEnvironment::failure_flag(ModuleKind module) {
  switch (module) {
    case ModuleKind::Planner: return OutcomeFlag::Empty;
    case ModuleKind::Selector: return OutcomeFlag::WrongTool;
    case ModuleKind::Caller: return OutcomeFlag::SchemaViolation;
    case ModuleKind::Synthesizer: return OutcomeFlag::Ungrounded;
  }
  return OutcomeFlag::Empty;
}

std::vector<std::string> ScriptedEnvironment::missing_tags(const TaskInstance& task, int subgoal,
                                                           ModuleKind module,
                                                           const std::set<std::string>& tags) {
  std::vector<std::string> missing;
  auto it = task.required_skills.find({subgoal, module});
  if (it == task.required_skills.end()) return missing;
  std::set_difference(it->second.begin(), it->second.end(), tags.begin(), tags.end(),
                      std::back_inserter(missing));
  return missing;
}

ToolDef ScriptedEnvironment::tool_for(const TaskInstance& task, int subgoal) const {
  if (tools_.empty()) return ToolDef{task.id + "_step" + std::to_string(subgoal), {}, ""};
  return tools_[static_cast<std::size_t>(subgoal) % tools_.size()];
}

StageCheck ScriptedEnvironment::check_stage(const TaskInstance& task, int subgoal, ModuleKind module,
                                            const StageOutput& output) const {
  StageCheck check;
  check.missing_tags = missing_tags(task, subgoal, module, output.tags);
  std::vector<std::string> conflicts;
  if (auto it = task.forbidden_skills.find({subgoal, module}); it != task.forbidden_skills.end()) {
    std::set_intersection(it->second.begin(), it->second.end(), output.tags.begin(),
                          output.tags.end(), std::back_inserter(conflicts));
  }
  const ToolDef tool = tool_for(task, subgoal);
  std::vector<std::string> schema_problems;
  if (module == ModuleKind::Caller) schema_problems = validate_arguments(tool, output.arguments);

  if (check.missing_tags.empty() && conflicts.empty() && schema_problems.empty()) {
    check.passed = true;
    check.flag = OutcomeFlag::Ok;
    switch (module) {
      case ModuleKind::Planner: check.payload = output.text; break;
      case ModuleKind::Selector: check.payload = "selected " + tool.name; break;
      case ModuleKind::Caller:
        check.payload = subgoal + 1 == task.num_subgoals
                            ? "result: " + task.gold_answer
                            : tool.name + " completed subgoal " + std::to_string(subgoal);
        break;
      case ModuleKind::Synthesizer: check.payload = output.text; break;
    }
    return check;
  }

  check.passed = false;
  check.flag = failure_flag(module);
  std::string detail;
  for (const auto& t : check.missing_tags) detail += "; missing capability " + t;
  for (const auto& t : conflicts) detail += "; conflicting capability " + t;
  for (const auto& p : schema_problems) detail += "; " + p;
  check.payload = std::string(flag_name(check.flag)) + " at subgoal " + std::to_string(subgoal) +
                  " " + std::string(module_name(module)) + detail;
  return check;
}

}  // namespace evoloop
