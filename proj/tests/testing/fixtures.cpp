#include "testing/fixtures.hpp"

#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "evoloop/blame.hpp"
#include "evoloop/mutation.hpp"

namespace evoloop::testing {

namespace fs = std::filesystem;

fs::path data_path(const std::string& name) { return fs::path(EVOLOOP_TEST_DATA) / name; }

fs::path fresh_temp_dir(const std::string& tag) {
  static std::mt19937_64 rng{std::random_device{}()};
  fs::path dir = fs::temp_directory_path() / ("evoloop-" + tag + "-" + std::to_string(rng()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TaskInstance make_task(const std::string& id, int num_subgoals, const SkillMap& required, const std::string& gold) {
  TaskInstance t;
  t.id = id;
  t.instruction = "instruction for " + id;
  t.num_subgoals = num_subgoals;
  t.gold_answer = gold;
  t.required_skills = required;
  return t;
}

PolicyGenome genome_with_rules(const std::map<ModuleKind, std::vector<std::string>>& rules) {
  auto specs = default_seed_specs();
  for (const auto& [kind, tags] : rules) {
    for (const auto& t : tags) specs[kind] += "\nRULE: " + t;
  }
  return new_seed_genome(specs);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::string rule_lines(const std::string& text) {
  std::string out;
  for (const auto& t : scripted_tags(text)) out += "RULE: " + t + "\n";
  return out;
}

std::string section_after(const std::string& text, const std::string& header) {
  const auto pos = text.rfind(header);
  if (pos == std::string::npos) return {};
  return text.substr(pos + header.size());
}

}  // namespace

std::string FakeModelTransport::send(const ChatRequest& request) {
  ++calls_;
  const std::string& last = request.messages.back().content;
  if (request.messages.front().role == Role::System) {
    const std::string& spec = request.messages.front().content;
    std::string reply = rule_lines(spec);
    if (last.find("Module: synthesizer") != std::string::npos) {
      std::string history = section_after(last, "History:\n");
      history = history.substr(0, history.find("List every rule"));
      reply += "answer: " + history;
    } else if (last.find("Module: caller") != std::string::npos) {
      const std::string tool_line = section_after(last, "\nTool: ");
      const auto tool = nlohmann::json::parse(tool_line.substr(0, tool_line.find('\n')), nullptr, false);
      reply += tool.is_discarded() ? "{}" : placeholder_arguments(parse_tool_suite(nlohmann::json::array({tool})).front()).dump();
    } else {
      reply += "ok";
    }
    return reply;
  }
  if (last.find("You are a diagnostic judge") != std::string::npos) {
    const std::string events = section_after(last, "# MODULE EVENTS\n");
    std::smatch m;
    std::string blamed = "planner";
    if (std::regex_search(events, m, std::regex(R"(step \d+ (\w+) \w+ FAIL)"))) blamed = m[1];
    std::string scores;
    for (ModuleKind k : kAllModules) {
      scores += std::string(module_name(k)) + (module_name(k) == blamed ? " 0.9\n" : " 0.1\n");
    }
    return "1. Scores\n" + scores + "\n2. Evidence\n" + blamed + ": first FAIL event\n\n3. One sentence diagnosis\n" +
           "The " + blamed + " failed first.\n";
  }
  if (last.find("You are a targeted prompt editor") != std::string::npos) {
    const std::string target = section_after(last, "# TARGET MODULE\n").substr(0, section_after(last, "# TARGET MODULE\n").find('\n'));
    std::string spec = section_after(last, "# CURRENT SPECIFICATION\n");
    spec = spec.substr(0, spec.find("\n\n# FAILURE EPISODE PACKET"));
    std::smatch m;
    const std::string packet = section_after(last, "# FAILURE EPISODE PACKET\n");
    std::string tag = "generic-check";
    if (std::regex_search(packet, m, std::regex(R"(missing capability ([^\s;]+))"))) tag = m[1];
    return "1. Target module\n" + target + "\n\n2. Diagnosed error mode\nStage lacked " + tag +
           ".\n\n3. Minimal edit summary\nAdd the rule.\n\n4. Revised target module spec\n" + spec + "\nRULE: " + tag +
           "\n";
  }
  return "unrecognized request";
}

RunResult run_scripted(const TaskSuite& suite, int generations, std::int64_t seed, BlamerKind blamer_kind,
                       SelectionRule selection) {
  RunConfig config;
  config.max_generations = generations;
  config.minibatch_size = 3;
  config.rng_seed = seed;
  config.blamer = blamer_kind;
  config.selection = selection;
  const ScriptedEnvironment env;
  const ScriptedRuntime runtime;
  OracleBlamer oracle;
  RandomBlamer random(static_cast<std::uint64_t>(seed));
  Blamer& blamer = blamer_kind == BlamerKind::Random ? static_cast<Blamer&>(random) : static_cast<Blamer&>(oracle);
  OracleMutator mutator(suite);
  return run_generations(config, suite, env, runtime, blamer, mutator);
}

}  // namespace evoloop::testing
