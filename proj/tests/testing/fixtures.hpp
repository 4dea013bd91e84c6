#pragma once

// Shared helpers for the unit and acceptance suites.

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "evoloop/environment.hpp"
#include "evoloop/evolution.hpp"
#include "evoloop/llm_gateway.hpp"
#include "evoloop/rollout.hpp"

namespace evoloop::testing {

std::filesystem::path data_path(const std::string& name);

// Fresh empty directory under the system temp dir.
std::filesystem::path fresh_temp_dir(const std::string& tag);

// Single-task helper: tags[m] lists the tags stage (0, m) requires.
TaskInstance make_task(const std::string& id, int num_subgoals, const SkillMap& required,
                       const std::string& gold = "gold-answer");

PolicyGenome genome_with_rules(const std::map<ModuleKind, std::vector<std::string>>& rules);

std::string read_file(const std::filesystem::path& path);

// Stand-in for a chat model. Stage calls echo the RULE lines of the system
// message (and quote tool outputs for the synthesizer); blamer calls blame the
// first FAIL event; mutator calls append the missing capability named in the
// verifier feedback. Counts every call.
class FakeModelTransport final : public Transport {
 public:
  std::string send(const ChatRequest& request) override;
  int calls() const { return calls_.load(); }

 private:
  std::atomic<int> calls_{0};
};

class CountingTransport final : public Transport {
 public:
  std::string send(const ChatRequest&) override {
    ++calls_;
    return "unexpected";
  }
  int calls() const { return calls_.load(); }

 private:
  std::atomic<int> calls_{0};
};

// Scripted closed loop with oracle or random blame and the chosen selection rule.
RunResult run_scripted(const TaskSuite& suite, int generations, std::int64_t seed,
                       BlamerKind blamer = BlamerKind::Oracle, SelectionRule selection = SelectionRule::Diversity);

}  // namespace evoloop::testing
