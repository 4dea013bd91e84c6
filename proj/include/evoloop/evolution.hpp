#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoloop/blame.hpp"
#include "evoloop/environment.hpp"
#include "evoloop/llm_gateway.hpp"
#include "evoloop/mutation.hpp"
#include "evoloop/policy_model.hpp"
#include "evoloop/rollout.hpp"

namespace evoloop {

enum class Backend { Scripted, Model };
enum class BlamerKind { Oracle, Random, Model };
enum class MutatorKind { Oracle, Model };
enum class SelectionRule { Diversity, Greedy };

inline constexpr int kDefaultGenerations = 8;
inline constexpr int kDefaultMinibatch = 3;

struct RunConfig {
  int max_generations{kDefaultGenerations};
  int minibatch_size{kDefaultMinibatch};
  std::int64_t rng_seed{0};
  Backend backend{Backend::Scripted};
  std::string model_id;  // frozen policy model; identifier only
  std::string blamer_model_id;   // empty: same as model_id
  std::string mutator_model_id;  // empty: same as model_id
  BlamerKind blamer{BlamerKind::Oracle};
  MutatorKind mutator{MutatorKind::Oracle};
  SelectionRule selection{SelectionRule::Diversity};
  CassetteMode cassette_mode{CassetteMode::Replay};
  int max_steps{kDefaultModelMaxSteps};
  std::string task_suite;
  std::string tool_suite;
  std::string out_dir{"runs"};
  std::string cassette;  // source cassette for replay
  std::optional<PolicyGenome::SpecMap> seed_specs;  // default: built-in seed prompts
};

// Missing fields keep their defaults. Relative paths resolve against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& base_dir = "");
nlohmann::json run_config_to_json(const RunConfig& config);

// Portable draws from a seeded 64-bit Mersenne Twister.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

struct PopulationEntry {
  PolicyGenome genome;
  double win_frequency{0.0};
  std::map<std::string, double> selection_scores;  // task id -> reward

  bool operator==(const PopulationEntry&) const = default;
};

struct GenerationRecord {
  int generation{0};
  std::string parent_id;
  std::vector<std::string> minibatch_task_ids;
  double parent_mean{0.0};
  std::optional<std::string> child_id;
  std::optional<double> child_mean;
  std::optional<ModuleKind> blame_target;
  bool accepted{false};
  std::vector<std::string> population_ids_after;
  std::map<std::string, double> win_frequencies_after;
  double best_selection_mean{0.0};
  std::string note;  // why no child was produced, blame fallbacks, warnings

  bool operator==(const GenerationRecord&) const = default;
};

nlohmann::json generation_record_to_json(const GenerationRecord& record);
GenerationRecord generation_record_from_json(const nlohmann::json& j);

// Inverse-CDF draw over entries in creation order. Throws EmptyPopulation and
// UnnormalizedWeights (sum off by more than 1e-9).
const PolicyGenome& sample_parent(std::span<const PopulationEntry> population, Rng& rng);

// Strict improvement only.
inline bool accept_child(double parent_mean, double child_mean) { return child_mean > parent_mean; }

// (genome, task) -> reward on the selection set.
using SelectionEvaluator = std::function<double(const PolicyGenome&, const TaskInstance&)>;

struct SelectionResult {
  std::vector<PopulationEntry> retained;
  std::map<std::string, double> win_frequencies;
  std::vector<std::string> winners;  // genome id per selection task
};

// Instance-wise winners: per task the highest reward wins, ties to the
// earliest-created entry; entries winning nothing are dropped and w(entry) is
// its share of won tasks. Missing selection scores are filled via `evaluate`
// in entry-major, task-minor order.
SelectionResult select_population(std::vector<PopulationEntry> population, std::span<const TaskInstance> selection_tasks,
                                  const SelectionEvaluator& evaluate);

// Ablation baseline: keep only the entry with the best mean selection reward.
SelectionResult select_greedy(std::vector<PopulationEntry> population, std::span<const TaskInstance> selection_tasks,
                              const SelectionEvaluator& evaluate);

double mean_selection_score(const PopulationEntry& entry);
// Earliest entry with the highest mean selection score.
std::size_t best_entry_index(std::span<const PopulationEntry> population);

// Receives everything the loop produces, in order.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_episode(const EpisodeRecord&) {}
  virtual void on_generation(const GenerationRecord&, std::span<const PopulationEntry>) {}
};

struct RunResult {
  PolicyGenome best;
  double best_selection_mean{0.0};
  std::vector<GenerationRecord> history;
  std::vector<PopulationEntry> population;
  int completed_generations{0};
  std::optional<std::string> error;  // set when the run aborted
};

class EvolutionEngine {
 public:
  EvolutionEngine(RunConfig config, const TaskSuite& suite, const Environment& env, const ModuleRuntime& runtime,
                  Blamer& blamer, Mutator& mutator);

  RunResult run(RunObserver* observer = nullptr);

 private:
  double evaluate_cached(const PolicyGenome& genome, const TaskInstance& task, RunObserver* observer);

  RunConfig config_;
  const TaskSuite& suite_;
  const Environment& env_;
  const ModuleRuntime& runtime_;
  Blamer& blamer_;
  Mutator& mutator_;
  ExecutorOptions exec_options_;
  // (fingerprint, task id, backend) -> reward
  std::map<std::string, double> cache_;
};

// Convenience wrapper around EvolutionEngine::run.
RunResult run_generations(const RunConfig& config, const TaskSuite& suite, const Environment& env,
                          const ModuleRuntime& runtime, Blamer& blamer, Mutator& mutator,
                          RunObserver* observer = nullptr);

}  // namespace evoloop
