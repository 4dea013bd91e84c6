#include "evoloop/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "evoloop/error.hpp"

namespace evoloop {
namespace {

using nlohmann::json;

template <typename Enum>
struct EnumName {
  Enum value;
  const char* name;
};

constexpr EnumName<Backend> kBackends[] = {{Backend::Scripted, "scripted"}, {Backend::Model, "model"}};
constexpr EnumName<BlamerKind> kBlamers[] = {
    {BlamerKind::Oracle, "oracle"}, {BlamerKind::Random, "random"}, {BlamerKind::Model, "model"}};
constexpr EnumName<MutatorKind> kMutators[] = {{MutatorKind::Oracle, "oracle"}, {MutatorKind::Model, "model"}};
constexpr EnumName<SelectionRule> kSelections[] = {{SelectionRule::Diversity, "diversity"},
                                                   {SelectionRule::Greedy, "greedy"}};

template <typename Enum, std::size_t N>
Enum enum_from(const json& j, const EnumName<Enum> (&table)[N], const char* field) {
  const auto s = j.get<std::string>();
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  throw Error(ErrorCode::ConfigError, std::string(field) + ": unknown value '" + s + "'");
}

template <typename Enum, std::size_t N>
std::string enum_to(Enum v, const EnumName<Enum> (&table)[N]) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "";
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || base_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

RunConfig run_config_from_json(const json& j, const std::string& base_dir) {
  static const std::vector<std::string> kKnown = {
      "max_generations", "minibatch_size", "rng_seed",    "backend",    "model_id",     "blamer_model_id",
      "mutator_model_id", "blamer",        "mutator",     "selection",  "cassette_mode", "max_steps",
      "task_suite",       "tool_suite",    "out_dir",     "cassette",   "seed_specs"};
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw Error(ErrorCode::ConfigError, "unknown field '" + key + "'");
    }
  }
  RunConfig c;
  try {
    if (j.contains("max_generations")) c.max_generations = j.at("max_generations").get<int>();
    if (j.contains("minibatch_size")) c.minibatch_size = j.at("minibatch_size").get<int>();
    if (j.contains("rng_seed")) c.rng_seed = j.at("rng_seed").get<std::int64_t>();
    if (j.contains("backend")) c.backend = enum_from(j.at("backend"), kBackends, "backend");
    if (j.contains("model_id")) c.model_id = j.at("model_id").get<std::string>();
    if (j.contains("blamer_model_id")) c.blamer_model_id = j.at("blamer_model_id").get<std::string>();
    if (j.contains("mutator_model_id")) c.mutator_model_id = j.at("mutator_model_id").get<std::string>();
    if (j.contains("blamer")) c.blamer = enum_from(j.at("blamer"), kBlamers, "blamer");
    if (j.contains("mutator")) c.mutator = enum_from(j.at("mutator"), kMutators, "mutator");
    if (j.contains("selection")) c.selection = enum_from(j.at("selection"), kSelections, "selection");
    if (j.contains("cassette_mode")) {
      auto mode = parse_cassette_mode(j.at("cassette_mode").get<std::string>());
      if (!mode) throw Error(ErrorCode::ConfigError, "cassette_mode must be record|replay|passthrough");
      c.cassette_mode = *mode;
    }
    if (j.contains("max_steps")) c.max_steps = j.at("max_steps").get<int>();
    if (j.contains("task_suite")) c.task_suite = resolve(base_dir, j.at("task_suite").get<std::string>());
    if (j.contains("tool_suite")) c.tool_suite = resolve(base_dir, j.at("tool_suite").get<std::string>());
    if (j.contains("out_dir")) c.out_dir = resolve(base_dir, j.at("out_dir").get<std::string>());
    if (j.contains("cassette")) c.cassette = resolve(base_dir, j.at("cassette").get<std::string>());
    if (j.contains("seed_specs") && !j.at("seed_specs").is_null()) {
      PolicyGenome::SpecMap specs;
      for (const auto& [name, text] : j.at("seed_specs").items()) {
        auto kind = parse_module_name(name);
        if (!kind) throw Error(ErrorCode::ConfigError, "seed_specs: unknown module '" + name + "'");
        specs[*kind] = text.get<std::string>();
      }
      c.seed_specs = std::move(specs);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  if (c.max_generations < 0) throw Error(ErrorCode::ConfigError, "max_generations must be >= 0");
  if (c.minibatch_size <= 0) throw Error(ErrorCode::ConfigError, "minibatch_size must be positive");
  if (c.max_steps <= 0) throw Error(ErrorCode::ConfigError, "max_steps must be positive");
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j{{"max_generations", c.max_generations},
         {"minibatch_size", c.minibatch_size},
         {"rng_seed", c.rng_seed},
         {"backend", enum_to(c.backend, kBackends)},
         {"model_id", c.model_id},
         {"blamer_model_id", c.blamer_model_id},
         {"mutator_model_id", c.mutator_model_id},
         {"blamer", enum_to(c.blamer, kBlamers)},
         {"mutator", enum_to(c.mutator, kMutators)},
         {"selection", enum_to(c.selection, kSelections)},
         {"cassette_mode", std::string(cassette_mode_name(c.cassette_mode))},
         {"max_steps", c.max_steps},
         {"task_suite", c.task_suite},
         {"tool_suite", c.tool_suite},
         {"out_dir", c.out_dir},
         {"cassette", c.cassette}};
  if (c.seed_specs) {
    json specs = json::object();
    for (const auto& [kind, text] : *c.seed_specs) specs[std::string(module_name(kind))] = text;
    j["seed_specs"] = specs;
  }
  return j;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

json generation_record_to_json(const GenerationRecord& r) {
  return {{"generation", r.generation},
          {"parent_id", r.parent_id},
          {"minibatch_task_ids", r.minibatch_task_ids},
          {"parent_mean", r.parent_mean},
          {"child_id", opt_json(r.child_id)},
          {"child_mean", opt_json(r.child_mean)},
          {"blame_target", r.blame_target ? json(std::string(module_name(*r.blame_target))) : json(nullptr)},
          {"accepted", r.accepted},
          {"population_ids_after", r.population_ids_after},
          {"win_frequencies_after", r.win_frequencies_after},
          {"best_selection_mean", r.best_selection_mean},
          {"note", r.note}};
}

GenerationRecord generation_record_from_json(const json& j) {
  try {
    GenerationRecord r;
    r.generation = j.at("generation").get<int>();
    r.parent_id = j.at("parent_id").get<std::string>();
    r.minibatch_task_ids = j.at("minibatch_task_ids").get<std::vector<std::string>>();
    r.parent_mean = j.at("parent_mean").get<double>();
    if (!j.at("child_id").is_null()) r.child_id = j.at("child_id").get<std::string>();
    if (!j.at("child_mean").is_null()) r.child_mean = j.at("child_mean").get<double>();
    if (!j.at("blame_target").is_null()) {
      auto kind = parse_module_name(j.at("blame_target").get<std::string>());
      if (!kind) throw Error(ErrorCode::ParseError, "unknown blame_target");
      r.blame_target = *kind;
    }
    r.accepted = j.at("accepted").get<bool>();
    r.population_ids_after = j.at("population_ids_after").get<std::vector<std::string>>();
    r.win_frequencies_after = j.at("win_frequencies_after").get<std::map<std::string, double>>();
    r.best_selection_mean = j.value("best_selection_mean", 0.0);
    r.note = j.value("note", "");
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("generation record: ") + e.what());
  }
}

const PolicyGenome& sample_parent(std::span<const PopulationEntry> population, Rng& rng) {
  if (population.empty()) throw Error(ErrorCode::EmptyPopulation, "cannot sample from an empty population");
  double total = 0.0;
  for (const auto& e : population) {
    if (e.win_frequency < 0.0) throw Error(ErrorCode::UnnormalizedWeights, "negative win frequency");
    total += e.win_frequency;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::UnnormalizedWeights, "win frequencies sum to " + std::to_string(total));
  }
  const double u = rng.uniform01();
  double cumulative = 0.0;
  const PopulationEntry* last_positive = nullptr;
  for (const auto& e : population) {
    if (e.win_frequency <= 0.0) continue;
    last_positive = &e;
    cumulative += e.win_frequency;
    if (u < cumulative) return e.genome;
  }
  return last_positive->genome;
}

double mean_selection_score(const PopulationEntry& entry) {
  if (entry.selection_scores.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [_, r] : entry.selection_scores) sum += r;
  return sum / static_cast<double>(entry.selection_scores.size());
}

std::size_t best_entry_index(std::span<const PopulationEntry> population) {
  if (population.empty()) throw Error(ErrorCode::EmptyPopulation, "no candidates");
  std::size_t best = 0;
  double best_mean = mean_selection_score(population[0]);
  for (std::size_t i = 1; i < population.size(); ++i) {
    const double m = mean_selection_score(population[i]);
    if (m > best_mean) {
      best = i;
      best_mean = m;
    }
  }
  return best;
}

namespace {

void fill_scores(std::vector<PopulationEntry>& population, std::span<const TaskInstance> tasks,
                 const SelectionEvaluator& evaluate) {
  if (population.empty()) throw Error(ErrorCode::EmptyPopulation, "selection over an empty population");
  if (tasks.empty()) throw Error(ErrorCode::EmptySelectionSet, "no selection tasks");
  for (auto& entry : population) {
    for (const auto& task : tasks) {
      if (!entry.selection_scores.count(task.id)) entry.selection_scores[task.id] = evaluate(entry.genome, task);
    }
  }
}

}  // namespace

SelectionResult select_population(std::vector<PopulationEntry> population, std::span<const TaskInstance> selection_tasks,
                                  const SelectionEvaluator& evaluate) {
  fill_scores(population, selection_tasks, evaluate);
  std::vector<int> wins(population.size(), 0);
  SelectionResult result;
  for (const auto& task : selection_tasks) {
    std::size_t winner = 0;
    for (std::size_t i = 1; i < population.size(); ++i) {
      if (population[i].selection_scores.at(task.id) > population[winner].selection_scores.at(task.id)) winner = i;
    }
    ++wins[winner];
    result.winners.push_back(population[winner].genome.id());
  }
  const double n = static_cast<double>(selection_tasks.size());
  for (std::size_t i = 0; i < population.size(); ++i) {
    if (wins[i] == 0) continue;
    population[i].win_frequency = wins[i] / n;
    result.win_frequencies[population[i].genome.id()] = population[i].win_frequency;
    result.retained.push_back(std::move(population[i]));
  }
  return result;
}

SelectionResult select_greedy(std::vector<PopulationEntry> population, std::span<const TaskInstance> selection_tasks,
                              const SelectionEvaluator& evaluate) {
  fill_scores(population, selection_tasks, evaluate);
  PopulationEntry best = std::move(population[best_entry_index(population)]);
  best.win_frequency = 1.0;
  SelectionResult result;
  result.win_frequencies[best.genome.id()] = 1.0;
  result.winners.assign(selection_tasks.size(), best.genome.id());
  result.retained.push_back(std::move(best));
  return result;
}

EvolutionEngine::EvolutionEngine(RunConfig config, const TaskSuite& suite, const Environment& env,
                                 const ModuleRuntime& runtime, Blamer& blamer, Mutator& mutator)
    : config_(std::move(config)), suite_(suite), env_(env), runtime_(runtime), blamer_(blamer), mutator_(mutator) {
  if (config_.minibatch_size <= 0 || static_cast<std::size_t>(config_.minibatch_size) > suite_.train.size()) {
    throw Error(ErrorCode::ConfigError, "minibatch_size must be in [1, |train|]");
  }
  if (config_.max_generations < 0) throw Error(ErrorCode::ConfigError, "max_generations must be >= 0");
  if (config_.backend == Backend::Model) exec_options_.max_steps = config_.max_steps;
}

double EvolutionEngine::evaluate_cached(const PolicyGenome& genome, const TaskInstance& task, RunObserver* observer) {
  const std::string key = genome_fingerprint(genome) + "|" + task.id + "|" + env_.name() + "|" +
                          (config_.backend == Backend::Model ? "model" : "scripted");
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  EpisodeRecord episode = execute_episode(genome, task, env_, runtime_, exec_options_);
  if (observer) observer->on_episode(episode);
  cache_.emplace(key, episode.reward);
  return episode.reward;
}

RunResult EvolutionEngine::run(RunObserver* observer) {
  Rng rng(static_cast<std::uint64_t>(config_.rng_seed));
  const PolicyGenome seed = new_seed_genome(config_.seed_specs ? *config_.seed_specs : default_seed_specs());

  const SelectionEvaluator evaluate = [&](const PolicyGenome& g, const TaskInstance& t) {
    return evaluate_cached(g, t, observer);
  };
  auto select = [&](std::vector<PopulationEntry> pop) {
    return config_.selection == SelectionRule::Greedy ? select_greedy(std::move(pop), suite_.selection, evaluate)
                                                      : select_population(std::move(pop), suite_.selection, evaluate);
  };

  std::vector<PopulationEntry> population = select({PopulationEntry{seed, 1.0, {}}}).retained;
  RunResult result{seed, 0.0, {}, {}, 0, std::nullopt};

  for (int g = 1; g <= config_.max_generations; ++g) {
    try {
      GenerationRecord rec;
      rec.generation = g;

      // Phase 1: parent, mini-batch, rollouts.
      const PolicyGenome parent = sample_parent(population, rng);
      rec.parent_id = parent.id();
      std::vector<std::size_t> order(suite_.train.size());
      std::iota(order.begin(), order.end(), 0);
      std::vector<TaskInstance> batch;
      for (std::size_t i = 0; i < static_cast<std::size_t>(config_.minibatch_size); ++i) {
        const std::size_t j = i + rng.below(order.size() - i);
        std::swap(order[i], order[j]);
        batch.push_back(suite_.train[order[i]]);
        rec.minibatch_task_ids.push_back(batch.back().id);
      }
      BatchResult parent_batch = evaluate_batch(parent, batch, env_, runtime_, exec_options_);
      if (observer) {
        for (const auto& e : parent_batch.episodes) observer->on_episode(e);
      }
      rec.parent_mean = parent_batch.mean_reward;

      // Phase 2: blame the worst episode.
      std::optional<PopulationEntry> child_entry;
      if (auto worst = select_blame_episode(parent_batch.episodes)) {
        const EpisodeRecord& episode = parent_batch.episodes[*worst];
        const auto diagnostics = extract_diagnostics(episode.trajectory);
        const BlameReport report = assign_blame(episode, diagnostics, blamer_, suite_.find(episode.task_id));
        rec.blame_target = report.target;
        if (report.fallback) rec.note = "blame fallback; ";
        for (const auto& w : report.warnings) rec.note += w + "; ";

        // Phase 3: targeted mutation, judged on the same mini-batch.
        std::optional<PolicyGenome> child;
        try {
          const MutationProposal proposal =
              generate_feedback(episode, report.target, parent, diagnostics, report, mutator_);
          for (const auto& w : proposal.warnings) rec.note += w + "; ";
          child = build_child(parent, proposal, g);
        } catch (const Error& e) {
          switch (e.code()) {
            case ErrorCode::NoMissingTag:
            case ErrorCode::MutatorOutputUnparseable:
            case ErrorCode::NoOpEdit:
            case ErrorCode::EmptySpec:
              rec.note += std::string("mutation aborted: ") + e.what();
              break;
            default:
              throw;
          }
        }
        if (child) {
          BatchResult child_batch = evaluate_batch(*child, batch, env_, runtime_, exec_options_);
          if (observer) {
            for (const auto& e : child_batch.episodes) observer->on_episode(e);
          }
          rec.child_id = child->id();
          rec.child_mean = child_batch.mean_reward;
          rec.accepted = accept_child(rec.parent_mean, child_batch.mean_reward);
          if (rec.accepted) child_entry = PopulationEntry{*child, 0.0, {}};
        }
      } else {
        rec.note = "all mini-batch rewards are 1; mutation skipped";
      }

      // Phase 4: selection on the held-out split.
      if (child_entry) population.push_back(std::move(*child_entry));
      SelectionResult selected = select(std::move(population));
      population = std::move(selected.retained);
      for (const auto& e : population) rec.population_ids_after.push_back(e.genome.id());
      rec.win_frequencies_after = selected.win_frequencies;
      rec.best_selection_mean = mean_selection_score(population[best_entry_index(population)]);

      result.history.push_back(rec);
      result.completed_generations = g;
      if (observer) observer->on_generation(rec, population);
    } catch (const std::exception& e) {
      result.error = "generation " + std::to_string(g) + ": " + e.what();
      break;
    }
  }

  const std::size_t best = best_entry_index(population);
  result.best = population[best].genome;
  result.best_selection_mean = mean_selection_score(population[best]);
  result.population = std::move(population);
  return result;
}

RunResult run_generations(const RunConfig& config, const TaskSuite& suite, const Environment& env,
                          const ModuleRuntime& runtime, Blamer& blamer, Mutator& mutator, RunObserver* observer) {
  EvolutionEngine engine(config, suite, env, runtime, blamer, mutator);
  return engine.run(observer);
}

}  // namespace evoloop
