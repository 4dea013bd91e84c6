#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoloop/evolution.hpp"
#include "evoloop/llm_gateway.hpp"
#include "evoloop/rollout.hpp"

namespace evoloop {

inline constexpr int kSnapshotSchemaVersion = 1;

struct Snapshot {
  int generation{0};
  std::vector<PopulationEntry> entries;

  bool operator==(const Snapshot&) const = default;
};

nlohmann::json snapshot_to_json(const Snapshot& snapshot);
Snapshot snapshot_from_json(const nlohmann::json& j);
void save_snapshot(const Snapshot& snapshot, const std::filesystem::path& path);
Snapshot load_snapshot(const std::filesystem::path& path);

// Append-only JSONL file; each write is one line, flushed.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write(const nlohmann::json& line);

 private:
  std::ofstream out_;
  std::mutex mu_;
};

// Parsed lines; a torn trailing line is ignored.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

struct LearningCurvePoint {
  int generation{0};
  double best_selection_mean{0.0};
  int population_size{1};
  std::optional<ModuleKind> blamed_module;
};

std::vector<LearningCurvePoint> learning_curve(std::span<const GenerationRecord> history);
std::string learning_curve_csv(std::span<const LearningCurvePoint> points);

struct ErrorProgressionRow {
  int generation{0};
  std::array<double, 4> module_percent{};  // pipeline order
  double total_percent{0.0};
};

// Per generation: share of the parent's mini-batch episodes failing first at
// each module, plus the overall failure share. Episodes are matched by
// (genome_id = parent_id, task_id); a missing one raises IncompleteLogs.
std::vector<ErrorProgressionRow> emit_error_progression(std::span<const GenerationRecord> history,
                                                        std::span<const EpisodeRecord> episodes);
std::string error_progression_csv(std::span<const ErrorProgressionRow> rows);

// Creates <root>/run-<seed>-<k> for the smallest unused k.
std::filesystem::path make_run_dir(const std::filesystem::path& root, std::int64_t seed);

struct EvolveOutcome {
  std::filesystem::path run_dir;
  RunResult result;
};

// Full evolve run writing runs/<run-id>/{config.json, history.jsonl,
// episodes.jsonl, snapshot.json, cassette.jsonl, curves.csv}. `transport`
// overrides the HTTP transport built from the environment.
EvolveOutcome run_evolve(const RunConfig& config, Transport* transport = nullptr);

}  // namespace evoloop
