#include "evoloop/persistence.hpp"

#include <cstdio>
#include <map>
#include <memory>
#include <sstream>

#include "evoloop/blame.hpp"
#include "evoloop/error.hpp"
#include "evoloop/mutation.hpp"

namespace evoloop {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

// Streams episodes and generations into the run directory.
class RunWriter final : public RunObserver {
 public:
  explicit RunWriter(const fs::path& dir) : dir_(dir), history_(dir / "history.jsonl"), episodes_(dir / "episodes.jsonl") {}

  void on_episode(const EpisodeRecord& e) override { episodes_.write(episode_to_json(e)); }
  void on_generation(const GenerationRecord& r, std::span<const PopulationEntry> population) override {
    history_.write(generation_record_to_json(r));
    Snapshot snap{r.generation, {population.begin(), population.end()}};
    save_snapshot(snap, dir_ / "snapshot.json");
  }

 private:
  fs::path dir_;
  JsonlWriter history_;
  JsonlWriter episodes_;
};

}  // namespace

json snapshot_to_json(const Snapshot& s) {
  json entries = json::array();
  for (const auto& e : s.entries) {
    entries.push_back({{"genome", genome_to_json(e.genome)},
                       {"win_frequency", e.win_frequency},
                       {"selection_scores", e.selection_scores}});
  }
  return {{"schema_version", kSnapshotSchemaVersion}, {"generation", s.generation}, {"entries", entries}};
}

Snapshot snapshot_from_json(const json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kSnapshotSchemaVersion) {
      throw Error(ErrorCode::SchemaVersionMismatch, "snapshot schema " + std::to_string(version) + ", expected " +
                                                        std::to_string(kSnapshotSchemaVersion));
    }
    Snapshot s;
    s.generation = j.at("generation").get<int>();
    for (const auto& e : j.at("entries")) {
      s.entries.push_back(PopulationEntry{genome_from_json(e.at("genome")), e.at("win_frequency").get<double>(),
                                          e.at("selection_scores").get<std::map<std::string, double>>()});
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("snapshot: ") + e.what());
  }
}

void save_snapshot(const Snapshot& snapshot, const fs::path& path) {
  write_text(path, snapshot_to_json(snapshot).dump(2) + "\n");
}

Snapshot load_snapshot(const fs::path& path) { return snapshot_from_json(read_json(path)); }

JsonlWriter::JsonlWriter(const fs::path& path) : out_(path, std::ios::app | std::ios::binary) {
  if (!out_) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for append");
}

void JsonlWriter::write(const json& line) {
  std::lock_guard lock(mu_);
  out_ << line.dump() << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::IoError, "append failed");
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (in.peek() == std::char_traits<char>::eof()) break;  // torn trailing write
      throw Error(ErrorCode::ParseError, path.string() + ": malformed line");
    }
    lines.push_back(std::move(j));
  }
  return lines;
}

std::vector<LearningCurvePoint> learning_curve(std::span<const GenerationRecord> history) {
  std::vector<LearningCurvePoint> points;
  for (const auto& r : history) {
    points.push_back({r.generation, r.best_selection_mean, static_cast<int>(r.population_ids_after.size()),
                      r.blame_target});
  }
  return points;
}

std::string learning_curve_csv(std::span<const LearningCurvePoint> points) {
  std::string out = "generation,best_selection_mean,population_size,blamed_module\n";
  for (const auto& p : points) {
    out += std::to_string(p.generation) + "," + fmt_number(p.best_selection_mean) + "," +
           std::to_string(p.population_size) + "," +
           (p.blamed_module ? std::string(module_name(*p.blamed_module)) : std::string()) + "\n";
  }
  return out;
}

std::vector<ErrorProgressionRow> emit_error_progression(std::span<const GenerationRecord> history,
                                                        std::span<const EpisodeRecord> episodes) {
  std::map<std::pair<std::string, std::string>, const EpisodeRecord*> index;
  for (const auto& e : episodes) index.emplace(std::make_pair(e.genome_id, e.task_id), &e);

  std::vector<ErrorProgressionRow> rows;
  for (const auto& r : history) {
    ErrorProgressionRow row;
    row.generation = r.generation;
    if (r.minibatch_task_ids.empty()) throw Error(ErrorCode::IncompleteLogs, "generation without a mini-batch");
    std::array<int, 4> per_module{};
    int failures = 0;
    for (const auto& task_id : r.minibatch_task_ids) {
      auto it = index.find({r.parent_id, task_id});
      if (it == index.end()) {
        throw Error(ErrorCode::IncompleteLogs, "no episode for genome " + r.parent_id + " on task " + task_id);
      }
      const EpisodeRecord& e = *it->second;
      if (e.reward >= 1.0) continue;
      ++failures;
      if (auto m = first_failing_module(extract_diagnostics(e.trajectory))) ++per_module[pipeline_index(*m)];
    }
    const double n = static_cast<double>(r.minibatch_task_ids.size());
    for (std::size_t k = 0; k < 4; ++k) row.module_percent[k] = 100.0 * per_module[k] / n;
    row.total_percent = 100.0 * failures / n;
    rows.push_back(row);
  }
  return rows;
}

std::string error_progression_csv(std::span<const ErrorProgressionRow> rows) {
  std::string out = "generation,planner_pct,selector_pct,caller_pct,synthesizer_pct,total_pct\n";
  for (const auto& r : rows) {
    out += std::to_string(r.generation);
    for (double v : r.module_percent) out += "," + fmt_number(v);
    out += "," + fmt_number(r.total_percent) + "\n";
  }
  return out;
}

fs::path make_run_dir(const fs::path& root, std::int64_t seed) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + root.string() + ": " + ec.message());
  for (int k = 0;; ++k) {
    fs::path dir = root / ("run-" + std::to_string(seed) + "-" + std::to_string(k));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  }
}

EvolveOutcome run_evolve(const RunConfig& config, Transport* transport) {
  if (config.task_suite.empty()) throw Error(ErrorCode::ConfigError, "task_suite is required");
  const TaskSuite suite = load_task_suite(config.task_suite);
  std::vector<ToolDef> tools;
  if (!config.tool_suite.empty()) tools = load_tool_suite(config.tool_suite);

  const fs::path run_dir = make_run_dir(config.out_dir, config.rng_seed);
  write_text(run_dir / "config.json", run_config_to_json(config).dump(2) + "\n");

  const bool uses_model = config.backend == Backend::Model || config.blamer == BlamerKind::Model ||
                          config.mutator == MutatorKind::Model;
  std::unique_ptr<Cassette> cassette;
  std::unique_ptr<HttpTransport> http;
  if (uses_model) {
    const fs::path tape = run_dir / "cassette.jsonl";
    switch (config.cassette_mode) {
      case CassetteMode::Replay:
        if (config.cassette.empty()) throw Error(ErrorCode::ConfigError, "replay needs a cassette path");
        fs::copy_file(config.cassette, tape);
        cassette = std::make_unique<Cassette>(Cassette::open(tape, CassetteMode::Replay));
        break;
      case CassetteMode::Record:
        if (!config.cassette.empty() && fs::exists(config.cassette)) fs::copy_file(config.cassette, tape);
        cassette = std::make_unique<Cassette>(Cassette::open(tape, CassetteMode::Record));
        break;
      case CassetteMode::Passthrough:
        cassette = std::make_unique<Cassette>(CassetteMode::Passthrough);
        break;
    }
    if (!transport && config.cassette_mode != CassetteMode::Replay) {
      http = HttpTransport::from_env();
      transport = http.get();
    }
  }
  auto client_for = [&](const std::string& role_model) {
    return LlmClient{cassette.get(), transport, role_model.empty() ? config.model_id : role_model, 0.0, 16000};
  };

  const ScriptedEnvironment env(tools);
  std::unique_ptr<ModuleRuntime> runtime;
  if (config.backend == Backend::Model) {
    runtime = std::make_unique<ModelRuntime>(client_for(config.model_id));
  } else {
    runtime = std::make_unique<ScriptedRuntime>();
  }
  std::unique_ptr<Blamer> blamer;
  switch (config.blamer) {
    case BlamerKind::Oracle: blamer = std::make_unique<OracleBlamer>(); break;
    case BlamerKind::Random: blamer = std::make_unique<RandomBlamer>(static_cast<std::uint64_t>(config.rng_seed)); break;
    case BlamerKind::Model: blamer = std::make_unique<ModelBlamer>(client_for(config.blamer_model_id)); break;
  }
  std::unique_ptr<Mutator> mutator;
  if (config.mutator == MutatorKind::Model) {
    mutator = std::make_unique<ModelMutator>(client_for(config.mutator_model_id), &suite);
  } else {
    mutator = std::make_unique<OracleMutator>(suite);
  }

  RunWriter writer(run_dir);
  EvolveOutcome outcome{run_dir, run_generations(config, suite, env, *runtime, *blamer, *mutator, &writer)};
  save_snapshot(Snapshot{outcome.result.completed_generations, outcome.result.population},
                outcome.run_dir / "snapshot.json");
  write_text(outcome.run_dir / "curves.csv", learning_curve_csv(learning_curve(outcome.result.history)));
  if (outcome.result.error) {
    write_text(outcome.run_dir / "error.json", json{{"error", *outcome.result.error}}.dump(2) + "\n");
  }
  return outcome;
}

}  // namespace evoloop
