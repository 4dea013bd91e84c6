#include "evoloop/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evoloop/blame.hpp"
#include "evoloop/error.hpp"
#include "evoloop/evolution.hpp"
#include "evoloop/persistence.hpp"

namespace evoloop {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kUsage =
    "usage: evoloop <command> [options]\n"
    "commands:\n"
    "  evolve  --config <path> [--seed N] [--backend scripted|model] [--cassette-mode M] [--out DIR]\n"
    "  replay  --run <run dir> | --config <path> --cassette <path>   [--out DIR]\n"
    "  eval    --snapshot <path> (--config <path> | --suite <path>)\n"
    "  blame   --episodes <jsonl> [--line N] [--config <path>]\n"
    "  report  --history <jsonl> [--episodes <jsonl>] [--out DIR]\n";

struct CommonFlags {
  std::string config;
  std::optional<std::int64_t> seed;
  std::string backend;
  std::string cassette_mode;
  std::string cassette;
  std::string out;
};

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
  return run_config_from_json(j, fs::path(path).parent_path().string());
}

void apply_overrides(RunConfig& c, const CommonFlags& f) {
  if (f.seed) c.rng_seed = *f.seed;
  if (!f.backend.empty()) {
    if (f.backend == "scripted") c.backend = Backend::Scripted;
    else if (f.backend == "model") c.backend = Backend::Model;
    else throw Error(ErrorCode::ConfigError, "--backend must be scripted or model");
  }
  if (!f.cassette_mode.empty()) {
    auto mode = parse_cassette_mode(f.cassette_mode);
    if (!mode) throw Error(ErrorCode::ConfigError, "--cassette-mode must be record, replay or passthrough");
    c.cassette_mode = *mode;
  }
  if (!f.cassette.empty()) c.cassette = f.cassette;
  if (!f.out.empty()) c.out_dir = f.out;
  if (const char* model = std::getenv("EVOLOOP_MODEL"); model && c.model_id.empty()) c.model_id = model;
}

int finish_run(const EvolveOutcome& outcome, std::ostream& out, std::ostream& err) {
  out << json{{"run_dir", outcome.run_dir.string()},
              {"best_id", outcome.result.best.id()},
              {"best_selection_mean", outcome.result.best_selection_mean},
              {"generations", outcome.result.completed_generations}}
             .dump()
      << "\n";
  if (outcome.result.error) {
    err << "RunAborted: " << *outcome.result.error << "\n";
    return 1;
  }
  return 0;
}

int cmd_eval(const std::string& snapshot_path, const std::string& config_path, const std::string& suite_path,
             std::ostream& out) {
  std::string suite_file = suite_path;
  RunConfig config;
  if (!config_path.empty()) {
    config = load_config(config_path);
    if (suite_file.empty()) suite_file = config.task_suite;
  }
  if (suite_file.empty()) throw Error(ErrorCode::ConfigError, "eval needs --suite or --config");
  if (config.backend != Backend::Scripted) {
    throw Error(ErrorCode::ConfigError, "eval supports the scripted backend only");
  }
  const TaskSuite suite = load_task_suite(suite_file);
  std::vector<ToolDef> tools;
  if (!config.tool_suite.empty()) tools = load_tool_suite(config.tool_suite);
  const ScriptedEnvironment env(tools);
  const ScriptedRuntime runtime;
  const Snapshot snap = load_snapshot(snapshot_path);
  for (const auto& entry : snap.entries) {
    const auto train = evaluate_batch(entry.genome, suite.train, env, runtime);
    const auto sel = evaluate_batch(entry.genome, suite.selection, env, runtime);
    out << json{{"genome_id", entry.genome.id()},
                {"fingerprint", genome_fingerprint(entry.genome)},
                {"train_mean", train.mean_reward},
                {"selection_mean", sel.mean_reward}}
               .dump()
        << "\n";
  }
  return 0;
}

int cmd_blame(const std::string& episodes_path, int line_no, const std::string& config_path, std::ostream& out) {
  const auto lines = read_jsonl(episodes_path);
  if (line_no < 1 || static_cast<std::size_t>(line_no) > lines.size()) {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + " not in " + episodes_path);
  }
  const EpisodeRecord episode = episode_from_json(lines[static_cast<std::size_t>(line_no - 1)]);
  if (episode.reward >= 1.0) throw Error(ErrorCode::NoFailureEvidence, "episode has reward 1; nothing to blame");
  const auto diagnostics = extract_diagnostics(episode.trajectory);

  std::optional<TaskSuite> suite;
  std::unique_ptr<Blamer> blamer = std::make_unique<OracleBlamer>();
  std::unique_ptr<Cassette> cassette;
  std::unique_ptr<HttpTransport> http;
  if (!config_path.empty()) {
    RunConfig config = load_config(config_path);
    if (!config.task_suite.empty()) suite = load_task_suite(config.task_suite);
    if (config.blamer == BlamerKind::Model) {
      cassette = std::make_unique<Cassette>(config.cassette_mode == CassetteMode::Passthrough
                                                ? Cassette(CassetteMode::Passthrough)
                                                : Cassette::open(config.cassette, config.cassette_mode));
      Transport* transport = nullptr;
      if (config.cassette_mode != CassetteMode::Replay) {
        http = HttpTransport::from_env();
        transport = http.get();
      }
      const std::string model = config.blamer_model_id.empty() ? config.model_id : config.blamer_model_id;
      blamer = std::make_unique<ModelBlamer>(LlmClient{cassette.get(), transport, model, 0.0, 16000});
    }
  }
  const TaskInstance* task = suite ? suite->find(episode.task_id) : nullptr;
  const BlameReport report = assign_blame(episode, diagnostics, *blamer, task);
  json events = json::array();
  for (const auto& e : diagnostics) {
    events.push_back({{"step_index", e.step_index},
                      {"module", std::string(module_name(e.module))},
                      {"kind", std::string(event_kind_name(e.kind))},
                      {"verdict", e.verdict == Verdict::Pass ? "PASS" : "FAIL"},
                      {"detail", e.detail}});
  }
  out << json{{"task_id", episode.task_id}, {"events", events}, {"report", blame_report_to_json(report)}}.dump(2)
      << "\n";
  return 0;
}

int cmd_report(const std::string& history_path, const std::string& episodes_path, const std::string& out_dir,
               std::ostream& out) {
  std::vector<GenerationRecord> history;
  for (const auto& j : read_jsonl(history_path)) history.push_back(generation_record_from_json(j));
  const fs::path dir = out_dir.empty() ? fs::path(history_path).parent_path() : fs::path(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);

  auto write = [](const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    f << text;
  };
  const fs::path curves = dir / "curves.csv";
  write(curves, learning_curve_csv(learning_curve(history)));
  out << curves.string() << "\n";

  std::string ep_path = episodes_path;
  if (ep_path.empty()) {
    const fs::path sibling = fs::path(history_path).parent_path() / "episodes.jsonl";
    if (fs::exists(sibling)) ep_path = sibling.string();
  }
  if (!ep_path.empty()) {
    std::vector<EpisodeRecord> episodes;
    for (const auto& j : read_jsonl(ep_path)) episodes.push_back(episode_from_json(j));
    const fs::path progression = dir / "error_progression.csv";
    write(progression, error_progression_csv(emit_error_progression(history, episodes)));
    out << progression.string() << "\n";
  }
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  static const std::vector<std::string> kCommands = {"evolve", "eval", "blame", "report", "replay"};
  if (argv.size() < 2 || argv[1] == "-h" || argv[1] == "--help") {
    (argv.size() < 2 ? err : out) << kUsage;
    return argv.size() < 2 ? 2 : 0;
  }
  if (std::find(kCommands.begin(), kCommands.end(), argv[1]) == kCommands.end()) {
    err << "UnknownCommand: '" << argv[1] << "'\n" << kUsage;
    return 2;
  }

  CLI::App app{"Evolutionary optimizer for modular tool-use policies", "evoloop"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto add_common = [&flags](CLI::App* sub) {
    sub->add_option("--config", flags.config, "run config JSON");
    sub->add_option("--seed", flags.seed, "RNG seed override");
    sub->add_option("--backend", flags.backend, "scripted|model");
    sub->add_option("--cassette-mode", flags.cassette_mode, "record|replay|passthrough");
    sub->add_option("--cassette", flags.cassette, "cassette JSONL path");
    sub->add_option("--out", flags.out, "output directory");
  };

  auto* evolve = app.add_subcommand("evolve", "run the evolutionary loop");
  add_common(evolve);
  auto* replay = app.add_subcommand("replay", "re-run evolve from a recorded cassette");
  add_common(replay);
  std::string run_dir;
  replay->add_option("--run", run_dir, "directory of a recorded run");

  auto* eval = app.add_subcommand("eval", "score a population snapshot");
  std::string snapshot_path, suite_path;
  eval->add_option("--snapshot", snapshot_path)->required();
  eval->add_option("--config", flags.config);
  eval->add_option("--suite", suite_path);

  auto* blame = app.add_subcommand("blame", "blame one stored episode");
  std::string episodes_path;
  int line_no = 1;
  blame->add_option("--episodes", episodes_path)->required();
  blame->add_option("--line", line_no, "1-based line number");
  blame->add_option("--config", flags.config);

  auto* report = app.add_subcommand("report", "emit learning-curve and error-progression CSVs");
  std::string history_path, report_episodes;
  report->add_option("--history", history_path)->required();
  report->add_option("--episodes", report_episodes);
  report->add_option("--out", flags.out);

  std::vector<std::string> args(argv.rbegin(), argv.rend() - 1);  // CLI11 wants reversed, without argv[0]
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "ConfigError: " << e.what() << "\n" << kUsage;
    return 2;
  }

  try {
    if (evolve->parsed()) {
      if (flags.config.empty()) throw Error(ErrorCode::ConfigError, "evolve needs --config");
      RunConfig config = load_config(flags.config);
      apply_overrides(config, flags);
      return finish_run(run_evolve(config), out, err);
    }
    if (replay->parsed()) {
      RunConfig config;
      if (!run_dir.empty()) {
        config = load_config((fs::path(run_dir) / "config.json").string());
        config.cassette = (fs::path(run_dir) / "cassette.jsonl").string();
        if (flags.out.empty()) config.out_dir = fs::path(run_dir).parent_path().string();
      } else if (!flags.config.empty()) {
        config = load_config(flags.config);
      } else {
        throw Error(ErrorCode::ConfigError, "replay needs --run or --config");
      }
      flags.cassette_mode.clear();
      apply_overrides(config, flags);
      config.cassette_mode = CassetteMode::Replay;
      return finish_run(run_evolve(config), out, err);
    }
    if (eval->parsed()) return cmd_eval(snapshot_path, flags.config, suite_path, out);
    if (blame->parsed()) return cmd_blame(episodes_path, line_no, flags.config, out);
    if (report->parsed()) return cmd_report(history_path, report_episodes, flags.out, out);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "Error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace evoloop
