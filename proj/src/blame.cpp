#include "evoloop/blame.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "evoloop/error.hpp"
#include "evoloop/prompts.hpp"
#include "sections.hpp"

namespace evoloop {
namespace {

using nlohmann::json;

DiagnosticEvent classify(const Step& step) {
  const Observation& obs = *step.observation;
  DiagnosticEvent ev{step.index, step.acting_module, EventKind::ExecutionOutcome, Verdict::Pass, obs.payload};
  const auto has = [&](OutcomeFlag f) { return obs.outcome_flags.count(f) > 0; };
  if (has(OutcomeFlag::WrongTool)) {
    ev.module = ModuleKind::Selector;
    ev.kind = EventKind::ToolChoiceOutcome;
    ev.verdict = Verdict::Fail;
  } else if (has(OutcomeFlag::SchemaViolation)) {
    ev.module = ModuleKind::Caller;
    ev.kind = EventKind::ArgumentValidity;
    ev.verdict = Verdict::Fail;
  } else if (has(OutcomeFlag::ExecError)) {
    ev.module = ModuleKind::Caller;
    ev.kind = EventKind::ExecutionOutcome;
    ev.verdict = Verdict::Fail;
  } else if (has(OutcomeFlag::Ungrounded)) {
    ev.module = ModuleKind::Synthesizer;
    ev.kind = EventKind::SynthesisGrounding;
    ev.verdict = Verdict::Fail;
  } else if (has(OutcomeFlag::Empty)) {
    // An empty plan is the planner's; an empty result elsewhere is charged to
    // the acting module.
    ev.kind = EventKind::ExecutionOutcome;
    ev.verdict = Verdict::Fail;
  } else {
    switch (step.acting_module) {
      case ModuleKind::Planner: ev.kind = EventKind::ExecutionOutcome; break;
      case ModuleKind::Selector: ev.kind = EventKind::ToolChoiceOutcome; break;
      case ModuleKind::Caller: ev.kind = EventKind::ArgumentValidity; break;
      case ModuleKind::Synthesizer: ev.kind = EventKind::SynthesisGrounding; break;
    }
  }
  return ev;
}

std::optional<double> parse_number(std::string_view token) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(value)) return value;
    // Allow one trailing punctuation mark, e.g. "0.8," or "0.8.".
    if (token.empty() || std::string_view(",;.").find(token.back()) == std::string_view::npos) break;
    token.remove_suffix(1);
  }
  return std::nullopt;
}

std::string verdict_name(Verdict v) { return v == Verdict::Pass ? "PASS" : "FAIL"; }

}  // namespace

std::string_view event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::ToolChoiceOutcome: return "TOOL_CHOICE_OUTCOME";
    case EventKind::ArgumentValidity: return "ARGUMENT_VALIDITY";
    case EventKind::ExecutionOutcome: return "EXECUTION_OUTCOME";
    case EventKind::SynthesisGrounding: return "SYNTHESIS_GROUNDING";
  }
  return "EXECUTION_OUTCOME";
}

json blame_report_to_json(const BlameReport& r) {
  json scores = json::object();
  for (ModuleKind m : kAllModules) scores[std::string(module_name(m))] = r.scores[pipeline_index(m)];
  return {{"scores", scores},
          {"target", std::string(module_name(r.target))},
          {"evidence", r.evidence},
          {"diagnosis", r.diagnosis},
          {"fallback", r.fallback},
          {"warnings", r.warnings}};
}

std::vector<DiagnosticEvent> extract_diagnostics(const Trajectory& trajectory) {
  if (trajectory.steps.empty()) throw Error(ErrorCode::EmptyTrajectory, "no steps to diagnose");
  std::vector<DiagnosticEvent> events;
  for (const auto& step : trajectory.steps) {
    if (step.action.kind == ActionKind::Finish || !step.observation) continue;
    events.push_back(classify(step));
  }
  return events;
}

std::string render_events(std::span<const DiagnosticEvent> events) {
  std::ostringstream out;
  for (const auto& e : events) {
    out << "step " << e.step_index << " " << module_name(e.module) << " " << event_kind_name(e.kind) << " "
        << verdict_name(e.verdict) << ": " << e.detail << "\n";
  }
  return out.str();
}

ModuleKind argmax_target(const ModuleScores& scores) {
  ModuleKind best = ModuleKind::Planner;
  for (ModuleKind m : kAllModules) {
    if (scores[pipeline_index(m)] > scores[pipeline_index(best)]) best = m;
  }
  return best;
}

BlamerOutput parse_blamer_output(std::string_view text) {
  static const std::vector<std::string_view> kTitles = {"Scores", "Evidence", "One sentence diagnosis"};
  auto sections = detail::split_sections(text, kTitles);
  for (std::size_t i = 0; i < kTitles.size(); ++i) {
    if (!sections[i]) {
      throw Error(ErrorCode::MissingSection, "section " + std::to_string(i + 1) + ". " + std::string(kTitles[i]));
    }
  }

  // Tokenize the score block; each module name must be followed by its value.
  std::vector<std::string> tokens;
  {
    std::string cleaned = *sections[0];
    for (char& c : cleaned) {
      if (c == ':' || c == '=' || c == '|' || c == '*') c = ' ';
    }
    std::istringstream in(cleaned);
    for (std::string tok; in >> tok;) tokens.push_back(tok);
  }
  BlamerOutput out;
  std::array<bool, 4> seen{};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto module = parse_module_name(tokens[i]);
    if (!module || seen[pipeline_index(*module)]) continue;
    if (i + 1 >= tokens.size()) {
      throw Error(ErrorCode::MissingScore, std::string(module_name(*module)) + " has no value");
    }
    auto value = parse_number(tokens[i + 1]);
    if (!value) {
      throw Error(ErrorCode::NonNumericScore,
                  std::string(module_name(*module)) + " score '" + tokens[i + 1] + "' is not a number");
    }
    out.scores[pipeline_index(*module)] = *value;
    seen[pipeline_index(*module)] = true;
    ++i;
  }
  for (ModuleKind m : kAllModules) {
    if (!seen[pipeline_index(m)]) throw Error(ErrorCode::MissingScore, std::string(module_name(m)) + " score absent");
  }

  for (ModuleKind m : kAllModules) {
    double& s = out.scores[pipeline_index(m)];
    if (s < 0.0) {
      out.warnings.push_back(std::string(module_name(m)) + " score " + std::to_string(s) + " clamped to 0");
      s = 0.0;
    }
  }
  const double top = *std::max_element(out.scores.begin(), out.scores.end());
  if (top > 1.0) {
    out.warnings.push_back("scores exceed 1 (max " + std::to_string(top) + "); rescaled by 1/max");
    for (double& s : out.scores) s /= top;
  }

  std::istringstream ev(*sections[1]);
  for (std::string line; std::getline(ev, line);) {
    std::string_view l = detail::trim_view(line);
    if (l.starts_with("- ") || l.starts_with("* ")) l = detail::trim_view(l.substr(2));
    if (!l.empty()) out.evidence.emplace_back(l);
  }

  std::istringstream dg(*sections[2]);
  for (std::string line; std::getline(dg, line);) {
    std::string_view l = detail::trim_view(line);
    if (l.empty()) continue;
    if (!out.diagnosis.empty()) out.diagnosis += ' ';
    out.diagnosis += l;
  }
  if (out.diagnosis.empty()) throw Error(ErrorCode::MissingSection, "diagnosis is empty");
  return out;
}

std::optional<ModuleKind> first_failing_module(std::span<const DiagnosticEvent> diagnostics) {
  for (const auto& e : diagnostics) {
    if (e.verdict == Verdict::Fail) return e.module;
  }
  return std::nullopt;
}

BlameReport OracleBlamer::blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                                const TaskInstance*) {
  auto it = std::find_if(diagnostics.begin(), diagnostics.end(),
                         [](const DiagnosticEvent& e) { return e.verdict == Verdict::Fail; });
  if (it == diagnostics.end()) {
    throw Error(ErrorCode::NoFailureEvidence, "episode " + episode.task_id + " has reward " +
                                                  std::to_string(episode.reward) + " but no FAIL event");
  }
  BlameReport r;
  r.target = it->module;
  r.scores[pipeline_index(r.target)] = 1.0;
  for (const auto& e : diagnostics) {
    r.evidence.push_back("step " + std::to_string(e.step_index) + " " + std::string(module_name(e.module)) + " " +
                         std::string(event_kind_name(e.kind)) + " " + verdict_name(e.verdict));
  }
  r.diagnosis = "The " + std::string(module_name(r.target)) + " produced the earliest failing event at step " +
                std::to_string(it->step_index) + ".";
  return r;
}

BlameReport RandomBlamer::blame(const EpisodeRecord&, std::span<const DiagnosticEvent>, const TaskInstance*) {
  BlameReport r;
  r.target = kAllModules[static_cast<std::size_t>(rng_() % 4)];
  r.scores[pipeline_index(r.target)] = 1.0;
  r.diagnosis = "Randomly targeted " + std::string(module_name(r.target)) + ".";
  return r;
}

std::string ModelBlamer::render_prompt(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                                       const TaskInstance* task) {
  std::string task_text = "id: " + episode.task_id;
  if (task) task_text += "\ninstruction: " + task->instruction;
  const std::string outcome = std::string(episode.reward >= 1.0 ? "1" : "0") +
                              " (reward " + std::to_string(episode.reward) + ")";
  return render_template(prompts::kBlamerTemplate, {{"task", task_text},
                                                    {"trajectory", render_trajectory(episode.trajectory)},
                                                    {"events", render_events(diagnostics)},
                                                    {"outcome", outcome}});
}

BlameReport ModelBlamer::blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                               const TaskInstance* task) {
  const std::string prompt = render_prompt(episode, diagnostics, task);
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string user = attempt == 0 ? prompt : prompt + std::string(prompts::kFormatRetryNotice);
    const std::string reply = client_.chat({{Role::User, user}});
    try {
      BlamerOutput parsed = parse_blamer_output(reply);
      BlameReport r;
      r.scores = parsed.scores;
      r.target = argmax_target(parsed.scores);
      r.evidence = std::move(parsed.evidence);
      r.diagnosis = std::move(parsed.diagnosis);
      r.warnings = std::move(parsed.warnings);
      return r;
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  auto heuristic = first_failing_module(diagnostics);
  if (!heuristic) {
    throw Error(ErrorCode::BlamerOutputUnparseable, last_error + " (no FAIL event to fall back on)");
  }
  BlameReport r;
  r.target = *heuristic;
  r.scores[pipeline_index(r.target)] = 1.0;
  r.fallback = true;
  r.diagnosis = "Fallback to the earliest failing module after an unparseable blamer reply.";
  r.warnings.push_back("BlamerOutputUnparseable: " + last_error);
  return r;
}

BlameReport assign_blame(const EpisodeRecord& episode, std::span<const DiagnosticEvent> diagnostics,
                         Blamer& blamer, const TaskInstance* task) {
  if (episode.reward >= 1.0) {
    throw std::invalid_argument("assign_blame requires an imperfect episode (reward < 1)");
  }
  return blamer.blame(episode, diagnostics, task);
}

std::optional<std::size_t> select_blame_episode(std::span<const EpisodeRecord> episodes) {
  if (episodes.empty()) throw Error(ErrorCode::EmptyBatch, "no episodes to blame");
  std::size_t worst = 0;
  for (std::size_t i = 1; i < episodes.size(); ++i) {
    if (episodes[i].reward < episodes[worst].reward) worst = i;
  }
  if (episodes[worst].reward >= 1.0) return std::nullopt;
  return worst;
}

}  // namespace evoloop
