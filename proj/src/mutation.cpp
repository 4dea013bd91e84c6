#include "evoloop/mutation.hpp"

#include <algorithm>
#include <sstream>

#include "evoloop/error.hpp"
#include "evoloop/prompts.hpp"
#include "sections.hpp"

namespace evoloop {
namespace {

std::string one_line(const std::string& s) {
  std::string out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) {
    auto l = detail::trim_view(line);
    if (l.empty()) continue;
    if (!out.empty()) out += ' ';
    out += l;
  }
  return out;
}

const Step* failing_step(const Trajectory& trajectory) {
  for (auto it = trajectory.steps.rbegin(); it != trajectory.steps.rend(); ++it) {
    if (it->observation && !it->observation->ok()) return &*it;
  }
  return nullptr;
}

}  // namespace

MutatorOutput parse_mutator_output(std::string_view text, std::optional<ModuleKind> requested) {
  static const std::vector<std::string_view> kTitles = {"Target module", "Diagnosed error mode",
                                                        "Minimal edit summary", "Revised target module spec"};
  auto sections = detail::split_sections(text, kTitles);
  for (std::size_t i = 0; i < kTitles.size(); ++i) {
    if (!sections[i] || (i == 0 && sections[i]->empty()) || (i == 3 && sections[i]->empty())) {
      throw Error(ErrorCode::MissingSection, "section " + std::to_string(i + 1) + ". " + std::string(kTitles[i]));
    }
  }
  std::string name = one_line(*sections[0]);
  // Tolerate "<caller>" or "caller." around the name.
  while (!name.empty() && (name.front() == '<' || name.front() == '`')) name.erase(name.begin());
  while (!name.empty() && (name.back() == '>' || name.back() == '.' || name.back() == '`')) name.pop_back();
  auto parsed = parse_module_name(detail::trim_view(name));
  if (!parsed) throw Error(ErrorCode::UnknownTarget, "'" + name + "' is not a module");

  MutatorOutput out;
  out.target = *parsed;
  if (requested && *requested != *parsed) {
    out.warnings.push_back("TargetMismatch: reply targets " + std::string(module_name(*parsed)) +
                           ", using requested " + std::string(module_name(*requested)));
    out.target = *requested;
  }
  out.error_mode = one_line(*sections[1]);
  out.edit_summary = one_line(*sections[2]);
  out.revised_spec = *sections[3];
  return out;
}

MutationProposal OracleMutator::propose(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                                        std::span<const DiagnosticEvent>, const BlameReport&) {
  const TaskInstance* task = suite_->find(episode.task_id);
  if (!task) throw Error(ErrorCode::NoMissingTag, "task " + episode.task_id + " not in suite");
  const Step* failed = failing_step(episode.trajectory);
  if (!failed) throw Error(ErrorCode::NoMissingTag, "episode has no failing stage");
  // Scripted trajectories hold four stage steps per subgoal.
  const int subgoal = failed->index / 4;
  const auto missing =
      ScriptedEnvironment::missing_tags(*task, subgoal, target, scripted_tags(parent.text(target)));
  if (missing.empty()) {
    throw Error(ErrorCode::NoMissingTag, "stage (" + std::to_string(subgoal) + ", " +
                                             std::string(module_name(target)) + ") lacks no required tag");
  }
  const std::string& tag = missing.front();
  MutationProposal p;
  p.target = target;
  p.feedback = "Stage (" + std::to_string(subgoal) + ", " + std::string(module_name(target)) +
               ") failed; missing capability " + tag + ".";
  p.error_mode = p.feedback;
  p.edit_summary = "Add rule " + tag + ".";
  p.revised_spec = parent.text(target) + "\nRULE: " + tag;
  return p;
}

std::string ModelMutator::render_prompt(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                                        std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame,
                                        const TaskInstance* task) {
  std::ostringstream packet;
  packet << "task: " << episode.task_id << "\n";
  if (task) packet << "instruction: " << task->instruction << "\n";
  packet << "module-local trajectory:\n";
  // The target module's steps plus one step of context on either side.
  const auto& steps = episode.trajectory.steps;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const bool near = steps[i].acting_module == target ||
                      (i > 0 && steps[i - 1].acting_module == target) ||
                      (i + 1 < steps.size() && steps[i + 1].acting_module == target);
    if (!near) continue;
    Trajectory slice;
    slice.steps.push_back(steps[i]);
    packet << render_trajectory(slice);
  }
  packet << "final outcome: reward " << episode.reward << "\n";
  if (const Step* failed = failing_step(episode.trajectory)) {
    packet << "verifier feedback: " << failed->observation->payload << "\n";
  }
  std::ostringstream rationale;
  rationale << "diagnosis: " << blame.diagnosis << "\nscores:";
  for (ModuleKind m : kAllModules) rationale << " " << module_name(m) << " " << blame.scores[pipeline_index(m)];
  rationale << "\nevidence:\n";
  for (const auto& e : blame.evidence) rationale << "- " << e << "\n";
  rationale << "events:\n" << render_events(diagnostics);
  return render_template(prompts::kMutatorTemplate, {{"target", std::string(module_name(target))},
                                                     {"current_spec", parent.text(target)},
                                                     {"episode", packet.str()},
                                                     {"blame", rationale.str()}});
}

MutationProposal ModelMutator::propose(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                                       std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame) {
  const TaskInstance* task = suite_ ? suite_->find(episode.task_id) : nullptr;
  const std::string prompt = render_prompt(episode, target, parent, diagnostics, blame, task);
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string user = attempt == 0 ? prompt : prompt + std::string(prompts::kFormatRetryNotice);
    const std::string reply = client_.chat({{Role::User, user}});
    try {
      MutatorOutput parsed = parse_mutator_output(reply, target);
      if (parsed.revised_spec.size() > kMaxSpecChars) {
        last_error = "revised spec has " + std::to_string(parsed.revised_spec.size()) + " chars";
        continue;
      }
      MutationProposal p;
      p.target = parsed.target;
      p.error_mode = std::move(parsed.error_mode);
      p.edit_summary = std::move(parsed.edit_summary);
      p.revised_spec = std::move(parsed.revised_spec);
      p.feedback = p.error_mode + " " + p.edit_summary;
      p.warnings = std::move(parsed.warnings);
      return p;
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorCode::MutatorOutputUnparseable, last_error);
}

MutationProposal generate_feedback(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                                   std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame,
                                   Mutator& mutator) {
  return mutator.propose(episode, target, parent, diagnostics, blame);
}

PolicyGenome build_child(const PolicyGenome& parent, const MutationProposal& proposal, int generation) {
  return with_replaced_module(parent, proposal.target, proposal.revised_spec, generation);
}

}  // namespace evoloop
