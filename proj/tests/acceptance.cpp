// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "evoloop/blame.hpp"
#include "evoloop/error.hpp"
#include "evoloop/evolution.hpp"
#include "evoloop/mutation.hpp"
#include "evoloop/persistence.hpp"
#include "testing/fixtures.hpp"

using namespace evoloop;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Keeps every population snapshot the loop publishes.
struct Recorder final : RunObserver {
  std::vector<std::vector<PopulationEntry>> populations;
  void on_generation(const GenerationRecord&, std::span<const PopulationEntry> population) override {
    populations.emplace_back(population.begin(), population.end());
  }
};

RunResult observed_run(const TaskSuite& suite, int generations, std::int64_t seed, Recorder& rec) {
  RunConfig config;
  config.max_generations = generations;
  config.rng_seed = seed;
  const ScriptedEnvironment env;
  const ScriptedRuntime runtime;
  OracleBlamer blamer;
  OracleMutator mutator(suite);
  return run_generations(config, suite, env, runtime, blamer, mutator, &rec);
}

const TaskSuite& convergence() {
  static const TaskSuite suite = load_task_suite(testing::data_path("convergence_suite.json"));
  return suite;
}

// Forwards to the oracle and keeps every (parent, proposal) pair it produced.
struct RecordingMutator final : Mutator {
  explicit RecordingMutator(const TaskSuite& suite) : inner(suite) {}
  MutationProposal propose(const EpisodeRecord& episode, ModuleKind target, const PolicyGenome& parent,
                           std::span<const DiagnosticEvent> diagnostics, const BlameReport& blame) override {
    auto p = inner.propose(episode, target, parent, diagnostics, blame);
    proposals.emplace_back(parent, p);
    return p;
  }
  OracleMutator inner;
  std::vector<std::pair<PolicyGenome, MutationProposal>> proposals;
};

CriterionResult single_module_mutation() {
  const auto t0 = Clock::now();
  Recorder rec;
  RunConfig config;
  config.max_generations = 40;
  config.rng_seed = 0;
  const ScriptedEnvironment env;
  const ScriptedRuntime runtime;
  OracleBlamer blamer;
  RecordingMutator mutator(convergence());
  const auto res = run_generations(config, convergence(), env, runtime, blamer, mutator, &rec);
  const double elapsed = seconds_since(t0);

  // Every child the loop built, rebuilt from its recorded parent and proposal.
  std::map<std::string, PolicyGenome> children;
  for (std::size_t i = 0; i < mutator.proposals.size(); ++i) {
    const auto& [parent, proposal] = mutator.proposals[i];
    const auto child = build_child(parent, proposal, static_cast<int>(i) + 1);
    children.emplace(child.id(), child);
    children.emplace(parent.id(), parent);
  }
  for (const auto& pop : rec.populations) {
    for (const auto& e : pop) children.emplace(e.genome.id(), e.genome);
  }
  int lineage = 0, sound = 0;
  for (const auto& [id, g] : children) {
    if (!g.parent_id()) continue;
    ++lineage;
    auto parent = children.find(*g.parent_id());
    if (parent == children.end()) continue;
    const auto diff = differing_modules(parent->second, g);
    if (diff.size() == 1 && diff.front() == g.mutated_module()) ++sound;
  }
  std::ostringstream d;
  d << sound << "/" << lineage << " lineage entries edit exactly one module (" << mutator.proposals.size()
    << " children built); " << elapsed << " s";
  return {!res.error && lineage > 0 && sound == lineage && elapsed < 10.0, d.str()};
}

CriterionResult acceptance_gate() {
  Recorder rec;
  const auto res = observed_run(convergence(), 40, 0, rec);
  const ScriptedEnvironment env;
  const ScriptedRuntime runtime;
  std::map<std::string, const GenerationRecord*> by_child;
  for (const auto& r : res.history) {
    if (r.child_id && r.accepted) by_child[*r.child_id] = &r;
  }
  std::set<std::string> members;
  for (const auto& pop : rec.populations) {
    for (const auto& e : pop) {
      if (e.genome.parent_id()) members.insert(e.genome.id());
    }
  }
  int ok = 0;
  for (const auto& pop : rec.populations) {
    for (const auto& e : pop) {
      if (!e.genome.parent_id() || !members.count(e.genome.id())) continue;
      members.erase(e.genome.id());
      auto it = by_child.find(e.genome.id());
      if (it == by_child.end()) continue;
      const GenerationRecord& r = *it->second;
      // Recompute the child's mean on the recorded mini-batch.
      std::vector<TaskInstance> batch;
      for (const auto& id : r.minibatch_task_ids) batch.push_back(*convergence().find(id));
      const double child_mean = evaluate_batch(e.genome, batch, env, runtime).mean_reward;
      if (r.child_mean && *r.child_mean > r.parent_mean && child_mean == *r.child_mean) ++ok;
    }
  }
  std::set<std::string> distinct;
  for (const auto& pop : rec.populations) {
    for (const auto& e : pop) {
      if (e.genome.parent_id()) distinct.insert(e.genome.id());
    }
  }
  int rejected_ties = 0;
  for (const auto& r : res.history) {
    if (r.child_mean && *r.child_mean == r.parent_mean && !r.accepted) ++rejected_ties;
  }
  const bool boundary = !accept_child(0.5, 0.5) && accept_child(0.5, 0.75) && !accept_child(1.0, 1.0);
  std::ostringstream d;
  d << ok << "/" << distinct.size() << " non-seed members strictly improved on their mini-batch; "
    << rejected_ties << " equal-mean children rejected; accept_child(0.5, 0.5) = " << (accept_child(0.5, 0.5) ? "true" : "false");
  return {boundary && !distinct.empty() && ok == static_cast<int>(distinct.size()), d.str()};
}

CriterionResult selection_soundness() {
  Recorder rec;
  const auto res = observed_run(convergence(), 40, 0, rec);
  const auto& sel = convergence().selection;
  int gens_ok = 0;
  double worst_sum_error = 0.0;
  for (std::size_t g = 0; g < rec.populations.size(); ++g) {
    const auto& pop = rec.populations[g];
    // Brute-force winners over the retained set, ties to creation order.
    std::map<std::string, int> wins;
    for (const auto& t : sel) {
      std::size_t w = 0;
      for (std::size_t i = 1; i < pop.size(); ++i) {
        if (pop[i].selection_scores.at(t.id) > pop[w].selection_scores.at(t.id)) w = i;
      }
      ++wins[pop[w].genome.id()];
    }
    bool ok = true;
    double sum = 0.0;
    for (const auto& e : pop) {
      ok = ok && wins[e.genome.id()] >= 1;
      ok = ok && std::abs(e.win_frequency - wins[e.genome.id()] / static_cast<double>(sel.size())) < 1e-12;
      sum += e.win_frequency;
    }
    worst_sum_error = std::max(worst_sum_error, std::abs(sum - 1.0));
    if (ok && std::abs(sum - 1.0) <= 1e-9) ++gens_ok;
  }

  std::vector<TaskInstance> four;
  for (int i = 0; i < 4; ++i) four.push_back(testing::make_task("x" + std::to_string(i), 1, {}));
  const std::map<std::string, std::vector<double>> table{{"A", {1, 0.5, 1, 0}}, {"B", {0.5, 1, 1, 1}}};
  auto named = [](const std::string& id) {
    return new_seed_genome({{ModuleKind::Planner, id}, {ModuleKind::Selector, "s"}, {ModuleKind::Caller, "c"}, {ModuleKind::Synthesizer, "y"}}, id);
  };
  const auto worked = select_population({{named("A"), 0, {}}, {named("B"), 0, {}}}, four,
                                        [&](const PolicyGenome& g, const TaskInstance& t) {
                                          return table.at(g.id()).at(std::stoul(t.id.substr(1)));
                                        });
  const bool example = worked.retained.size() == 2 && worked.win_frequencies.at("A") == 0.5 &&
                       worked.win_frequencies.at("B") == 0.5;
  std::ostringstream d;
  d << gens_ok << "/" << rec.populations.size() << " generations sound; max |sum w - 1| = " << worst_sum_error
    << "; worked example w(A)=" << worked.win_frequencies.at("A") << " w(B)=" << worked.win_frequencies.at("B");
  return {example && gens_ok == static_cast<int>(rec.populations.size()) && !rec.populations.empty(), d.str()};
}

CriterionResult closed_loop_convergence() {
  const auto t0 = Clock::now();
  const auto res = testing::run_scripted(convergence(), 40, 0);
  const double elapsed = seconds_since(t0);
  bool monotone = true;
  double prev = 0.0;
  int reached = -1;
  for (const auto& r : res.history) {
    monotone = monotone && r.best_selection_mean >= prev;
    prev = r.best_selection_mean;
    if (reached < 0 && r.best_selection_mean == 1.0) reached = r.generation;
  }
  std::ostringstream d;
  d << "best mean S_sel " << res.best_selection_mean << " (first at generation " << reached << "); best-so-far "
    << (monotone ? "non-decreasing" : "DECREASES") << "; " << elapsed << " s";
  return {!res.error && res.best_selection_mean == 1.0 && monotone && elapsed < 10.0, d.str()};
}

CriterionResult blame_ablation() {
  int lower = 0;
  std::ostringstream d;
  d << "oracle/random per seed:";
  for (int seed = 0; seed < 5; ++seed) {
    const auto oracle = testing::run_scripted(convergence(), 40, seed, BlamerKind::Oracle);
    const auto random = testing::run_scripted(convergence(), 40, seed, BlamerKind::Random);
    lower += random.best_selection_mean < oracle.best_selection_mean;
    d << " " << oracle.best_selection_mean << "/" << random.best_selection_mean;
  }
  d << "; random strictly lower in " << lower << "/5";
  return {lower >= 4, d.str()};
}

CriterionResult selection_ablation() {
  const auto clusters = load_task_suite(testing::data_path("cluster_suite.json"));
  int never_above = 0, strictly_below = 0;
  std::ostringstream d;
  d << "diversity/greedy per seed:";
  for (int seed = 0; seed < 5; ++seed) {
    const auto diverse = testing::run_scripted(clusters, 40, seed, BlamerKind::Oracle, SelectionRule::Diversity);
    const auto greedy = testing::run_scripted(clusters, 40, seed, BlamerKind::Oracle, SelectionRule::Greedy);
    never_above += greedy.best_selection_mean <= diverse.best_selection_mean;
    strictly_below += greedy.best_selection_mean < diverse.best_selection_mean;
    d << " " << diverse.best_selection_mean << "/" << greedy.best_selection_mean;
  }
  d << "; greedy <= diversity in " << never_above << "/5, strictly lower in " << strictly_below << "/5";
  return {never_above == 5 && strictly_below >= 3, d.str()};
}

// Earliest stage whose required tags the genome lacks, straight from the task definition.
std::optional<ModuleKind> first_gap(const PolicyGenome& g, const TaskInstance& t) {
  for (int sg = 0; sg < t.num_subgoals; ++sg) {
    for (ModuleKind m : kAllModules) {
      auto it = t.required_skills.find({sg, m});
      if (it == t.required_skills.end()) continue;
      const auto have = scripted_tags(g.text(m));
      for (const auto& tag : it->second) {
        if (!have.count(tag)) return m;
      }
    }
  }
  return std::nullopt;
}

CriterionResult blame_oracle_exactness() {
  std::mt19937_64 rng(2024);
  const std::vector<std::string> pool = {"t0", "t1", "t2", "t3", "t4", "t5"};
  const ScriptedEnvironment env;
  const ScriptedRuntime runtime;
  OracleBlamer oracle;
  int episodes = 0, exact = 0, attempts = 0;
  while (episodes < 200 && attempts < 100000) {
    ++attempts;
    const int n = 1 + static_cast<int>(rng() % 3);
    SkillMap req;
    for (int sg = 0; sg < n; ++sg) {
      for (ModuleKind m : kAllModules) {
        if (rng() % 3 == 0) continue;
        req[{sg, m}].insert(pool[rng() % pool.size()]);
      }
    }
    const auto task = testing::make_task("r" + std::to_string(attempts), n, req, "gold");
    std::map<ModuleKind, std::vector<std::string>> rules;
    for (ModuleKind m : kAllModules) {
      for (const auto& tag : pool) {
        if (rng() % 4 != 0) rules[m].push_back(tag);
      }
    }
    const auto genome = testing::genome_with_rules(rules);
    const auto ep = execute_episode(genome, task, env, runtime);
    if (ep.reward >= 1.0) continue;
    ++episodes;
    const auto expected = first_gap(genome, task);
    const auto report = assign_blame(ep, extract_diagnostics(ep.trajectory), oracle, &task);
    if (expected && report.target == *expected) ++exact;
  }
  std::ostringstream d;
  d << exact << "/" << episodes << " random failing episodes blamed on the first failing stage";
  return {episodes == 200 && exact == 200, d.str()};
}

template <typename Fn>
std::optional<ErrorCode> error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

CriterionResult parser_round_trips() {
  std::mt19937_64 rng(99);
  int blamer_ok = 0, mutator_ok = 0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    ModuleScores s{};
    std::ostringstream text;
    text << "1. Scores\n";
    for (ModuleKind m : kAllModules) {
      s[pipeline_index(m)] = static_cast<double>(rng() % 101) / 100.0;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", s[pipeline_index(m)]);
      text << module_name(m) << " " << buf << (i % 2 ? "\n" : " ");
    }
    const std::string ev1 = "step " + std::to_string(i) + " caller sent a bad id";
    const std::string diag = "Diagnosis number " + std::to_string(i) + ".";
    text << "\n2. Evidence\n- " << ev1 << "\n- second item\n\n3. One sentence diagnosis\n" << diag << "\n";
    const auto out = parse_blamer_output(text.str());
    if (out.scores == s && out.evidence == std::vector<std::string>{ev1, "second item"} && out.diagnosis == diag &&
        out.warnings.empty()) {
      ++blamer_ok;
    }

    const ModuleKind target = kAllModules[rng() % 4];
    const std::string spec = "You are module " + std::to_string(i) + ".\n\nStep one.\nRULE: tag-" + std::to_string(i);
    const std::string reply = "1. Target module\n" + std::string(module_name(target)) +
                              "\n\n2. Diagnosed error mode\nMode " + std::to_string(i) +
                              ".\n\n3. Minimal edit summary\nEdit " + std::to_string(i) +
                              ".\n\n4. Revised target module spec\n" + spec + "\n";
    const auto mo = parse_mutator_output(reply, target);
    if (mo.target == target && mo.error_mode == "Mode " + std::to_string(i) + "." &&
        mo.edit_summary == "Edit " + std::to_string(i) + "." && mo.revised_spec == spec && mo.warnings.empty()) {
      ++mutator_ok;
    }
  }

  const std::string ev = "\n2. Evidence\n- x\n3. One sentence diagnosis\nd.\n";
  const std::string good_scores = "1. Scores\nplanner 0.1 selector 0.2 caller 0.3 synthesizer 0.4\n";
  const std::vector<std::pair<std::function<void()>, ErrorCode>> malformed = {
      {[&] { parse_blamer_output("1. Scores\nplanner 0.1 selector 0.2 caller 0.3\n" + ev); }, ErrorCode::MissingScore},
      {[&] { parse_blamer_output("1. Scores\nplanner 0.1 selector high caller 0.3 synthesizer 0\n" + ev); },
       ErrorCode::NonNumericScore},
      {[&] { parse_blamer_output("planner 0.1 selector 0.2 caller 0.3 synthesizer 0.4" + ev); }, ErrorCode::MissingSection},
      {[&] { parse_blamer_output(good_scores + "3. One sentence diagnosis\nd.\n"); }, ErrorCode::MissingSection},
      {[&] { parse_blamer_output(good_scores + "2. Evidence\n- x\n3. One sentence diagnosis\n\n"); }, ErrorCode::MissingSection},
      {[&] { parse_mutator_output("1. Target module\nrouter\n2. Diagnosed error mode\nm\n3. Minimal edit summary\ne\n4. Revised target module spec\ns\n"); },
       ErrorCode::UnknownTarget},
      {[&] { parse_mutator_output("2. Diagnosed error mode\nm\n3. Minimal edit summary\ne\n4. Revised target module spec\ns\n"); },
       ErrorCode::MissingSection},
      {[&] { parse_mutator_output("1. Target module\ncaller\n2. Diagnosed error mode\nm\n3. Minimal edit summary\ne\n"); },
       ErrorCode::MissingSection},
      {[&] { parse_mutator_output("1. Target module\ncaller\n2. Diagnosed error mode\nm\n3. Minimal edit summary\ne\n4. Revised target module spec\n   \n"); },
       ErrorCode::MissingSection},
      {[&] { parse_mutator_output("1. Target module\n\n2. Diagnosed error mode\nm\n3. Minimal edit summary\ne\n4. Revised target module spec\ns\n"); },
       ErrorCode::MissingSection},
  };
  int typed = 0;
  for (const auto& [fn, expected] : malformed) typed += error_of(fn) == expected;
  std::ostringstream d;
  d << "blamer " << blamer_ok << "/" << trials << ", mutator " << mutator_ok << "/" << trials << " lossless; "
    << typed << "/" << malformed.size() << " malformed variants raise the expected error";
  return {blamer_ok == trials && mutator_ok == trials && typed == static_cast<int>(malformed.size()), d.str()};
}

CriterionResult replay_determinism() {
  const auto root = testing::fresh_temp_dir("acceptance-replay");
  RunConfig c = run_config_from_json(
      nlohmann::json{{"task_suite", testing::data_path("convergence_suite.json").string()},
                     {"tool_suite", testing::data_path("tools.json").string()},
                     {"backend", "model"},
                     {"blamer", "model"},
                     {"mutator", "model"},
                     {"model_id", "fake-policy"},
                     {"max_generations", 8},
                     {"cassette_mode", "record"}});
  c.out_dir = root.string();
  testing::FakeModelTransport fake;
  const auto recorded = run_evolve(c, &fake);

  c.cassette_mode = CassetteMode::Replay;
  c.cassette = (recorded.run_dir / "cassette.jsonl").string();
  testing::CountingTransport counter;
  const auto a = run_evolve(c, &counter);
  const auto b = run_evolve(c, &counter);
  auto same = [](const fs::path& x, const fs::path& y, const char* f) {
    return testing::read_file(x / f) == testing::read_file(y / f) && !testing::read_file(x / f).empty();
  };
  const bool identical = same(a.run_dir, b.run_dir, "history.jsonl") && same(a.run_dir, b.run_dir, "snapshot.json");
  const bool matches_record =
      same(a.run_dir, recorded.run_dir, "history.jsonl") && same(a.run_dir, recorded.run_dir, "snapshot.json");
  std::ostringstream d;
  d << "recorded " << fake.calls() << " calls; replays byte-identical: " << (identical ? "yes" : "no")
    << "; equal to recording: " << (matches_record ? "yes" : "no") << "; transport calls during replay: " << counter.calls();
  const bool clean = !recorded.result.error && !a.result.error && !b.result.error;
  return {clean && fake.calls() > 0 && identical && matches_record && counter.calls() == 0, d.str()};
}

CriterionResult defaults_fidelity() {
  const RunConfig c = run_config_from_json(nlohmann::json::object());
  std::ostringstream d;
  d << "empty config resolves to G=" << c.max_generations << ", B=" << c.minibatch_size;
  return {c.max_generations == 8 && c.minibatch_size == 3, d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<CriterionResult()>>> criteria = {
      {"single-module mutation invariant", single_module_mutation},
      {"acceptance-gate soundness", acceptance_gate},
      {"selection soundness", selection_soundness},
      {"closed-loop convergence", closed_loop_convergence},
      {"blame ablation direction", blame_ablation},
      {"selection ablation direction", selection_ablation},
      {"blame oracle exactness", blame_oracle_exactness},
      {"parser round-trips", parser_round_trips},
      {"replay determinism", replay_determinism},
      {"defaults fidelity", defaults_fidelity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    CriterionResult v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << v.detail << "\n";
  }
  return failed == 0 ? 0 : 1;
}
