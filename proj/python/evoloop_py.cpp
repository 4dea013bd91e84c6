#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "evoloop/blame.hpp"
#include "evoloop/cli.hpp"
#include "evoloop/error.hpp"
#include "evoloop/evolution.hpp"
#include "evoloop/mutation.hpp"
#include "evoloop/policy_model.hpp"
#include "evoloop/rollout.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace evoloop;

namespace {

// Python objects cross the boundary as JSON text.
json to_json(const py::handle& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

ModuleKind module_arg(const std::string& name) {
  auto kind = parse_module_name(name);
  if (!kind) throw Error(ErrorCode::UnknownTarget, "'" + name + "' is not a module");
  return *kind;
}

TaskInstance task_arg(const py::handle& obj) {
  json j = to_json(obj);
  return parse_task_suite(json{{"train", {j}}, {"selection", {json{{"id", j.value("id", "") + "#probe"},
                                                                     {"instruction", "probe"},
                                                                     {"num_subgoals", 1},
                                                                     {"gold_answer", "x"},
                                                                     {"required_skills", json::array()}}}}})
      .train.front();
}

py::dict suite_dict(const TaskSuite& suite) {
  py::dict out;
  py::list train, selection;
  for (const auto& t : suite.train) train.append(from_json(task_to_json(t)));
  for (const auto& t : suite.selection) selection.append(from_json(task_to_json(t)));
  out["train"] = train;
  out["selection"] = selection;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Evolution of modular tool-use policies with blame-targeted mutation";
  py::register_exception<Error>(m, "EvoloopError", PyExc_RuntimeError);

  m.def("scripted_tags", [](const std::string& text) { return scripted_tags(text); }, py::arg("text"));

  m.def(
      "score",
      [](const py::dict& task, const std::string& answer, int stages_passed) {
        return score(task_arg(task), answer, stages_passed);
      },
      py::arg("task"), py::arg("final_answer"), py::arg("stages_passed"));

  m.def(
      "seed_genome",
      [](std::optional<std::map<std::string, std::string>> specs) {
        PolicyGenome::SpecMap map = default_seed_specs();
        if (specs) {
          map.clear();
          for (const auto& [k, v] : *specs) map[module_arg(k)] = v;
        }
        return from_json(genome_to_json(new_seed_genome(map)));
      },
      py::arg("specs") = py::none(), "Seed genome as a dict; defaults to the built-in prompts.");

  m.def(
      "genome_fingerprint", [](const py::dict& g) { return genome_fingerprint(genome_from_json(to_json(g))); },
      py::arg("genome"));

  m.def(
      "with_replaced_module",
      [](const py::dict& g, const std::string& module, const std::string& text, int generation) {
        return from_json(genome_to_json(with_replaced_module(genome_from_json(to_json(g)), module_arg(module), text, generation)));
      },
      py::arg("genome"), py::arg("module"), py::arg("text"), py::arg("generation"));

  m.def(
      "load_task_suite", [](const std::string& path) { return suite_dict(load_task_suite(path)); }, py::arg("path"));

  m.def(
      "execute_episode",
      [](const py::dict& genome, const py::dict& task) {
        const auto ep = execute_episode(genome_from_json(to_json(genome)), task_arg(task), ScriptedEnvironment{},
                                        ScriptedRuntime{});
        return from_json(episode_to_json(ep));
      },
      py::arg("genome"), py::arg("task"), "Scripted rollout of one task.");

  m.def("accept_child", &accept_child, py::arg("parent_mean"), py::arg("child_mean"));

  m.def(
      "select_population",
      [](const std::vector<std::pair<std::string, std::vector<double>>>& scores) {
        if (scores.empty()) throw Error(ErrorCode::EmptyPopulation, "no candidates");
        const std::size_t n = scores.front().second.size();
        std::vector<TaskInstance> tasks;
        for (std::size_t i = 0; i < n; ++i) {
          TaskInstance t;
          t.id = std::to_string(i);
          tasks.push_back(t);
        }
        std::vector<PopulationEntry> pop;
        std::map<std::string, std::vector<double>> table;
        for (const auto& [id, row] : scores) {
          if (row.size() != n) throw Error(ErrorCode::ParseError, "ragged score matrix");
          pop.push_back({new_seed_genome({{ModuleKind::Planner, id}, {ModuleKind::Selector, "s"},
                                          {ModuleKind::Caller, "c"}, {ModuleKind::Synthesizer, "y"}},
                                         id),
                         0.0,
                         {}});
          table[id] = row;
        }
        auto res = select_population(std::move(pop), tasks, [&](const PolicyGenome& g, const TaskInstance& t) {
          return table.at(g.id()).at(std::stoul(t.id));
        });
        std::vector<std::string> retained;
        for (const auto& e : res.retained) retained.push_back(e.genome.id());
        return py::make_tuple(retained, res.win_frequencies, res.winners);
      },
      py::arg("scores"),
      "Instance-wise winners over a list of (candidate id, per-task scores) in creation order.");

  m.def(
      "parse_blamer_output",
      [](const std::string& text) {
        const auto out = parse_blamer_output(text);
        py::dict d, scores;
        for (ModuleKind k : kAllModules) scores[py::str(std::string(module_name(k)))] = out.scores[pipeline_index(k)];
        d["scores"] = scores;
        d["target"] = std::string(module_name(argmax_target(out.scores)));
        d["evidence"] = out.evidence;
        d["diagnosis"] = out.diagnosis;
        d["warnings"] = out.warnings;
        return d;
      },
      py::arg("text"));

  m.def(
      "parse_mutator_output",
      [](const std::string& text, std::optional<std::string> requested) {
        std::optional<ModuleKind> req;
        if (requested) req = module_arg(*requested);
        const auto out = parse_mutator_output(text, req);
        py::dict d;
        d["target"] = std::string(module_name(out.target));
        d["error_mode"] = out.error_mode;
        d["edit_summary"] = out.edit_summary;
        d["revised_spec"] = out.revised_spec;
        d["warnings"] = out.warnings;
        return d;
      },
      py::arg("text"), py::arg("requested") = py::none());

  m.def(
      "render_template",
      [](const std::string& tmpl, const std::map<std::string, std::string>& bindings) {
        return render_template(tmpl, bindings);
      },
      py::arg("template"), py::arg("bindings"));

  m.def(
      "run_generations",
      [](const std::string& suite_path, int generations, std::int64_t seed, const std::string& blamer,
         const std::string& selection) {
        RunConfig config = run_config_from_json(
            json{{"max_generations", generations}, {"rng_seed", seed}, {"blamer", blamer}, {"selection", selection}});
        const TaskSuite suite = load_task_suite(suite_path);
        const ScriptedEnvironment env;
        const ScriptedRuntime runtime;
        OracleBlamer oracle;
        RandomBlamer random(static_cast<std::uint64_t>(seed));
        if (config.blamer == BlamerKind::Model) throw Error(ErrorCode::ConfigError, "model blamer needs evolve");
        Blamer& b = config.blamer == BlamerKind::Random ? static_cast<Blamer&>(random) : static_cast<Blamer&>(oracle);
        OracleMutator mutator(suite);
        std::optional<RunResult> run;
        {
          py::gil_scoped_release release;
          run.emplace(run_generations(config, suite, env, runtime, b, mutator));
        }
        const RunResult& res = *run;
        py::dict d;
        d["best"] = from_json(genome_to_json(res.best));
        d["best_selection_mean"] = res.best_selection_mean;
        py::list history;
        for (const auto& r : res.history) history.append(from_json(generation_record_to_json(r)));
        d["history"] = history;
        d["error"] = res.error ? py::object(py::str(*res.error)) : py::none();
        return d;
      },
      py::arg("suite_path"), py::arg("generations") = kDefaultGenerations, py::arg("seed") = 0,
      py::arg("blamer") = "oracle", py::arg("selection") = "diversity",
      "Scripted closed loop with the oracle mutator.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "evoloop");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli_dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI command; returns (exit code, stdout, stderr).");
}
