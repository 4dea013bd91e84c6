#include "evoloop/policy_model.hpp"

#include <algorithm>
#include <cctype>

#include "evoloop/digest.hpp"
#include "evoloop/error.hpp"
#include "evoloop/prompts.hpp"

namespace evoloop {

std::string_view module_name(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::Planner: return "planner";
    case ModuleKind::Selector: return "selector";
    case ModuleKind::Caller: return "caller";
    case ModuleKind::Synthesizer: return "synthesizer";
  }
  return "planner";
}

std::optional<ModuleKind> parse_module_name(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (ModuleKind kind : kAllModules) {
    if (lower == module_name(kind)) return kind;
  }
  return std::nullopt;
}

std::string genome_fingerprint(const PolicyGenome& genome) {
  std::string framed;
  for (const auto& spec : genome.specs()) {
    framed += std::to_string(spec.text.size());
    framed += ':';
    framed += spec.text;
  }
  return sha256_hex(framed);
}

PolicyGenome new_seed_genome(const PolicyGenome::SpecMap& specs, std::optional<std::string> id) {
  PolicyGenome g;
  for (ModuleKind kind : kAllModules) {
    auto it = specs.find(kind);
    if (it == specs.end()) {
      throw Error(ErrorCode::MissingModule, std::string(module_name(kind)) + " spec absent");
    }
    if (it->second.empty()) {
      throw Error(ErrorCode::EmptySpec, std::string(module_name(kind)) + " spec is empty");
    }
    g.specs_[pipeline_index(kind)] = ModuleSpec{kind, it->second, 0};
  }
  g.id_ = id ? *id : "seed-" + genome_fingerprint(g).substr(0, 12);
  return g;
}

PolicyGenome with_replaced_module(const PolicyGenome& parent, ModuleKind target,
                                  const std::string& new_text, int generation) {
  if (new_text.empty()) {
    throw Error(ErrorCode::EmptySpec, std::string(module_name(target)) + " revision is empty");
  }
  const ModuleSpec& old = parent.spec(target);
  if (old.text == new_text) {
    throw Error(ErrorCode::NoOpEdit, std::string(module_name(target)) + " text unchanged");
  }
  PolicyGenome child = parent;
  child.specs_[pipeline_index(target)] = ModuleSpec{target, new_text, old.revision + 1};
  child.parent_id_ = parent.id();
  child.mutated_module_ = target;
  child.created_generation_ = generation;
  // One child per generation, so (generation, content) is unique within a run.
  child.id_ = "g" + std::to_string(generation) + "-" + genome_fingerprint(child).substr(0, 12);
  return child;
}

std::vector<ModuleKind> differing_modules(const PolicyGenome& a, const PolicyGenome& b) {
  std::vector<ModuleKind> out;
  for (ModuleKind kind : kAllModules) {
    if (a.text(kind) != b.text(kind)) out.push_back(kind);
  }
  return out;
}

nlohmann::json genome_to_json(const PolicyGenome& genome) {
  nlohmann::json specs = nlohmann::json::object();
  for (const auto& spec : genome.specs()) {
    specs[std::string(module_name(spec.kind))] = {{"text", spec.text}, {"revision", spec.revision}};
  }
  nlohmann::json j;
  j["id"] = genome.id();
  j["parent_id"] = genome.parent_id() ? nlohmann::json(*genome.parent_id()) : nlohmann::json(nullptr);
  j["mutated_module"] = genome.mutated_module()
                            ? nlohmann::json(std::string(module_name(*genome.mutated_module())))
                            : nlohmann::json(nullptr);
  j["created_generation"] = genome.created_generation();
  j["specs"] = std::move(specs);
  return j;
}

PolicyGenome genome_from_json(const nlohmann::json& j) {
  try {
    PolicyGenome g;
    g.id_ = j.at("id").get<std::string>();
    if (!j.at("parent_id").is_null()) g.parent_id_ = j.at("parent_id").get<std::string>();
    if (!j.at("mutated_module").is_null()) {
      auto kind = parse_module_name(j.at("mutated_module").get<std::string>());
      if (!kind) throw Error(ErrorCode::ParseError, "unknown mutated_module");
      g.mutated_module_ = *kind;
    }
    g.created_generation_ = j.at("created_generation").get<int>();
    const auto& specs = j.at("specs");
    for (ModuleKind kind : kAllModules) {
      auto it = specs.find(std::string(module_name(kind)));
      if (it == specs.end()) {
        throw Error(ErrorCode::MissingModule, std::string(module_name(kind)) + " spec absent");
      }
      std::string text = it->at("text").get<std::string>();
      if (text.empty()) throw Error(ErrorCode::EmptySpec, std::string(module_name(kind)));
      g.specs_[pipeline_index(kind)] = ModuleSpec{kind, std::move(text), it->at("revision").get<int>()};
    }
    if (g.parent_id_.has_value() != g.mutated_module_.has_value()) {
      throw Error(ErrorCode::ParseError, "parent_id and mutated_module must be both set or both null");
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("genome: ") + e.what());
  }
}

PolicyGenome::SpecMap default_seed_specs() {
  return {{ModuleKind::Planner, std::string(prompts::kPlannerSeed)},
          {ModuleKind::Selector, std::string(prompts::kSelectorSeed)},
          {ModuleKind::Caller, std::string(prompts::kCallerSeed)},
          {ModuleKind::Synthesizer, std::string(prompts::kSynthesizerSeed)}};
}

}  // namespace evoloop
