#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace evoloop {

// Pipeline order is the enumerator order.
enum class ModuleKind : int { Planner = 0, Selector = 1, Caller = 2, Synthesizer = 3 };

inline constexpr std::array<ModuleKind, 4> kAllModules = {
    ModuleKind::Planner, ModuleKind::Selector, ModuleKind::Caller, ModuleKind::Synthesizer};

inline constexpr int pipeline_index(ModuleKind kind) { return static_cast<int>(kind); }

// Lower-case wire name: planner|selector|caller|synthesizer.
std::string_view module_name(ModuleKind kind);
// Case-insensitive; returns nullopt for anything else.
std::optional<ModuleKind> parse_module_name(std::string_view name);

struct ModuleSpec {
  ModuleKind kind{ModuleKind::Planner};
  std::string text;
  int revision{0};

  bool operator==(const ModuleSpec&) const = default;
};

// Immutable after construction; all edits produce a new genome.
class PolicyGenome {
 public:
  using SpecMap = std::map<ModuleKind, std::string>;

  const std::string& id() const { return id_; }
  const std::optional<std::string>& parent_id() const { return parent_id_; }
  const std::optional<ModuleKind>& mutated_module() const { return mutated_module_; }
  int created_generation() const { return created_generation_; }

  const ModuleSpec& spec(ModuleKind kind) const { return specs_[pipeline_index(kind)]; }
  const std::string& text(ModuleKind kind) const { return spec(kind).text; }
  const std::array<ModuleSpec, 4>& specs() const { return specs_; }

  bool operator==(const PolicyGenome&) const = default;

  friend PolicyGenome new_seed_genome(const SpecMap& specs, std::optional<std::string> id);
  friend PolicyGenome with_replaced_module(const PolicyGenome& parent, ModuleKind target,
                                           const std::string& new_text, int generation);
  friend PolicyGenome genome_from_json(const nlohmann::json& j);

 private:
  PolicyGenome() = default;

  std::string id_;
  std::array<ModuleSpec, 4> specs_{};
  std::optional<std::string> parent_id_;
  std::optional<ModuleKind> mutated_module_;
  int created_generation_{0};
};

// Seed genome with every revision at 0. When no id is given the id is derived
// from the content fingerprint so that runs are reproducible.
PolicyGenome new_seed_genome(const PolicyGenome::SpecMap& specs,
                             std::optional<std::string> id = std::nullopt);

// Child that differs from `parent` only in `target`. Throws NoOpEdit when the
// text is unchanged and EmptySpec when it is empty.
PolicyGenome with_replaced_module(const PolicyGenome& parent, ModuleKind target,
                                  const std::string& new_text, int generation);

// 64 lowercase hex chars (SHA-256 over the four texts, length-framed).
std::string genome_fingerprint(const PolicyGenome& genome);

// Kinds whose text differs between the two genomes, in pipeline order.
std::vector<ModuleKind> differing_modules(const PolicyGenome& a, const PolicyGenome& b);

nlohmann::json genome_to_json(const PolicyGenome& genome);
PolicyGenome genome_from_json(const nlohmann::json& j);

// The four hand-written starting prompts.
PolicyGenome::SpecMap default_seed_specs();

}  // namespace evoloop
