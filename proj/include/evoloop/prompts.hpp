#pragma once

#include <string_view>

namespace evoloop::prompts {

extern const std::string_view kPlannerSeed;
extern const std::string_view kSelectorSeed;
extern const std::string_view kCallerSeed;
extern const std::string_view kSynthesizerSeed;

// Slots: {{task}}, {{trajectory}}, {{events}}, {{outcome}}.
extern const std::string_view kBlamerTemplate;
// Slots: {{target}}, {{current_spec}}, {{episode}}, {{blame}}.
extern const std::string_view kMutatorTemplate;
// Slots: {{module}}, {{task}}, {{subgoal}}, {{num_subgoals}}, {{history}}.
extern const std::string_view kStageUserTemplate;

// Appended to the user message when a blamer/mutator reply fails to parse.
extern const std::string_view kFormatRetryNotice;

}  // namespace evoloop::prompts
