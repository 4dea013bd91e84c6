#include "evoloop/prompts.hpp"

namespace evoloop::prompts {

const std::string_view kPlannerSeed =
    "You are a planning agent. Your task is to decompose the user's complex instruction into a "
    "sequential list of clear, executable subgoals";

const std::string_view kSelectorSeed =
    "You are a tool selection agent. Given the current subgoal and the list of available tools, "
    "select the most appropriate tool.";

const std::string_view kCallerSeed =
    "You are a tool calling agent. Given the selected tool and its documentation, generate the "
    "specific arguments required to execute it.";

const std::string_view kSynthesizerSeed =
    "You are a synthesis agent. Review the user's original query and the history of tool "
    "executions, then synthesize this information to provide the answer.";

const std::string_view kBlamerTemplate = R"(# ROLE
You are a diagnostic judge for a modular tool-using agent.

# GOAL
Given (i) a task, (ii) a full execution trajectory, (iii) structured events for each module in Planner,
Selector, Caller, and Synthesizer extracted from the trajectory, and (iv) an outcome signal
with either 0 (fail) or 1 (success), your task is to assign module-level blame to one of the four modules that is most responsible for the errors or suboptimality in the trajectory.

# ATTRIBUTION CRITERIA
- Planner: missing or incorrect decomposition; incorrect ordering; dropped constraints or lost state.
- Selector: wrong tool choice; missing tool choice when necessary.
- Caller: schema or format violations; wrong parameters; malformed calls.
- Synthesizer: ungrounded final response; contradiction with tool outputs; missing integration of key observations.

# BLAME ASSIGNMENT RULES
- Give each module a score in 0 to 1.
- Blame the most causal module that most directly caused failure or quality loss.
- Use the extracted events for each module first, then confirm with trajectory evidence.
- Prefer the earliest causal mistake. If multi causal, still pick one primary.

# OUTPUT FORMAT
Output plain text using following format:

1. Scores
planner <number>
selector <number>
caller <number>
synthesizer <number>

2. Evidence
Provide evidence for each module. Each line must include information from the extracted events
and a short reason grounded in the trajectory.

3. One sentence diagnosis
Write one sentence explaining why the primary module is blamed.

# TASK
{{task}}

# TRAJECTORY
{{trajectory}}

# MODULE EVENTS
{{events}}

# OUTCOME
{{outcome}}
)";

const std::string_view kMutatorTemplate = R"(# ROLE
You are a targeted prompt editor for exactly one module of a modular tool-using agent.

# GOAL
Given (i) a target module chosen from Planner, Selector, Caller, and Synthesizer, (ii) the current specification of that module, (iii) a failure episode packet containing the task input x, the module-local trajectory slice (the target module's outputs plus nearby context), the final outcome and verifier feedback, and (iv) the blamer's rationale and blame scores, produce a single minimal and general edit to the selected module that addresses the diagnosed failure mode while preserving the module's interface contract and output format.

# EDITING RULES
- Edit only target module specification; do not modify other modules.
- Do not add new tools or environments.
- Ground the edit in the trajectory
- Make the smallest change that fixes the error or suboptimality.

# HEURISTIC EDIT PATTERNS
- Schema/format error -> add argument checklist, schema verification.
- Wrong tool selection -> add decision rubric mapping subgoals to tools.
- Planning error -> add explicit subgoals, state fields, ordering constraints, prerequisite checks.
- Ungrounded synthesis -> require attribution to tool outputs, prohibit unsupported facts.

# OUTPUT FORMAT
Output plain text with the following sections in this order:

1. Target module
<planner or selector or caller or synthesizer>

2. Diagnosed error mode
<1-2 sentences describing the failure mode grounded in the trajectory>

3. Minimal edit summary
<1-2 short sentences describing the minimal change and why>

4. Revised target module spec
<updated specification text for the target module only>

# TARGET MODULE
{{target}}

# CURRENT SPECIFICATION
{{current_spec}}

# FAILURE EPISODE PACKET
{{episode}}

# BLAMER RATIONALE AND SCORES
{{blame}}
)";

const std::string_view kStageUserTemplate = R"(Module: {{module}}
Task: {{task}}
Current subgoal: {{subgoal}} of {{num_subgoals}}
History:
{{history}}
List every rule you apply as a line "RULE: <tag>", then give your output.)";

const std::string_view kFormatRetryNotice =
    "\n\nYour previous reply did not follow the required OUTPUT FORMAT. Reply again using exactly "
    "the numbered sections listed above.";

}  // namespace evoloop::prompts
