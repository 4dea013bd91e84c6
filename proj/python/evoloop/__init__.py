"""Python bindings for the evoloop modular-policy evolution engine."""

from ._core import (
    EvoloopError,
    accept_child,
    execute_episode,
    genome_fingerprint,
    load_task_suite,
    parse_blamer_output,
    parse_mutator_output,
    render_template,
    run_cli,
    run_generations,
    score,
    scripted_tags,
    seed_genome,
    select_population,
    with_replaced_module,
)

__all__ = [
    "EvoloopError",
    "accept_child",
    "execute_episode",
    "genome_fingerprint",
    "load_task_suite",
    "parse_blamer_output",
    "parse_mutator_output",
    "render_template",
    "run_cli",
    "run_generations",
    "score",
    "scripted_tags",
    "seed_genome",
    "select_population",
    "with_replaced_module",
]
