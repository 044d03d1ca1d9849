"""Prompt assembly: system/role prompts, domain-knowledge injection,
error-memory rendering.

Everything here is a pure function of its inputs: equal configuration
yields a byte-identical prompt, which the tests rely on.  Template text
lives in versioned assets (prompt_templates.json / default_prompt_config.json).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

ERROR_MEMORY_WINDOW = 5  # most recent distinct signatures rendered

MODES = ("single", "planner", "worker", "replanner")


class InvalidConfig(ValueError):
    pass


def _templates() -> dict:
    raw = resources.files("geoagent.assets").joinpath("prompt_templates.json").read_text()
    return json.loads(raw)


def _defaults() -> dict:
    raw = resources.files("geoagent.assets").joinpath("default_prompt_config.json").read_text()
    return json.loads(raw)


@dataclass
class PromptConfig:
    mode: str = "single"
    allowed_packages: list[str] = field(default_factory=list)
    forbidden_map: dict[str, str] = field(default_factory=dict)
    behavioral_constraints: list[str] = field(default_factory=list)
    output_dir_name: str = "pred_results"
    max_rounds: int = 50
    step_number: int = 0          # worker mode only
    step_description: str = ""    # worker mode only

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        clash = set(self.forbidden_map) & set(self.allowed_packages)
        if clash:
            raise InvalidConfig(f"forbidden packages also listed as allowed: {sorted(clash)}")


def default_prompt_config(mode: str = "single", **overrides) -> PromptConfig:
    """PromptConfig seeded from the bundled defaults (packages, constraints)."""
    defaults = _defaults()
    config = PromptConfig(
        mode=mode,
        allowed_packages=list(defaults["allowed_packages"]),
        forbidden_map=dict(defaults["forbidden_map"]),
        behavioral_constraints=list(defaults["behavioral_constraints"]),
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def build_system_prompt(config: PromptConfig) -> str:
    """Assemble the full system prompt for one agent role.

    Fixed section order: role, data-inspection mandate, package constraint,
    behavioral output rules, interaction protocol.
    """
    t = _templates()
    role = t["roles"][config.mode]
    if config.mode == "worker":
        role = role.format(step_number=config.step_number,
                           step_description=config.step_description)
    sections = [role, t["schema_analysis"]]

    if config.allowed_packages or config.forbidden_map:
        pkg_lines = [t["packages_header"]]
        if config.allowed_packages:
            pkg_lines.append(", ".join(config.allowed_packages))
        if config.forbidden_map:
            pkg_lines.append(t["forbidden_header"] + " "
                             + ", ".join(sorted(config.forbidden_map)))
            pkg_lines.append(t["alternatives_header"] + " "
                             + "; ".join(f"{k} -> {v}"
                                         for k, v in sorted(config.forbidden_map.items())))
        sections.append("\n".join(pkg_lines))

    constraints = list(config.behavioral_constraints)
    if not any("plt.show" in c for c in constraints):
        constraints.insert(0, _defaults()["behavioral_constraints"][0])
    sections.append(t["constraints_header"] + "\n"
                    + "\n".join(f"- {c}" for c in constraints))

    protocol = t[f"protocol_{config.mode}"].format(
        output_dir=config.output_dir_name, max_rounds=config.max_rounds)
    sections.append(protocol)
    return "\n\n".join(sections)


def inject_domain_knowledge(prompt: str, dk: str | None) -> str:
    """Append the user-supplied workflow verbatim in a delimited section.

    Idempotent: a prompt that already carries the section is returned
    unchanged, and a missing/empty dk is the identity.
    """
    if not dk:
        return prompt
    header = _templates()["domain_knowledge_header"]
    if header in prompt:
        return prompt
    return (f"{prompt}\n\n{header}\n"
            f"Follow this workflow faithfully; it is authoritative.\n{dk.strip()}")


def render_error_memory(memory, window: int = ERROR_MEMORY_WINDOW) -> str:
    """Render the most recent distinct failure signatures as a context block.

    Empty memory renders to the empty string; duplicates collapse to their
    most recent occurrence; at most `window` entries appear.
    """
    entries = getattr(memory, "entries", memory) or []
    latest: dict[str, object] = {}
    for entry in entries:  # later entries win
        latest[entry.signature] = entry
    recent = sorted(latest.values(), key=lambda e: e.round_index)[-window:]
    if not recent:
        return ""
    header = _templates()["error_memory_header"]
    lines = [header]
    for i, entry in enumerate(recent, 1):
        lines.append(f"{i}. round {entry.round_index}: {entry.signature}")
    return "\n".join(lines)
