"""Experiment plans: ordered CLI steps with a JSON summary."""

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, PercsimError
from .ioutil import write_sidecar


@dataclass
class ExperimentPlan:
    name: str
    steps: list = field(default_factory=list)   # [{"command", "config"?, "args"?}]
    output_dir: str = "runs/plan"
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            d = json.load(f)
        d.setdefault("base_dir", str(Path(path).parent))
        return cls(**d)

    def config_path(self, step):
        p = Path(step["config"])
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self):
        from .cli import COMMANDS

        for i, step in enumerate(self.steps):
            if step.get("command") not in COMMANDS:
                raise ConfigError(f"step {i}: unknown command {step.get('command')!r}")
            if "config" in step and not self.config_path(step).exists():
                raise ConfigError(f"step {i}: config {self.config_path(step)} does not exist")
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")


def _expand(value, **names):
    """Substitute ``{out}`` and ``{base}`` in string arguments."""
    if isinstance(value, str):
        for k, v in names.items():
            value = value.replace("{" + k + "}", v)
        return value
    if isinstance(value, dict):
        return {k: _expand(v, **names) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand(v, **names) for v in value]
    return value


def run_experiment(plan):
    """Run steps in order; the first failure stops the plan.

    Returns (exit_status, summary). ``summary.json`` in the output directory
    records each step's status, wall time and result numbers.
    """
    from .cli import run_command

    plan.validate()
    out = Path(plan.output_dir)
    summary = {"name": plan.name, "status": "ok", "steps": []}
    status = 0
    for i, step in enumerate(plan.steps):
        step_out = out / f"{i:02d}_{step['command']}"
        cfg = str(plan.config_path(step)) if "config" in step else None
        t0 = time.perf_counter()
        rec = {"command": step["command"], "config": cfg, "out": str(step_out)}
        try:
            result = run_command(step["command"], config=cfg, out=str(step_out), seed=plan.seed,
                                 extra=_expand(step.get("args", {}), out=str(out), base=plan.base_dir))
            rec.update(status="ok", result=result)
        except PercsimError as exc:
            rec.update(status="failed", error=exc.to_json())
            status = 1
        rec["wall_time"] = time.perf_counter() - t0
        summary["steps"].append(rec)
        if status:
            summary["status"] = "failed"
            break
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=1, sort_keys=True, default=str) + "\n")
    write_sidecar(path, {"name": plan.name, "steps": plan.steps}, plan.seed)
    return status, summary
