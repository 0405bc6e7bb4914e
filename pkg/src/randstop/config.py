"""Experiment configuration: TOML files with named sections.

Every field has an explicit default per experiment kind; ``resolve`` merges
the file over those defaults and the merged result is echoed into the CSV
header block, so no output depends on hidden state.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models import REGISTRY
from .tree import TreeError, tree_from_records

KINDS = ("tree-equality", "derandomize", "exp-approx", "time-change", "discretize",
         "diffusion-compare", "convergence")

_CORPUS = {"trees": 100, "max_depth": 4, "max_branch": 3, "payoff_low": -1.0,
           "payoff_high": 1.0, "rule_cap": 10_000}
_DIFFUSION_NUMERICS = {"grid": 100, "paths": 100_000, "tree_steps": 2000, "start_time": 0.0}

DEFAULTS = {
    "tree-equality": {
        "corpus": _CORPUS,
        "numerics": {"plans": 1000},
        "tolerance": {"abs": 1e-12},
    },
    "derandomize": {
        "corpus": _CORPUS,
        "numerics": {"plans": 1000},
        "tolerance": {"abs": 1e-12},
    },
    "exp-approx": {
        "path": {"kind": "exp-decay", "tau": 0.0, "slope": 1.0, "horizon": 2.0, "offset": 0.0},
        "numerics": {"n": [1, 10, 100, 10_000], "delta": [0.1, 0.01, 0.001]},
        "tolerance": {"abs": 1e-9, "limit": 1e-3},
    },
    "time-change": {
        "numerics": {"cases": 100, "max_jumps": 8},
        "tolerance": {"step": 1e-12, "quadrature": 1e-8},
    },
    "discretize": {
        "numerics": {"levels": list(range(1, 13)), "cases": 5},
        "tolerance": {"exact": 1e-12, "random": 1e-3},
    },
    "diffusion-compare": {
        "model": {"name": "bm-quadratic", "params": {}},
        "numerics": {**_DIFFUSION_NUMERICS, "caps": [64]},
        "tolerance": {"bias": 2e-3, "se_mult": 3.0},
    },
    "convergence": {
        "model": {"name": "bm-quadratic", "params": {}},
        "numerics": {**_DIFFUSION_NUMERICS, "caps": [1, 2, 4, 8, 16, 32, 64]},
        "tolerance": {"bias": 2e-3, "se_mult": 3.0},
    },
}


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    sections: dict = field(default_factory=dict)
    out: str | None = None

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def as_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **self.sections}


def load(path) -> dict:
    with open(Path(path), "rb") as fh:
        return tomllib.load(fh)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x > 0


def validate(raw: dict) -> list[str]:
    """Every violated invariant, as ``field.path: message`` strings."""
    problems = []
    kind = raw.get("kind")
    if kind not in KINDS:
        problems.append(f"kind: expected one of {', '.join(KINDS)}, got {kind!r}")
    seed = raw.get("seed")
    if seed is None:
        problems.append("seed: missing (a seed is required; there is no clock-based default)")
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed: must be a nonnegative integer, got {seed!r}")
    if kind not in KINDS:
        return problems

    known = set(DEFAULTS[kind]) | {"kind", "seed", "out", "tree"}
    for key in raw:
        if key not in known:
            problems.append(f"{key}: unknown section for kind {kind!r}")
    merged = _merge(DEFAULTS[kind], {k: v for k, v in raw.items() if isinstance(v, dict)})

    for sec in ("corpus", "numerics"):
        for key, value in merged.get(sec, {}).items():
            if key in ("payoff_low", "payoff_high", "start_time"):
                if not isinstance(value, (int, float)) or not math.isfinite(value):
                    problems.append(f"{sec}.{key}: must be a finite number")
                continue
            values = value if isinstance(value, list) else [value]
            if isinstance(value, list) and not value:
                problems.append(f"{sec}.{key}: must be a nonempty list")
            for i, v in enumerate(values):
                if not _positive(v):
                    where = f"{sec}.{key}[{i}]" if isinstance(value, list) else f"{sec}.{key}"
                    problems.append(f"{where}: must be positive, got {v!r}")
    corpus = merged.get("corpus")
    if corpus and corpus.get("payoff_low", 0) >= corpus.get("payoff_high", 1):
        problems.append("corpus.payoff_low: must be below corpus.payoff_high")
    for key, value in merged.get("tolerance", {}).items():
        if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
            problems.append(f"tolerance.{key}: must be a nonnegative number, got {value!r}")

    if "model" in merged:
        name = merged["model"].get("name")
        if name not in REGISTRY:
            problems.append(f"model.name: unknown model {name!r}; choose from {sorted(REGISTRY)}")
        elif not isinstance(merged["model"].get("params", {}), dict):
            problems.append("model.params: must be a table")
        else:
            try:
                REGISTRY[name](**merged["model"].get("params", {}))
            except TypeError as exc:
                problems.append(f"model.params: {exc}")
    if "path" in merged:
        pk = merged["path"].get("kind")
        if pk not in ("exp-decay", "lipschitz"):
            problems.append(f"path.kind: expected 'exp-decay' or 'lipschitz', got {pk!r}")
        tau = merged["path"].get("tau", 0.0)
        if not isinstance(tau, (int, float)) or tau < 0:
            problems.append("path.tau: must be a nonnegative number")
    if kind == "exp-approx":
        for i, n in enumerate(merged["numerics"]["n"]):
            if _positive(n) and n < 1:
                problems.append(f"numerics.n[{i}]: must be at least 1")

    if "tree" in raw:
        if kind not in ("tree-equality", "derandomize"):
            problems.append(f"tree: not used by kind {kind!r}")
        else:
            problems.extend(_validate_tree(raw["tree"]))
    return problems


def _validate_tree(tree: dict) -> list[str]:
    if not isinstance(tree, dict):
        return ["tree: must be a table"]
    if "nodes" in tree:
        try:
            tree_from_records(parse_nodes(tree["nodes"]))
        except (TreeError, TypeError, ValueError) as exc:
            return [f"tree.nodes: {exc}"]
        return []
    builtin = tree.get("builtin")
    if builtin != "random-walk-square":
        return [f"tree.builtin: expected 'random-walk-square' or a nodes list, got {builtin!r}"]
    depth = tree.get("depth", 2)
    if not isinstance(depth, int) or depth < 0:
        return ["tree.depth: must be a nonnegative integer"]
    return []


def parse_nodes(nodes) -> list[tuple]:
    """TOML rows ``[id, parent, prob, h]``; an empty-string parent marks the root."""
    out = []
    for row in nodes:
        if not isinstance(row, list) or len(row) != 4:
            raise ValueError(f"node row {row!r} must be [id, parent, prob, h]")
        nid, parent, prob, h = row
        out.append((nid, None if parent in ("", None) else parent, float(prob), float(h)))
    return out


def resolve(raw: dict, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    problems = validate(raw)
    if problems:
        raise ConfigError(problems)
    kind = raw["kind"]
    sections = _merge(DEFAULTS[kind], {k: v for k, v in raw.items() if isinstance(v, dict)})
    return ExperimentConfig(kind, raw["seed"], sections, out or raw.get("out"))
