"""YAML scenario files: strict parsing, defaults and round-trip serialisation.

Defaults (every block and key is optional)::

    region:   outer [0, 0, 10, 10], holes [], spacing 0.1
    workload: []                      (list of {amplitude, center, width})
    agents:   N 1, positions drawn from mission.seed when omitted,
              speed 0.5, kernel {P: 6, lambda: 1, r: 0.5}
    field:    alpha 1, beta 1, solver_tol 1e-10, solver_max_iter 5000, solver cg
    mission:  algorithm algo3, dt 0.1, T_u 500, k_max 7, eps_M 1e-3,
              max_steps 100000, seed 0, max_edge 0.9 r, stall_steps 1000
    output:   directory out, artifacts [summary, curve, trajectory], stride 10
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any, Union

import numpy as np
import yaml

from .coverage import CoverageKernel, GaussianTerm
from .field import FieldParams
from .geometry import GeometryError, RegionSpec, build_region
from .mission import ALGORITHMS, MissionConfig, OutputSpec

BUNDLED = ("paper_fig3", "paper_fig3_coarse")
ARTIFACTS = ("summary", "curve", "trajectory", "partition", "workload", "fields")

_KEYS = {
    "": {"region", "workload", "agents", "field", "mission", "output"},
    "region": {"outer", "holes", "spacing"},
    "workload[]": {"amplitude", "center", "width"},
    "agents": {"N", "positions", "speed", "kernel"},
    "agents.kernel": {"P", "lambda", "r"},
    "field": {"alpha", "beta", "solver_tol", "solver_max_iter", "solver"},
    "mission": {"algorithm", "dt", "T_u", "k_max", "eps_M", "max_steps", "seed", "max_edge", "stall_steps"},
    "output": {"directory", "artifacts", "stride"},
}


class ScenarioError(ValueError):
    pass


def _block(doc: dict, name: str) -> dict:
    key = name.rsplit(".", 1)[-1]
    value = doc.get(key, {}) if name else doc
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ScenarioError(f"{name or 'scenario'}: expected a mapping")
    unknown = set(value) - _KEYS[name]
    if unknown:
        raise ScenarioError(f"{name or 'scenario'}: unknown key(s) {sorted(unknown)}")
    return value


def _num(block: dict, key: str, default, where: str, kind=float):
    value = block.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number, got {value!r}")
    if kind is int and float(value) != int(value):
        raise ScenarioError(f"{where}.{key}: expected an integer, got {value!r}")
    return kind(value)


def _point_list(value, where: str, width: int) -> list[tuple]:
    if not isinstance(value, list):
        raise ScenarioError(f"{where}: expected a list")
    out = []
    for item in value:
        if not isinstance(item, (list, tuple)) or len(item) != width:
            raise ScenarioError(f"{where}: every entry needs {width} numbers, got {item!r}")
        try:
            out.append(tuple(float(v) for v in item))
        except (TypeError, ValueError):
            raise ScenarioError(f"{where}: non-numeric entry {item!r}") from None
    return out


def config_from_dict(doc: Any) -> MissionConfig:
    if doc is None:
        doc = {}
    top = _block(doc, "")
    reg = _block(top, "region")
    outer = _point_list([reg.get("outer", [0, 0, 10, 10])], "region.outer", 4)[0]
    holes = tuple(_point_list(reg.get("holes", []) or [], "region.holes", 4))
    spacing = _num(reg, "spacing", 0.1, "region")
    if not spacing > 0:
        raise ScenarioError("region.spacing: grid spacing must be positive")
    region_spec = RegionSpec(outer, holes, spacing)

    mixture = []
    terms = top.get("workload", []) or []
    if not isinstance(terms, list):
        raise ScenarioError("workload: expected a list of terms")
    for n, term in enumerate(terms):
        where = f"workload[{n}]"
        if not isinstance(term, dict):
            raise ScenarioError(f"{where}: expected a mapping")
        unknown = set(term) - _KEYS["workload[]"]
        if unknown:
            raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}")
        for key in ("amplitude", "center", "width"):
            if key not in term:
                raise ScenarioError(f"{where}.{key}: missing")
        amp = _num(term, "amplitude", None, where)
        width = _num(term, "width", None, where)
        if amp < 0:
            raise ScenarioError(f"{where}.amplitude: must be non-negative")
        if not width > 0:
            raise ScenarioError(f"{where}.width: must be positive")
        center = _point_list([term["center"]], f"{where}.center", 2)[0]
        mixture.append(GaussianTerm(amp, center, width))

    mis = _block(top, "mission")
    seed = _num(mis, "seed", 0, "mission", int)
    ag = _block(top, "agents")
    kern = _block(ag, "agents.kernel")
    kernel_args = {k: _num(kern, k, d, "agents.kernel") for k, d in (("P", 6.0), ("lambda", 1.0), ("r", 0.5))}
    for k, v in kernel_args.items():
        if not v > 0:
            raise ScenarioError(f"agents.kernel.{k}: {k} must be positive")
    kernel = CoverageKernel(kernel_args["P"], kernel_args["lambda"], kernel_args["r"])
    speed = _num(ag, "speed", 0.5, "agents")
    if not speed > 0:
        raise ScenarioError("agents.speed: speed must be positive")
    if "positions" in ag:
        positions = _point_list(ag["positions"], "agents.positions", 2)
        if "N" in ag and _num(ag, "N", 0, "agents", int) != len(positions):
            raise ScenarioError("agents.N: does not match the number of positions")
    else:
        n = _num(ag, "N", 1, "agents", int)
        if n < 1:
            raise ScenarioError("agents.N: at least one agent is required")
        positions = None

    fld = _block(top, "field")
    try:
        params = FieldParams(
            alpha=_num(fld, "alpha", 1.0, "field"),
            beta=_num(fld, "beta", 1.0, "field"),
            solver_tol=_num(fld, "solver_tol", 1e-10, "field"),
            solver_max_iter=_num(fld, "solver_max_iter", 5000, "field", int),
            method=str(fld.get("solver", "cg")),
        )
    except ValueError as exc:
        raise ScenarioError(f"field: {exc}") from None

    algorithm = str(mis.get("algorithm", "algo3"))
    if algorithm not in ALGORITHMS:
        raise ScenarioError(f"mission.algorithm: must be one of {list(ALGORITHMS)}")
    T_u = mis.get("T_u", 500.0)
    if isinstance(T_u, list):
        T_u = [_num({"T_u": v}, "T_u", None, "mission") for v in T_u]
        if not T_u:
            raise ScenarioError("mission.T_u: empty list")
    else:
        T_u = _num(mis, "T_u", 500.0, "mission")
    max_edge = mis.get("max_edge")
    if max_edge is not None:
        max_edge = _num(mis, "max_edge", None, "mission")
        if max_edge >= kernel.r:
            raise ScenarioError(
                f"mission.max_edge: {max_edge} must be below the coverage radius r={kernel.r} "
                "(triangle capture would not guarantee coverage)"
            )

    out = _block(top, "output")
    artifacts = out.get("artifacts", ["summary", "curve", "trajectory"])
    if not isinstance(artifacts, list) or set(artifacts) - set(ARTIFACTS):
        raise ScenarioError(f"output.artifacts: choose from {list(ARTIFACTS)}")
    output = OutputSpec(
        directory=str(out.get("directory", "out")),
        artifacts=tuple(artifacts),
        stride=_num(out, "stride", 10, "output", int),
    )
    if output.stride < 1:
        raise ScenarioError("output.stride: must be at least 1")

    try:
        region = build_region(region_spec)
    except GeometryError as exc:
        raise ScenarioError(f"region: {exc}") from None
    if positions is None:
        positions = random_positions(region, n, seed)
    for i, p in enumerate(positions):
        if not region.contains(p):
            raise ScenarioError(f"agents.positions[{i}]: {p} is outside the workspace")

    try:
        return MissionConfig(
            region=region_spec,
            mixture=mixture,
            positions=np.array(positions, dtype=float),
            speed=speed,
            kernel=kernel,
            field=params,
            algorithm=algorithm,
            dt=_num(mis, "dt", 0.1, "mission"),
            T_u=T_u,
            k_max=_num(mis, "k_max", 7, "mission", int),
            eps_M=_num(mis, "eps_M", 1e-3, "mission"),
            max_steps=_num(mis, "max_steps", 100_000, "mission", int),
            seed=seed,
            max_edge=max_edge,
            stall_steps=_num(mis, "stall_steps", 1000, "mission", int),
            output=output,
        )
    except ValueError as exc:
        raise ScenarioError(f"mission: {exc}") from None


def random_positions(region, n: int, seed: int) -> list[tuple[float, float]]:
    rng = np.random.default_rng(seed)
    X, Y = region.center_grids()
    flat = np.flatnonzero(region.mask.ravel())
    picks = rng.choice(flat, size=n, replace=len(flat) < n)
    return [(float(X.ravel()[c]), float(Y.ravel()[c])) for c in picks]


def resolve_path(path: Union[str, Path]) -> Path:
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        return Path(str(resources.files("heatcover") / "scenarios" / f"{path}.yaml"))
    return p


def parse_scenario(path: Union[str, Path]) -> MissionConfig:
    """Load a scenario file (or a bundled scenario name) into a config."""
    p = resolve_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {str(path)!r}: {exc.strerror or exc}") from None
    return parse_text(text, str(p))


def parse_text(text: str, name: str = "<string>") -> MissionConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{name}:{mark.line + 1}:{mark.column + 1}" if mark else name
        raise ScenarioError(f"{where}: parse error: {getattr(exc, 'problem', exc)}") from None
    return config_from_dict(doc)


def config_to_dict(cfg: MissionConfig) -> dict:
    T_u = [float(v) for v in cfg.T_u] if isinstance(cfg.T_u, list) else float(cfg.T_u)
    mission = {
        "algorithm": cfg.algorithm,
        "dt": float(cfg.dt),
        "T_u": T_u,
        "k_max": int(cfg.k_max),
        "eps_M": float(cfg.eps_M),
        "max_steps": int(cfg.max_steps),
        "seed": int(cfg.seed),
        "stall_steps": int(cfg.stall_steps),
    }
    if cfg.max_edge is not None:
        mission["max_edge"] = float(cfg.max_edge)
    return {
        "region": {
            "outer": [float(v) for v in cfg.region.outer],
            "holes": [[float(v) for v in h] for h in cfg.region.holes],
            "spacing": float(cfg.region.spacing),
        },
        "workload": [
            {"amplitude": float(t.amplitude), "center": [float(c) for c in t.center], "width": float(t.width)}
            for t in cfg.mixture
        ],
        "agents": {
            "N": cfg.N,
            "positions": [[float(x), float(y)] for x, y in cfg.positions],
            "speed": float(cfg.speed),
            "kernel": {"P": float(cfg.kernel.P), "lambda": float(cfg.kernel.lam), "r": float(cfg.kernel.r)},
        },
        "field": {
            "alpha": float(cfg.field.alpha),
            "beta": float(cfg.field.beta),
            "solver_tol": float(cfg.field.solver_tol),
            "solver_max_iter": int(cfg.field.solver_max_iter),
            "solver": cfg.field.method,
        },
        "mission": mission,
        "output": {
            "directory": cfg.output.directory,
            "artifacts": list(cfg.output.artifacts),
            "stride": int(cfg.output.stride),
        },
    }


def dump_scenario(cfg: MissionConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
