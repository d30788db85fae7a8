"""Scenario files: one YAML document per run, merged over documented defaults.

Coefficients are given as numpy expressions in ``x`` (evaluated in a restricted
namespace) or as CSV tables; the resolved configuration, defaults included, is
what the manifest records and hashes.
"""
from __future__ import annotations

import ast
import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml
from scipy import stats

from ._numerics import as_vectorized
from .coeffs import (
    CoefficientSet,
    ExplicitPotential,
    PiecewiseLinearDrift,
    SmoothDrift,
    brownian_environment,
    uniform_grid,
)
from .errors import ScenarioError
from .pathfunc import PathFunctional
from .sim import SimConfig

DEFAULTS: dict = {
    "name": "scenario",
    "coefficients": {
        "sigma": "1",
        "drift": {"kind": "zero"},
        "mollifier_scale": 0.01,
    },
    "grid": {"x_min": -10.0, "x_max": 10.0, "dx": 0.01},
    "build": {"quad_tol": 1e-8, "convergence_threshold": 1e-6},
    "functional": {"kind": "constant", "value": 0.0},
    "sim": {"T": 1.0, "n_steps": 256, "n_paths": 10000, "x0": 0.0, "seed": 0,
            "engine": "both", "grid_exit_fraction": 0.01, "ess_floor": 0.1,
            "sigma0_cap": 1000.0},
    "verify": {
        "tests": ["weights", "martingale", "law", "qv", "uniqueness"],
        "observables": ["X_T", "sup_X", "int_X"],
        "reference": None,
        "negative_control": True,
        "localize": None,
        "n_boot": 300,
        "qv": {"n_steps": 16384, "n_paths": 200},
        "uniqueness": {"n_steps": 1024, "n_paths": 100, "levels": 4},
    },
    "output": {"dir": "out", "csv": "auto", "csv_max_rows": 200000},
}

_FUNCS = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh", "arctan",
    "sign", "where", "maximum", "minimum", "clip", "heaviside", "floor")}
_FUNCS.update({"pi": np.pi, "e": np.e})
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
                  ast.Constant, ast.Compare, ast.IfExp, ast.operator, ast.unaryop, ast.cmpop,
                  ast.keyword, ast.Tuple)


def expression(src: Any, var: str = "x"):
    """Compile a numeric expression in ``var`` to a vectorized callable."""
    text = str(src)
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ScenarioError(f"bad expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ScenarioError(f"expression {text!r} uses a disallowed construct")
        if isinstance(node, ast.Name) and node.id != var and node.id not in _FUNCS:
            raise ScenarioError(f"unknown name {node.id!r} in {text!r}")
    code = compile(tree, "<scenario>", "eval")

    def fn(x):
        return eval(code, {"__builtins__": {}}, {**_FUNCS, var: np.asarray(x, dtype=float)})

    fn.__name__ = text
    return as_vectorized(fn)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class Scenario:
    config: dict
    base_dir: Path

    @classmethod
    def load(cls, path, overrides: Optional[dict] = None) -> "Scenario":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(raw, path.parent, overrides)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".", overrides: Optional[dict] = None) -> "Scenario":
        if not isinstance(raw, dict):
            raise ScenarioError("scenario must be a mapping")
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ScenarioError(f"unknown scenario sections: {sorted(unknown)}")
        cfg = _merge(DEFAULTS, raw)
        if overrides:
            cfg = _merge(cfg, overrides)
        sc = cls(cfg, Path(base_dir))
        sc.validate()
        return sc

    # -- validation and derived objects

    def validate(self) -> None:
        fn = self.config["functional"]
        for key in ("growth_K", "lipschitz_K"):
            v = fn.get(key)
            if v is not None and not (isinstance(v, (int, float)) and v > 0):
                raise ScenarioError(f"functional.{key} must be positive when declared")
        drift = self.config["coefficients"]["drift"]
        if drift.get("kind") == "table":
            self._file(drift.get("path"))
        sig = self.config["coefficients"]["sigma"]
        if isinstance(sig, dict):
            self._file(sig.get("table"))
        if self.config["sim"]["engine"] not in ("transformed", "weighted", "both"):
            raise ScenarioError("sim.engine must be transformed, weighted or both")
        bad = set(self.config["verify"]["tests"]) - {"weights", "martingale", "law", "qv", "uniqueness"}
        if bad:
            raise ScenarioError(f"unknown verification tests {sorted(bad)}")

    def _file(self, rel) -> Path:
        if not rel:
            raise ScenarioError("table entry needs a file path")
        p = Path(rel)
        p = p if p.is_absolute() else self.base_dir / p
        if not p.is_file():
            raise ScenarioError(f"referenced file {p} does not exist")
        return p

    @property
    def name(self) -> str:
        return str(self.config["name"])

    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def sigma(self):
        sig = self.config["coefficients"]["sigma"]
        if isinstance(sig, dict):
            data = np.loadtxt(self._file(sig["table"]), delimiter=",", ndmin=2,
                              skiprows=int(sig.get("skiprows", 1)))
            xs, vs = data[:, 0], data[:, 1]
            return as_vectorized(lambda x: np.interp(x, xs, vs))
        return expression(sig)

    def drift(self):
        d = self.config["coefficients"]["drift"]
        kind = d.get("kind")
        if kind == "zero":
            return ExplicitPotential(expression("0"), expression("0"))
        if kind == "potential":
            prime = d.get("Sigma_prime")
            return ExplicitPotential(expression(d["Sigma"]), None if prime is None else expression(prime))
        if kind == "smooth":
            return SmoothDrift(expression(d["b"]), expression(d["bprime"]))
        if kind == "table":
            return PiecewiseLinearDrift.from_csv(self._file(d["path"]))
        if kind == "brownian":
            return brownian_environment(int(d.get("seed", 0)), float(d.get("half_width", 12.0)),
                                        float(d.get("spacing", 0.01)), float(d.get("scale", -0.5)))
        raise ScenarioError(f"unknown drift kind {kind!r}")

    def coefficients(self) -> CoefficientSet:
        c = self.config["coefficients"]
        g = self.config["grid"]
        grid = uniform_grid(float(g["x_min"]), float(g["x_max"]), float(g["dx"]))
        return CoefficientSet(self.sigma(), self.drift(), float(c["mollifier_scale"]), grid)

    def build_options(self) -> dict:
        b = self.config["build"]
        return {"quad_tol": float(b["quad_tol"]),
                "convergence_threshold": float(b["convergence_threshold"])}

    def functional(self) -> PathFunctional:
        f = dict(self.config["functional"])
        kind = f.pop("kind", "constant")
        meta = {k: (None if f.get(k) is None else float(f[k]))
                for k in ("growth_K", "lipschitz_K", "gamma_at_zero_sup")}
        if kind == "constant":
            value = float(f.get("value", 0.0))
            extra = {k: v for k, v in meta.items() if v is not None}
            if value == 0.0:
                return PathFunctional.constant(0.0, name="0", **extra)
            return PathFunctional.constant(value, **extra)
        try:
            return PathFunctional(kind=kind, g=f.get("g", "identity"), tau=float(f.get("tau", 0.0)),
                                  scale=float(f.get("scale", 1.0)), offset=float(f.get("offset", 0.0)),
                                  name=str(f.get("name", "")), **meta)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    def sim_config(self, scheme: str = "transformed-euler", **changes) -> SimConfig:
        s = self.config["sim"]
        kw = dict(T=float(s["T"]), n_steps=int(s["n_steps"]), n_paths=int(s["n_paths"]),
                  x0=float(s["x0"]), seed=int(s["seed"]), scheme=scheme,
                  grid_exit_fraction=float(s["grid_exit_fraction"]),
                  ess_floor=float(s["ess_floor"]), sigma0_cap=float(s["sigma0_cap"]))
        kw.update(changes)
        try:
            return SimConfig(**kw)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    def engines(self) -> list:
        e = self.config["sim"]["engine"]
        return {"transformed": ["transformed"], "weighted": ["weighted"],
                "both": ["transformed", "weighted"]}[e]

    def reference_cdfs(self) -> Optional[dict]:
        ref = self.config["verify"].get("reference")
        if not ref:
            return None
        out = {}
        for obs, spec in ref.items():
            spec = dict(spec)
            dist = getattr(stats, spec.pop("dist", "norm"), None)
            if dist is None or not hasattr(dist, "cdf"):
                raise ScenarioError(f"unknown reference distribution for {obs}")
            out[obs] = dist(**spec).cdf
        return out
