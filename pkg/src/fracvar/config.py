"""JSON problem configs for the command line.

A config names every field explicitly; unknown keys are rejected. Example::

    {
      "interval": {"a": 0, "b": 1},
      "orders": {"alpha": 0.5, "beta": 0.5, "gamma": 1},
      "grid": {"n": 501},
      "lagrangian": "(v - p1*x)^2",
      "parameters": {"p1": 1.329340388179137},
      "boundary": [{"left": 0, "right": 1}],
      "reference": {"solution": ["x^1.5"]}
    }

Right boundary values are a number, ``"free"`` or ``{"max": bound}``.
Parameters are numbers, ``{"expr": "..."}`` (a function of ``x`` sampled on
the grid) or ``{"combined_caputo_of": "..."}`` (the discrete combined
derivative of such a function, for manufactured problems).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

import jsonschema
import numpy as np

from .expr import Bindings, ExprError, parse
from .fracops import FracParams, Grid, combined_caputo
from .oracle import CLASSICAL_TAGS, classical_limit_solution
from .variational import Boundary, Constraint, Problem, SolverOptions, Trajectory

__all__ = ["ConfigError", "ProblemConfig", "load_config", "parse_config"]

_NUMBER = {"type": "number"}
_EXPR = {"type": "string", "minLength": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["interval", "orders", "grid", "lagrangian", "boundary"],
    "properties": {
        "interval": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a", "b"],
            "properties": {"a": _NUMBER, "b": _NUMBER},
        },
        "orders": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alpha", "beta", "gamma"],
            "properties": {"alpha": _NUMBER, "beta": _NUMBER, "gamma": _NUMBER},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n"],
            "properties": {"n": {"type": "integer", "minimum": 3}},
        },
        "dims": {"type": "integer", "minimum": 1},
        "lagrangian": _EXPR,
        "parameters": {
            "type": "object",
            "additionalProperties": {
                "oneOf": [
                    _NUMBER,
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["expr"],
                        "properties": {"expr": _EXPR},
                    },
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["combined_caputo_of"],
                        "properties": {"combined_caputo_of": _EXPR},
                    },
                ]
            },
        },
        "boundary": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["left", "right"],
                "properties": {
                    "left": _NUMBER,
                    "right": {
                        "oneOf": [
                            _NUMBER,
                            {"const": "free"},
                            {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["max"],
                                "properties": {"max": _NUMBER},
                            },
                        ]
                    },
                },
            },
        },
        "constraints": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["integrand", "target"],
                "properties": {
                    "integrand": _EXPR,
                    "target": _NUMBER,
                    "relation": {"enum": ["eq", "le"]},
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **{
                    k: {"type": "number", "exclusiveMinimum": 0}
                    for k in ("tol_g", "tol_r", "tol_v", "tol_c", "tol_cs", "tol_t", "tol_reg")
                },
                "el_margin": {"type": "number", "minimum": 0, "maximum": 0.5},
                "max_iter": {"type": "integer", "minimum": 0},
                "max_outer": {"type": "integer", "minimum": 1},
            },
        },
        "reference": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["solution"],
                    "properties": {"solution": {"type": "array", "minItems": 1, "items": _EXPR}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["classical"],
                    "properties": {"classical": {"enum": list(CLASSICAL_TAGS)}},
                },
            ]
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}


class ConfigError(ValueError):
    """Invalid config; the message starts with the offending field path."""


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _fail(path, message: str):
    raise ConfigError(f"{_path(path)}: {message}")


def _x_function(text: str, grid: Grid, path) -> np.ndarray:
    try:
        ast = parse(text, 1)
        if ast.depends_on("y1") or ast.depends_on("v1"):
            _fail(path, "must be a function of x only")
        vals = ast.eval(Bindings(grid.nodes, [np.zeros(1)], [np.zeros(1)]))
    except ExprError as exc:
        _fail(path, str(exc))
    return np.broadcast_to(np.asarray(vals, dtype=float), (grid.n,)).copy()


@dataclass(frozen=True)
class ProblemConfig:
    """A validated config; :meth:`problem` builds the discretized problem."""

    data: dict

    @property
    def n(self) -> int:
        return int(self.data["grid"]["n"])

    @property
    def dims(self) -> int:
        return int(self.data.get("dims", len(self.data["boundary"])))

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    @property
    def has_reference(self) -> bool:
        return "reference" in self.data

    def params(self) -> FracParams:
        o = self.data["orders"]
        try:
            return FracParams(o["alpha"], o["beta"], o["gamma"])
        except ValueError as exc:
            _fail(["orders"], str(exc))

    def grid(self, n: Optional[int] = None) -> Grid:
        iv = self.data["interval"]
        n = self.n if n is None else int(n)
        try:
            return Grid(iv["a"], iv["b"], n)
        except ValueError as exc:
            _fail(["interval"], str(exc))

    def problem(self, n: Optional[int] = None) -> Problem:
        d = self.data
        grid = self.grid(n)
        params = self.params()
        N = self.dims
        names = sorted(d.get("parameters", {}))
        values = {}
        for name, spec in d.get("parameters", {}).items():
            path = ["parameters", name]
            if isinstance(spec, dict) and "expr" in spec:
                values[name] = _x_function(spec["expr"], grid, path + ["expr"])
            elif isinstance(spec, dict):
                f = _x_function(spec["combined_caputo_of"], grid, path + ["combined_caputo_of"])
                values[name] = combined_caputo(grid.sample(lambda x: f), params).values
            else:
                values[name] = float(spec)

        def expression(text, path):
            try:
                return parse(text, N, names)
            except ExprError as exc:
                _fail(path, str(exc))

        lagrangian = expression(d["lagrangian"], ["lagrangian"])
        if len(d["boundary"]) != N:
            _fail(["boundary"], f"expected {N} entries (one per component), got {len(d['boundary'])}")
        boundary = []
        for i, bc in enumerate(d["boundary"]):
            right = bc["right"]
            if right == "free":
                boundary.append(Boundary.free(bc["left"]))
            elif isinstance(right, dict):
                boundary.append(Boundary.upper(bc["left"], right["max"]))
            else:
                boundary.append(Boundary.fixed(bc["left"], right))
        constraints = [
            Constraint(expression(c["integrand"], ["constraints", j, "integrand"]), c["target"], c.get("relation", "eq"))
            for j, c in enumerate(d.get("constraints", []))
        ]
        options = SolverOptions(**d.get("solver", {}))
        try:
            return Problem(params, grid, lagrangian, boundary, constraints, values, options)
        except ValueError as exc:
            _fail([], str(exc))

    def reference(self, grid: Grid) -> Optional[Trajectory]:
        """Sampled reference solution on ``grid``, or ``None`` when the config has none."""
        ref = self.data.get("reference")
        if ref is None:
            return None
        if "solution" in ref:
            if len(ref["solution"]) != self.dims:
                _fail(["reference", "solution"], f"expected {self.dims} expressions")
            rows = [_x_function(t, grid, ["reference", "solution", i]) for i, t in enumerate(ref["solution"])]
            return Trajectory(grid, np.array(rows))
        tag = ref["classical"]
        if self.dims != 1:
            _fail(["reference", "classical"], "classical references are one-dimensional")
        bc = self.data["boundary"][0]
        right = bc["right"] if isinstance(bc["right"], (int, float)) else bc["left"]
        cons = self.data.get("constraints", [])
        area = cons[0]["target"] if cons else 0.0
        return classical_limit_solution(tag, grid, bc["left"], right, area)


def parse_config(data: Any) -> ProblemConfig:
    """Validate a decoded JSON document and build a :class:`ProblemConfig`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        # oneOf failures are opaque; report the most specific sub-error
        if err.context:
            err = min(err.context, key=lambda e: (-len(e.absolute_path), len(e.message)))
        _fail(list(err.absolute_path), err.message)
    cfg = ProblemConfig(data)
    cfg.problem()  # surface semantic errors now
    cfg.reference(cfg.grid(cfg.n))
    return cfg


def load_config(path) -> ProblemConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data)
