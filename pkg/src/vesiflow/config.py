"""Scenario configuration: JSON schema, defaults and validation.

Schema (version 1)::

    {
      "version": 1,
      "model": "length" | "model1" | "model2" | "model3",
      "shapes": [{"kind": "ellipse", "a": 2, "b": 1, "elements": 64}, ...],
      "tau": 0.002, "alpha": 0, "beta": 0, "epsilon": 1e-7, "max_iters": 5000,
      "newton_tol": 1e-9, "newton_max_iter": 25, "sharpness": 25,
      "remesh_ratio": 0,
      "barrier": {
        "expr": {"type": "halfplane", "normal": [0, 1], "offset": 0.5, "name": "top"},
        "moving": {"primitives": ["top"], "gap": 0.05, "window": 0.5, "every": 1}
      },
      "output": {"frames_every": 10, "svg": false, "seed": 0}
    }

Barrier expressions nest ``{"type": "product", "factors": [...]}`` and
``{"type": "sum", "terms": [...]}`` over half-planes; a half-plane without
its own ``sharpness`` uses the top-level value.  ``remesh_ratio > 1`` re-places
the nodes equally in arclength before any step whose longest element exceeds
that multiple of the shortest (0 disables it).  Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .functionals import DEFAULT_SHARPNESS, BarrierSpec, HalfPlane, Product, Sum
from .orchestrator import MovingBarrierRule
from .shapes import ShapeSpec, build_shape
from .stepper import FLOW_MODELS, FlowParameters

SCHEMA_VERSION = 1

TOP_KEYS = {"version", "model", "shapes", "tau", "alpha", "beta", "epsilon", "max_iters",
            "newton_tol", "newton_max_iter", "sharpness", "remesh_ratio", "barrier", "output",
            "description"}
OUTPUT_KEYS = {"frames_every", "svg", "seed"}
BARRIER_KEYS = {"expr", "moving"}
MOVING_KEYS = {"primitives", "gap", "window", "every"}
EXPR_KEYS = {"halfplane": {"type", "normal", "offset", "sharpness", "name"},
             "product": {"type", "factors"},
             "sum": {"type", "terms"}}

DEFAULTS = {"tau": 1e-3, "alpha": 0.0, "beta": 0.0, "epsilon": 1e-7, "max_iters": 1000,
            "newton_tol": 1e-9, "newton_max_iter": 25, "sharpness": DEFAULT_SHARPNESS}
DEFAULT_FRAMES_EVERY = 10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    model: str
    shapes: tuple
    params: FlowParameters
    sharpness: float = DEFAULT_SHARPNESS
    barrier: BarrierSpec | None = None
    moving: MovingBarrierRule | None = None
    frames_every: int = DEFAULT_FRAMES_EVERY
    svg: bool = False
    seed: int = 0
    description: str = ""
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def build_meshes(self):
        return [build_shape(s) for s in self.shapes]


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(repr, unknown))}")


def _number(obj, key, default, where, positive=False, nonneg=False):
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    value = float(value)
    if positive and not value > 0:
        raise ConfigError(f"{where}.{key} must be positive")
    if nonneg and value < 0:
        raise ConfigError(f"{where}.{key} must be non-negative")
    return value


def _integer(obj, key, default, where, minimum=0):
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}.{key} must be an integer")
    if value < minimum:
        raise ConfigError(f"{where}.{key} must be at least {minimum}")
    return value


def _parse_expr(obj, sharpness, where):
    if not isinstance(obj, dict) or obj.get("type") not in EXPR_KEYS:
        raise ConfigError(f"{where}.type must be one of {sorted(EXPR_KEYS)}")
    kind = obj["type"]
    _reject_unknown(obj, EXPR_KEYS[kind], where)
    try:
        if kind == "halfplane":
            normal = obj.get("normal")
            if not (isinstance(normal, list) and len(normal) == 2):
                raise ConfigError(f"{where}.normal must be a list of two numbers")
            return HalfPlane(tuple(float(c) for c in normal),
                             _number(obj, "offset", None, where),
                             _number(obj, "sharpness", sharpness, where, positive=True),
                             obj.get("name"))
        key = "factors" if kind == "product" else "terms"
        items = obj.get(key)
        if not isinstance(items, list) or not items:
            raise ConfigError(f"{where}.{key} must be a non-empty list")
        parts = tuple(_parse_expr(x, sharpness, f"{where}.{key}[{i}]") for i, x in enumerate(items))
        return Product(parts) if kind == "product" else Sum(parts)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_shape(obj, where):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{where} must be an object with a 'kind'")
    params = {k: v for k, v in obj.items() if k not in ("kind", "elements")}
    try:
        spec = ShapeSpec(obj["kind"], params, _integer(obj, "elements", 64, where, 1))
        spec.curve()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return spec


def config_from_dict(raw: dict) -> ScenarioConfig:
    _reject_unknown(raw, TOP_KEYS, "config")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    model = raw.get("model")
    if model not in FLOW_MODELS:
        raise ConfigError(f"config.model must be one of {list(FLOW_MODELS)}")
    shapes_raw = raw.get("shapes")
    if not isinstance(shapes_raw, list) or not shapes_raw:
        raise ConfigError("config.shapes must be a non-empty list")
    shapes = tuple(_parse_shape(s, f"shapes[{i}]") for i, s in enumerate(shapes_raw))
    if model == "model3" and len(shapes) < 2:
        raise ConfigError("model3 requires at least two shapes")
    if model != "model3" and len(shapes) > 1:
        raise ConfigError(f"{model} evolves a single vesicle; use model3 for several")
    num = {k: _number(raw, k, DEFAULTS[k], "config", positive=True)
           for k in ("tau", "epsilon", "newton_tol", "sharpness")}
    alpha = _number(raw, "alpha", DEFAULTS["alpha"], "config", nonneg=True)
    beta = _number(raw, "beta", DEFAULTS["beta"], "config", nonneg=True)
    if model in ("length", "model1") and (alpha or beta):
        raise ConfigError(f"{model} takes no penalty terms (alpha = beta = 0)")
    if model == "model2" and beta:
        raise ConfigError("model2 has no distance term (beta = 0)")
    remesh = _number(raw, "remesh_ratio", 0.0, "config", nonneg=True)
    if remesh and remesh <= 1.0:
        raise ConfigError("config.remesh_ratio must exceed 1 (or be 0 to disable)")
    max_iters = _integer(raw, "max_iters", DEFAULTS["max_iters"], "config", 0)
    newton_max = _integer(raw, "newton_max_iter", DEFAULTS["newton_max_iter"], "config", 1)

    barrier = moving = None
    if "barrier" in raw and raw["barrier"] is not None:
        b = raw["barrier"]
        _reject_unknown(b, BARRIER_KEYS, "barrier")
        if "expr" not in b:
            raise ConfigError("barrier.expr is required")
        barrier = BarrierSpec(_parse_expr(b["expr"], num["sharpness"], "barrier.expr"))
        names = [q.name for q in barrier.primitives() if q.name is not None]
        if len(names) != len(set(names)):
            raise ConfigError("barrier primitive names must be unique")
        if "moving" in b and b["moving"] is not None:
            mv = b["moving"]
            _reject_unknown(mv, MOVING_KEYS, "barrier.moving")
            prims = mv.get("primitives")
            if not isinstance(prims, list) or not prims or not set(prims) <= set(names):
                raise ConfigError("barrier.moving.primitives must name barrier primitives")
            try:
                moving = MovingBarrierRule(tuple(prims), _number(mv, "gap", None, "barrier.moving"),
                                           _number(mv, "window", 0.5, "barrier.moving"),
                                           _integer(mv, "every", 1, "barrier.moving", 1))
            except ValueError as exc:
                raise ConfigError(f"barrier.moving: {exc}") from exc
    if model in ("model2", "model3") and alpha > 0 and barrier is None:
        raise ConfigError(f"{model} with alpha > 0 requires a barrier")

    out = raw.get("output", {})
    _reject_unknown(out, OUTPUT_KEYS, "output")
    svg = out.get("svg", False)
    if not isinstance(svg, bool):
        raise ConfigError("output.svg must be true or false")
    description = raw.get("description", "")
    if not isinstance(description, str):
        raise ConfigError("config.description must be a string")
    params = FlowParameters(tau=num["tau"], alpha=alpha, beta=beta, epsilon=num["epsilon"],
                            max_iters=max_iters, newton_tol=num["newton_tol"],
                            newton_max_iter=newton_max, model=model, remesh_ratio=remesh)
    return ScenarioConfig(model, shapes, params, num["sharpness"], barrier, moving,
                          _integer(out, "frames_every", DEFAULT_FRAMES_EVERY, "output", 1),
                          svg, _integer(out, "seed", 0, "output", 0), description, raw)


def parse_config_text(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: JSON parse error at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


def preset_names():
    root = resources.files("vesiflow") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_text(name: str) -> str:
    path = resources.files("vesiflow") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return path.read_text()


def parse_config(path_or_preset) -> ScenarioConfig:
    """Load a config file, or a shipped preset when given a bare preset name."""
    path = Path(path_or_preset)
    if path.is_file():
        return parse_config_text(path.read_text(), str(path))
    if path.suffix == "" and path.parent == Path("."):
        return parse_config_text(preset_text(str(path_or_preset)), f"preset {path_or_preset}")
    raise ConfigError(f"config file not found: {path}")
