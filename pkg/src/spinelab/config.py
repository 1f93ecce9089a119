"""INI run configurations.

A config has a ``[model]`` section (``kind = bbm | typed | ou`` plus that
model's parameters) and a ``[run]`` section.  Vectors and matrices are JSON
row lists, e.g. ``q = [[-1, 1], [1, -1]]``; per-type offspring laws are
separated by ``;`` (a single law applies to every type).
"""
from __future__ import annotations

import configparser
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import offspring as off
from .bbm import BbmParams
from .errors import ConfigInvalid
from .multitype import TypedParams
from .outype import DEFAULT_H, OuParams

MODEL_KEYS = {
    "bbm": {"kind", "r", "offspring", "x0"},
    "typed": {"kind", "theta", "q", "a", "r", "offspring", "pi", "x0", "y0"},
    "ou": {"kind", "theta", "a", "r", "rho", "x0", "y0"},
}
RUN_KEYS = {"lambda", "p", "t", "time_grid", "lambda_grid", "p_grid", "n_reps", "seed", "cap", "h",
            "output", "measure", "replicate"}


@dataclass(frozen=True)
class RunConfig:
    kind: str
    model: object
    lam: Optional[float] = None
    p: Optional[float] = None
    t: Optional[float] = None
    time_grid: Optional[Tuple[float, ...]] = None
    lambda_grid: Optional[Tuple[float, ...]] = None
    p_grid: Optional[Tuple[float, ...]] = None
    n_reps: int = 1000
    seed: int = 0
    cap: Optional[int] = None
    h: float = DEFAULT_H
    output: Optional[str] = None
    measure: str = "p"
    replicate: int = 0
    text: str = field(default="", compare=False)

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigInvalid(f"[run] {'lambda' if name == 'lam' else name} is required")
        return self


def _json(section, key, raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"[{section}] {key}: expected a JSON value, got {raw!r}") from exc


def _float(section, key, raw):
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"[{section}] {key}: expected a number, got {raw!r}") from exc


def _int(section, key, raw):
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"[{section}] {key}: expected an integer, got {raw!r}") from exc


def _floats(section, key, raw):
    val = _json(section, key, raw)
    if not isinstance(val, list) or not val:
        raise ConfigInvalid(f"[{section}] {key}: expected a nonempty list")
    return tuple(float(v) for v in val)


def _offspring(raw, n=None):
    try:
        laws = [off.parse(s) for s in raw.split(";") if s.strip()]
    except ValueError as exc:
        raise ConfigInvalid(f"[model] offspring: {exc}") from exc
    if n is not None and len(laws) == 1:
        laws = laws * n
    return laws


def _model(sec):
    kind = sec.get("kind", "").strip()
    if kind not in MODEL_KEYS:
        raise ConfigInvalid("[model] kind must be one of bbm, typed, ou")
    unknown = set(sec) - MODEL_KEYS[kind]
    if unknown:
        raise ConfigInvalid(f"[model] unknown key(s) for {kind}: {', '.join(sorted(unknown))}")
    num = lambda k, d=None: d if k not in sec else _float("model", k, sec[k])  # noqa: E731
    for k in MODEL_KEYS[kind] - {"kind", "pi", "x0", "y0"}:
        if k not in sec:
            raise ConfigInvalid(f"[model] {k} is required for {kind}")
    try:
        if kind == "bbm":
            laws = _offspring(sec["offspring"])
            if len(laws) != 1:
                raise ConfigInvalid("[model] offspring: bbm takes a single law")
            return BbmParams(num("r"), laws[0], num("x0", 0.0))
        if kind == "ou":
            return OuParams(num("theta"), num("a"), num("r"), num("rho"), num("x0", 0.0), num("y0", 0.0))
        q = np.array(_json("model", "q", sec["q"]), dtype=float)
        n = q.shape[0] if q.ndim == 2 else 0
        vec = lambda k: np.array(_json("model", k, sec[k]), dtype=float)  # noqa: E731
        return TypedParams(num("theta"), q, vec("a"), vec("r"), _offspring(sec["offspring"], n),
                           pi=vec("pi") if "pi" in sec else None, x0=num("x0", 0.0),
                           y0=_int("model", "y0", sec["y0"]) if "y0" in sec else 0)
    except ConfigInvalid:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(f"[model] {exc}") from exc


def parse_config(text: str, overrides: Optional[dict] = None) -> RunConfig:
    """Parse and validate a config; ``overrides`` (seed, n_reps, output) win over the file."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(f"malformed config: {exc}") from exc
    if "model" not in cp:
        raise ConfigInvalid("missing [model] section")
    extra = set(cp.sections()) - {"model", "run"}
    if extra:
        raise ConfigInvalid(f"unknown section(s): {', '.join(sorted(extra))}")
    sec_m = dict(cp["model"])
    sec_r = dict(cp["run"]) if "run" in cp else {}
    for k, v in (overrides or {}).items():
        if v is not None:
            sec_r[k] = str(v)
    unknown = set(sec_r) - RUN_KEYS
    if unknown:
        raise ConfigInvalid(f"[run] unknown key(s): {', '.join(sorted(unknown))}")
    model = _model(sec_m)
    kind = sec_m["kind"].strip()
    g = sec_r.get
    kw = {}
    for key, name in (("lambda", "lam"), ("p", "p"), ("t", "t")):
        if key in sec_r:
            kw[name] = _float("run", key, sec_r[key])
    for key in ("time_grid", "lambda_grid", "p_grid"):
        if key in sec_r:
            kw[key] = _floats("run", key, sec_r[key])
    for key in ("n_reps", "seed", "cap", "replicate"):
        if key in sec_r:
            kw[key] = _int("run", key, sec_r[key])
    if "h" in sec_r:
        kw["h"] = _float("run", "h", sec_r["h"])
    if g("output"):
        kw["output"] = sec_r["output"].strip()
    if "measure" in sec_r:
        kw["measure"] = sec_r["measure"].strip().lower()
        if kw["measure"] not in ("p", "q"):
            raise ConfigInvalid("[run] measure must be p or q")
    if kw.get("n_reps", 2) < 2:
        raise ConfigInvalid("[run] n_reps must be >= 2")
    if kw.get("h", 1.0) <= 0:
        raise ConfigInvalid("[run] h must be > 0")
    if kw.get("t", 0.0) < 0:
        raise ConfigInvalid("[run] t must be >= 0")
    if kw.get("p") is not None and not 1.0 <= kw["p"] <= 2.0:
        raise ConfigInvalid("[run] p must lie in [1, 2]")
    if kw.get("lam") is not None and kw["lam"] > 0:
        raise ConfigInvalid("[run] lambda must be <= 0")
    if "time_grid" in kw and list(kw["time_grid"]) != sorted(set(kw["time_grid"])):
        raise ConfigInvalid("[run] time_grid must be strictly increasing")
    cp_out = configparser.ConfigParser(interpolation=None)
    cp_out["model"] = sec_m
    cp_out["run"] = {k: sec_r[k] for k in sorted(sec_r) if k != "output"}
    buf = io.StringIO()
    cp_out.write(buf)
    return RunConfig(kind=kind, model=model, text=buf.getvalue().strip(), **kw)


def load_config(path, overrides=None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)
