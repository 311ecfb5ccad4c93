"""JSON file formats for task sets, generator specs and run configs.

Every file is a JSON object carrying ``"format"`` and ``"version"`` header
fields. Unknown keys are rejected so that a typo never silently falls back to
a default. Times are integer nanoseconds; ``horizon`` may also be written as a
string with a unit suffix ("2s", "500ms", "40us", "1000ns").
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from .model import ConfigError, FixedExec, ServerParams, SystemConfig, TaskSpec, UniformExec
from .workload import GenSpec

VERSION = 1
TASKSET = "mgrub-taskset"
GENSPEC = "mgrub-genspec"
CONFIG = "mgrub-config"
PLAN = "mgrub-plan"
INDEX = "mgrub-index"

_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}


class InputError(ConfigError):
    """Unreadable or malformed input file."""


def parse_time(value) -> int:
    """Integer ns, or a string such as "2s" / "500ms" / "1500000"."""
    if isinstance(value, bool):
        raise InputError(f"bad time value {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(ns|us|ms|s)?\s*", value)
        if m:
            ns = Fraction(m.group(1)) * _UNITS[m.group(2) or "ns"]
            if ns.denominator == 1:
                return int(ns)
    raise InputError(f"bad time value {value!r}")


def load_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from e


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def check_keys(obj, where: str, required: Iterable[str] = (), optional: Iterable[str] = ()):
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected an object")
    required, optional = set(required), set(optional)
    unknown = set(obj) - required - optional
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise InputError(f"{where}: missing keys {sorted(missing)}")


def check_header(obj, fmt: str, where: str):
    if not isinstance(obj, dict) or obj.get("format") != fmt:
        raise InputError(f"{where}: not a {fmt} file")
    if obj.get("version") != VERSION:
        raise InputError(f"{where}: unsupported {fmt} version {obj.get('version')!r}")


def header(fmt: str) -> Dict[str, Any]:
    return {"format": fmt, "version": VERSION}


def _int(v, where) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise InputError(f"{where}: expected an integer, got {v!r}")
    return v


# ---------------------------------------------------------------- task sets


def task_to_json(t: TaskSpec) -> dict:
    em = t.exec_model
    ex = {"fixed": em.c} if isinstance(em, FixedExec) else {"uniform": [em.lo, em.hi]}
    return {"id": t.id, "kind": t.kind, "period_T": t.period_T, "rel_deadline_D": t.rel_deadline_D,
            "exec": ex, "arrival_offset": t.arrival_offset, "jitter_mean": t.jitter_mean}


def task_from_json(obj, where="task") -> TaskSpec:
    check_keys(obj, where, ("id", "period_T", "exec"),
               ("kind", "rel_deadline_D", "arrival_offset", "jitter_mean"))
    ex = obj["exec"]
    check_keys(ex, f"{where}.exec", (), ("fixed", "uniform"))
    if len(ex) != 1:
        raise InputError(f"{where}.exec: give exactly one of 'fixed' or 'uniform'")
    if "fixed" in ex:
        em = FixedExec(_int(ex["fixed"], f"{where}.exec.fixed"))
    else:
        lo_hi = ex["uniform"]
        if not isinstance(lo_hi, list) or len(lo_hi) != 2:
            raise InputError(f"{where}.exec.uniform: expected [lo, hi]")
        em = UniformExec(_int(lo_hi[0], where), _int(lo_hi[1], where))
    return TaskSpec(id=_int(obj["id"], where), period_T=_int(obj["period_T"], where), exec_model=em,
                    kind=obj.get("kind", "periodic"), rel_deadline_D=obj.get("rel_deadline_D"),
                    arrival_offset=obj.get("arrival_offset", 0), jitter_mean=obj.get("jitter_mean", 0))


def server_to_json(s: ServerParams) -> dict:
    return {"id": s.id, "Q": s.max_budget_Q, "P": s.period_P}


def server_from_json(obj, where="server") -> ServerParams:
    check_keys(obj, where, ("id",), ("Q", "P", "U"))
    U = obj.get("U")
    if isinstance(U, str):
        U = Fraction(U)
    return ServerParams.from_any(_int(obj["id"], where), obj.get("Q"), obj.get("P"), U)


def genspec_to_json(spec: GenSpec) -> dict:
    out = asdict(spec)
    out["period_range"] = list(spec.period_range)
    return out


_GENSPEC_KEYS = ("n_tasks", "total_U", "period_range", "alpha", "gamma", "seed", "period_granularity")


def genspec_from_json(obj, where="generator", **override) -> GenSpec:
    check_keys(obj, where, (), _GENSPEC_KEYS)
    kw = dict(obj)
    kw.update({k: v for k, v in override.items() if v is not None})
    if "period_range" in kw:
        pr = kw["period_range"]
        if not isinstance(pr, (list, tuple)) or len(pr) != 2:
            raise InputError(f"{where}.period_range: expected [min, max]")
        kw["period_range"] = (parse_time(pr[0]), parse_time(pr[1]))
    return GenSpec(**kw)


def taskset_to_json(tasks: Sequence[TaskSpec], servers: Sequence[ServerParams],
                    spec: Optional[GenSpec] = None) -> dict:
    out = header(TASKSET)
    out["generator"] = genspec_to_json(spec) if spec is not None else None
    out["tasks"] = [task_to_json(t) for t in tasks]
    out["servers"] = [server_to_json(s) for s in servers]
    return out


def taskset_from_json(obj, where="taskset") -> Tuple[List[TaskSpec], List[ServerParams]]:
    check_header(obj, TASKSET, where)
    check_keys(obj, where, ("format", "version", "tasks", "servers"), ("generator",))
    if not isinstance(obj["tasks"], list) or not isinstance(obj["servers"], list):
        raise InputError(f"{where}: 'tasks' and 'servers' must be lists")
    tasks = [task_from_json(t, f"{where}.tasks[{i}]") for i, t in enumerate(obj["tasks"])]
    servers = [server_from_json(s, f"{where}.servers[{i}]") for i, s in enumerate(obj["servers"])]
    return tasks, servers


def load_taskset(path) -> Tuple[List[TaskSpec], List[ServerParams]]:
    return taskset_from_json(load_json(path), str(path))


def save_taskset(path, tasks, servers, spec: Optional[GenSpec] = None):
    dump_json(taskset_to_json(tasks, servers, spec), path)


# ------------------------------------------------------------------- config

_CONFIG_KEYS = ("m", "mode", "init_reclaim", "admission", "horizon", "seed",
                "epsilon_margin", "bcl_condition_b")


def config_to_json(cfg: SystemConfig) -> dict:
    out = header(CONFIG)
    out.update(m=cfg.m, mode=cfg.mode.value, init_reclaim=cfg.init_reclaim,
               admission=cfg.admission.value, horizon=cfg.horizon, seed=cfg.seed,
               epsilon_margin=str(cfg.epsilon_margin), bcl_condition_b=cfg.bcl_condition_b)
    return out


def config_from_json(obj, where="config", **override) -> SystemConfig:
    check_header(obj, CONFIG, where)
    check_keys(obj, where, ("format", "version"), _CONFIG_KEYS)
    kw = {k: v for k, v in obj.items() if k not in ("format", "version")}
    kw.update({k: v for k, v in override.items() if v is not None})
    if kw.get("horizon") is not None:
        kw["horizon"] = parse_time(kw["horizon"])
    if isinstance(kw.get("epsilon_margin"), str):
        kw["epsilon_margin"] = Fraction(kw["epsilon_margin"])
    try:
        return SystemConfig(**kw)
    except ValueError as e:
        raise InputError(f"{where}: {e}") from e


def load_config(path, **override) -> SystemConfig:
    return config_from_json(load_json(path), str(path), **override)


def genrequest_from_json(obj, where="genspec", seed=None) -> Tuple[GenSpec, int, int, Optional[str]]:
    """Generator file: GenSpec fields plus ``count``, ``m`` and an optional
    admission ``filter`` (keep only sets passing that policy)."""
    check_header(obj, GENSPEC, where)
    check_keys(obj, where, ("format", "version"), _GENSPEC_KEYS + ("count", "m", "filter"))
    body = {k: v for k, v in obj.items() if k in _GENSPEC_KEYS}
    spec = genspec_from_json(body, where, seed=seed)
    count = _int(obj.get("count", 1), f"{where}.count")
    m = _int(obj.get("m", 4), f"{where}.m")
    if count < 1 or m < 1:
        raise InputError(f"{where}: count and m must be >= 1")
    return spec, count, m, obj.get("filter")
