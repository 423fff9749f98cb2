"""Run configuration, config hashing and text artifacts."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import EngineConfig, InitialCondition
from .kernel import KernelSpec

SCHEMA_VERSION = 1
DIAGNOSTICS_SCHEMA = f"kacsim-diagnostics/{SCHEMA_VERSION}"
SNAPSHOT_SCHEMA = f"kacsim-snapshot/{SCHEMA_VERSION}"
OUTPUT_DIR_ENV = "KACSIM_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "kacsim-out"

BENCHMARKS = ("none", "maxwell", "equilibrium", "eps_schedule", "all")


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)


@dataclass(frozen=True)
class RunConfig:
    # kernel
    gamma: float = -1.0
    nu: float = 0.25
    eps: float = 0.05
    beta_form: str = "power_law"
    beta_const: float = 1.0 / math.pi
    eps_angle: Optional[float] = None
    # engine
    n_particles: int = 1024
    t_final: float = 1.0
    seed: int = 0
    snapshot_times: tuple = ()
    init_kind: str = "standard_gaussian"
    init_separation: float = 2.5
    init_mix: float = 0.5
    init_path: Optional[str] = None
    init_normalize: bool = True
    eps_dominating: Optional[float] = None
    event_log: bool = False
    # orchestration
    n_replicas: int = 1
    workers: int = 1
    output_dir: Optional[str] = None
    benchmark: str = "none"
    # estimators
    entropy_k: int = 4
    fisher_method: str = "kde_plugin"
    fisher_k: int = 32
    fisher_n_boot: int = 8
    pairwise_a: float = -1.0
    pairwise_max_n: int = 2048
    w2_method: str = "sliced"
    n_projections: int = 128

    def __post_init__(self):
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        if not self.eps > 0.0:
            raise ValueError(f"eps={self.eps} must be > 0: the simulated system uses the regularized kernel")
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"benchmark must be one of {BENCHMARKS}")
        if self.fisher_method not in ("kde_plugin", "knn_score"):
            raise ValueError("fisher_method must be kde_plugin or knn_score")
        if self.w2_method not in ("sliced", "exact_assignment"):
            raise ValueError("w2_method must be sliced or exact_assignment")
        if not -2.0 < self.pairwise_a < 0.0:
            raise ValueError("pairwise_a must lie in (-2, 0)")
        if self.entropy_k < 1 or self.fisher_k < 8:
            raise ValueError("entropy_k must be >= 1 and fisher_k >= 8")
        # range checks on the physics live in the engine types
        self.engine_config()

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(gamma=self.gamma, nu=self.nu, eps=self.eps, beta_form=self.beta_form,
                          beta_const=self.beta_const, eps_angle=self.eps_angle)

    @property
    def init(self) -> InitialCondition:
        return InitialCondition(kind=self.init_kind, separation=self.init_separation, mix=self.init_mix,
                                path=self.init_path, normalize=self.init_normalize)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(n_particles=self.n_particles, kernel=self.kernel, t_final=self.t_final,
                            seed=self.seed, snapshot_times=self.snapshot_times, init=self.init,
                            eps_dominating=self.eps_dominating, event_log=self.event_log)

    def resolved_output_dir(self) -> str:
        return self.output_dir if self.output_dir is not None else default_output_dir()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snapshot_times"] = list(self.snapshot_times)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; the output directory does not enter it."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, value):
    default = _FIELDS[name].default
    if value is None:
        return None
    if name == "snapshot_times":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"{name}: expected a boolean, got {value!r}")
            return low in ("true", "1", "yes")
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float) or name in ("eps_angle", "eps_dominating"):
        return float(value)
    return value


def config_from_dict(d: dict) -> RunConfig:
    unknown = sorted(set(d) - set(_FIELDS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v) for k, v in d.items()})


def load_config(path) -> RunConfig:
    with open(path) as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise ValueError("config file must hold one JSON object")
    return config_from_dict(d)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(config.to_json())


# flag name -> config key, for the flags that differ from the key
FLAG_ALIASES = {"n": "n_particles", "replicas": "n_replicas", "init": "init_kind", "out": "output_dir"}


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    for name in _FIELDS:
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=f"cfg_{name}", default=None)
    for alias, name in FLAG_ALIASES.items():
        parser.add_argument("--" + alias, dest=f"cfg_{name}", default=None, help=f"alias of --{name.replace('_', '-')}")


def parse_config(args=None, *, namespace: Optional[argparse.Namespace] = None, **overrides) -> RunConfig:
    """Resolve a config from a file and/or flags; unset keys take defaults.

    ``args`` is a flag list (``["--gamma", "-1", ...]``); alternatively an
    already parsed ``namespace`` from a parser set up with
    :func:`add_config_flags`.
    """
    if namespace is None:
        parser = argparse.ArgumentParser(prog="kacsim", allow_abbrev=False)
        add_config_flags(parser)
        namespace, extra = parser.parse_known_args(args)
        if extra:
            raise ValueError(f"unknown flags: {' '.join(extra)}")
    d = {}
    if getattr(namespace, "config", None):
        d.update(load_config(namespace.config).to_dict())
    for name in _FIELDS:
        val = getattr(namespace, f"cfg_{name}", None)
        if val is not None:
            d[name] = val
    d.update(overrides)
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# diagnostics


COLUMNS = ("t", "m2", "m4", "entropy", "entropy_err", "fisher", "fisher_err",
           "pairwise_a", "pairwise_a_err", "w2", "w2_err", "residuals")


def _fmt(x) -> str:
    if x is None:
        return "nan"
    return repr(float(x))


def _header(config_hash: str, extra: dict) -> list:
    lines = [f"# schema: {DIAGNOSTICS_SCHEMA}", f"# config_hash: {config_hash}"]
    for k in sorted(extra):
        lines.append(f"# {k}: {extra[k]}")
    lines.append("\t".join(COLUMNS))
    return lines


def format_record(rec) -> str:
    w2 = rec.w2_to_reference
    res = ";".join(f"{k}={_fmt(rec.residuals[k])}" for k in sorted(rec.residuals)) or "-"
    cells = [rec.t, rec.m2, rec.m4, rec.entropy.value, rec.entropy.std_error, rec.fisher.value,
             rec.fisher.std_error, rec.pairwise_a_moment.value, rec.pairwise_a_moment.std_error,
             None if w2 is None else w2.value, None if w2 is None else w2.std_error]
    return "\t".join([_fmt(c) for c in cells] + [res])


def emit_diagnostics(records, path, *, config_hash: str, extra: Optional[dict] = None) -> None:
    """Write one tab-separated line per record after a commented header."""
    records = list(records)
    times = [r.t for r in records]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("records must be sorted by time")
    lines = _header(config_hash, extra or {})
    lines += [format_record(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_diagnostics(path):
    """Return ``(header dict, rows)`` with rows as dicts of strings."""
    header, rows, cols = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            header[k] = v
        elif cols is None:
            cols = line.split("\t")
        elif line:
            rows.append(dict(zip(cols, line.split("\t"))))
    return header, rows


# ---------------------------------------------------------------------------
# snapshots and event logs


def write_snapshot(path, velocities, *, t: float, seed: int, replica: int, config_hash: str) -> None:
    header = "\n".join([f"schema: {SNAPSHOT_SCHEMA}", f"t: {float(t)!r}", f"seed: {seed}",
                        f"replica: {replica}", f"config_hash: {config_hash}", "vx vy vz"])
    np.savetxt(path, np.asarray(velocities), fmt="%.17g", header=header)


def read_snapshot(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            k, sep, v = line[1:].strip().partition(": ")
            if sep:
                meta[k] = v
    if meta.get("schema") != SNAPSHOT_SCHEMA:
        raise ValueError(f"{path}: unsupported snapshot schema {meta.get('schema')!r}")
    v = np.loadtxt(path, ndmin=2)
    return float(meta["t"]), v, meta


def write_event_log(path, events: dict) -> None:
    cols = ("t", "i", "j", "theta", "phi", "accepted")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*(events[c] for c in cols)):
            t, i, j, th, ph, acc = row
            fh.write(f"{float(t)!r},{int(i)},{int(j)},{float(th)!r},{float(ph)!r},{int(bool(acc))}\n")
