"""Experiment configuration and reproducibility plumbing.

Configs are TOML (JSON accepted); ``DEFAULT_TOML`` is the canonical document
printed by ``m1lab config --defaults`` and parsed back for defaults, so the
two can never drift apart. Schema problems raise ConfigError with the
offending field path in the message.

An ExperimentManifest freezes everything that determines a run (kind,
config hash, seed, replicate count, output directory, tool version). It is
written to the output directory before any artifact, carries no timestamp,
and hashes deterministically, so re-running an identical manifest must
reproduce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from . import __version__
from .errors import ConfigError
from .hermite import TestFunction
from .particles import InitialLaw, ModelConfig, RhoTable

__all__ = [
    "DEFAULT_TOML",
    "ENSEMBLE_FORMAT",
    "MANIFEST_FORMAT",
    "ExperimentManifest",
    "build_model_config",
    "build_projections",
    "build_test_function",
    "default_config",
    "load_config",
    "manifest_for",
    "merged_section",
    "sha256_bytes",
    "version_string",
]

MANIFEST_FORMAT = 1
ENSEMBLE_FORMAT = 1

DEFAULT_TOML = """\
# m1lab defaults; TOML (JSON with the same structure is accepted).

[model]
N = 128                      # particles
T = 0.5                      # horizon
dt = 0.0078125               # grid step, must divide T
seed = 0                     # overridden by --seed, then M1LAB_SEED
barrier = "grid-check"       # or "brownian-bridge"

[model.rho]                  # correlation vs absorbed fraction,
nodes = [0.0, 1.0]           # piecewise linear on [0, 1]
values = [0.3, 0.3]

[model.initial]              # uniform | lognormal | shifted-exponential
family = "uniform"
a = 0.8
b = 1.2

[[projections]]              # test functions tracked by `simulate`
name = "h1"
coeffs = [0.0, 1.0]

[spde]
x_max = 6.0
dx = 0.01
r_target = 1.0
snapshots = [0.0, 0.25, 0.5]

[tightness]
lags = [0.0078125, 0.015625, 0.03125, 0.0625, 0.125]
eta = [0.012, 0.0155, 0.0201, 0.026, 0.0336]
num_random_triples = 100
max_lag = 0.0664             # dyadic triple half-width cap
triple_seed = 0
deltas = [0.5, 0.25, 0.125]
endpoint_eta = 0.05
endpoint_N = [32, 128]
endpoint_replicates = 100

[converge]
N = [16, 32, 64]
seeds = 3
K = 256
coeffs = [0.0, 1.0]
"""


def version_string() -> str:
    return (f"m1lab {__version__} (ensemble format {ENSEMBLE_FORMAT}, "
            f"manifest format {MANIFEST_FORMAT})")


def load_config(path) -> dict:
    """Parse a TOML or JSON config file into a plain dict."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})")
    if p.suffix.lower() == ".json" or raw.lstrip()[:1] == b"{":
        try:
            out = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
    else:
        try:
            out = tomllib.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})")
    if not isinstance(out, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return out


def default_config() -> dict:
    return tomllib.loads(DEFAULT_TOML)


def merged_section(cfg: dict, section: str) -> dict:
    """Section of cfg over the defaults; unknown keys are schema errors."""
    base = default_config().get(section, {})
    got = cfg.get(section, {})
    if not isinstance(got, dict):
        raise ConfigError(f"{section}: must be a table, got {type(got).__name__}")
    for key in got:
        if key not in base:
            raise ConfigError(f"{section}.{key}: unknown key")
    out = dict(base)
    out.update(got)
    return out


def build_model_config(cfg: dict, seed=None) -> ModelConfig:
    """Validate cfg['model'] and construct a ModelConfig.

    seed, when given, overrides the config value (CLI flag or M1LAB_SEED).
    """
    defaults = default_config()["model"]
    m = cfg.get("model")
    if m is None:
        m = defaults
    if not isinstance(m, dict):
        raise ConfigError("model: must be a table")
    for key in m:
        if key not in defaults:
            raise ConfigError(f"model.{key}: unknown key")

    rho_spec = m.get("rho", defaults["rho"])
    try:
        if isinstance(rho_spec, (int, float)):
            rho = RhoTable.constant(float(rho_spec))
        elif isinstance(rho_spec, dict) and "constant" in rho_spec:
            rho = RhoTable.constant(float(rho_spec["constant"]))
        elif isinstance(rho_spec, dict):
            rho = RhoTable.from_dict(rho_spec)
        else:
            raise ValueError("expected a number, {constant = c}, or nodes/values")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model.rho: {exc}")

    init_spec = m.get("initial", defaults["initial"])
    try:
        if not isinstance(init_spec, dict):
            raise ValueError("expected a table with a 'family' key")
        initial = InitialLaw.from_dict(init_spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model.initial: {exc}")

    kwargs = {}
    for key in ("N", "T", "dt", "barrier"):
        kwargs[key] = m.get(key, defaults[key])
    use_seed = seed if seed is not None else m.get("seed", defaults["seed"])
    try:
        return ModelConfig(N=kwargs["N"], T=kwargs["T"], dt=kwargs["dt"],
                           rho=rho, initial=initial,
                           barrier=kwargs["barrier"], seed=use_seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}")


def build_test_function(coeffs, where: str = "projections") -> TestFunction:
    try:
        arr = np.asarray(coeffs, dtype=float)
        return TestFunction(arr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}")


def build_projections(cfg: dict) -> dict:
    """Name -> TestFunction map from cfg['projections'] (list of tables)."""
    spec = cfg.get("projections", default_config()["projections"])
    if not isinstance(spec, list):
        raise ConfigError("projections: must be an array of tables")
    out = {}
    for i, entry in enumerate(spec):
        if not isinstance(entry, dict) or "name" not in entry or "coeffs" not in entry:
            raise ConfigError(f"projections[{i}]: needs 'name' and 'coeffs'")
        name = str(entry["name"])
        if not name.replace("_", "").replace("-", "").isalnum():
            raise ConfigError(f"projections[{i}].name: {name!r} is not a safe "
                              f"file-name fragment")
        if name in out:
            raise ConfigError(f"projections[{i}].name: duplicate {name!r}")
        out[name] = build_test_function(entry["coeffs"],
                                        where=f"projections[{i}].coeffs")
    if not out:
        raise ConfigError("projections: need at least one entry")
    return out


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ExperimentManifest:
    kind: str
    config_path: str
    seed: int
    replicates: int
    outdir: str
    version: str
    config_hash: str

    KINDS = ("simulate", "distance", "modulus", "modbound", "tightness",
             "spde", "converge")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"manifest kind {self.kind!r} not one of {self.KINDS}")

    def to_dict(self) -> dict:
        return {"format": MANIFEST_FORMAT, "kind": self.kind,
                "config_path": self.config_path, "seed": int(self.seed),
                "replicates": int(self.replicates), "outdir": self.outdir,
                "version": self.version, "config_hash": self.config_hash}

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def hash(self) -> str:
        """Hash referenced by every output the run writes."""
        return sha256_bytes(self.canonical_json().encode("utf-8"))

    def write(self, path) -> None:
        Path(path).write_text(self.canonical_json())


def manifest_for(kind: str, config_path, seed: int, replicates: int,
                 outdir) -> ExperimentManifest:
    if config_path:
        digest = sha256_bytes(Path(config_path).read_bytes())
        shown = str(config_path)
    else:
        digest = sha256_bytes(DEFAULT_TOML.encode("utf-8"))
        shown = "<defaults>"
    return ExperimentManifest(kind=kind, config_path=shown, seed=int(seed),
                              replicates=int(replicates), outdir=str(outdir),
                              version=__version__, config_hash=digest)
