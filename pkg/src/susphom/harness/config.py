"""Versioned JSON experiment configurations.

A configuration names an experiment kind and overrides some of that kind's
defaults. Unknown keys are rejected, defaults are filled in, and the resolved
document is echoed into every output together with its SHA-256 digest.
"""

import copy
import hashlib
import json
import math
from dataclasses import dataclass

from ..errors import ConfigError

SCHEMA_VERSION = 1

#: Keys shared by every kind.
COMMON = {"seed": 0, "tol": 1e-12, "max_iter": 500, "kernel_accuracy": 1e-10}

DEFAULTS = {
    "einstein": {
        "phis": [1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
        "n_samples": 100,
        "particles": 20,
        "r_hc": 1.1,
        "delta": 0.05,
        "strain": "mean",
        "max_refusal_fraction": 0.05,
    },
    "cluster": {
        "n_configs": 20,
        "particle_counts": [4, 5, 6],
        "ps": [0.3, 0.7],
        "L": 8.0,
        "delta": 0.1,
        "poly_tol": 1e-10,
        "remainder_tol": 1e-10,
        "route_tol": 1e-9,
    },
    "dilation": {
        "ells": [4, 8, 16],
        "base_L": 20.0,
        "base_r_hc": 0.5,
        "base_intensity": 0.00375,
        "delta": 0.1,
        "n_samples": 100,
        "strain": 2,
    },
    "bernoulli": {
        "n_configs": 5,
        "particles": 6,
        "L": 8.0,
        "delta": 0.1,
        "ps": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "n_deletions": 400,
        "mode": "mc",
        "strain": 2,
    },
    "example26": {
        "beta": 0.5,
        "lams": [1e-6, 3.1622776601683795e-06, 1e-5],
        "n_samples": 10,
        "orders": [1, 2, 3],
        "target_events": 2000.0,
        "max_points": 50000,
        "conditional": True,
        "order3_max_points": 20000,
        "order3_samples": 4,
        "solve_particles": 20,
        "solve_samples": 20,
        "delta": 0.1,
        "strain": 2,
    },
    "bg": {
        "models": ["exclusion", "hardcore", "separated"],
        "lam": 0.05,
        "exclusion_radius": 2.0,
        "hardcore_intensity": 0.02,
        "hardcore_r_hc": 1.1,
        "hardcore_L": 30.0,
        "hardcore_samples": 20,
        "hardcore_bins": 24,
        "hardcore_r_max": 8.0,
        "scales": [10.0, 20.0, 40.0],
        "strain": 2,
        "radial_nodes": 16,
        "angular_order": 29,
        "reflection_order": 8,
        "full": True,
    },
    "convergence": {
        "Ls": [20.0, 40.0, 80.0],
        "mode": "process",
        "phi": 1e-2,
        "r_hc": 1.1,
        "delta": 0.05,
        "n_samples": 8,
        "strain": 2,
    },
    "sample": {
        "process": "hardcore",
        "intensity": 0.002,
        "r_hc": 1.1,
        "beta": 0.5,
        "L": 40.0,
        "radius": 1.0,
        "delta": 0.05,
    },
    "solve": {
        "configuration": None,
        "intensity": 0.002,
        "r_hc": 1.1,
        "L": 40.0,
        "radius": 1.0,
        "delta": 0.05,
        "strain": 2,
        "method": "auto",
    },
}

KINDS = tuple(DEFAULTS)


def _check_types(kind, key, value, default):
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and not math.isfinite(value):
            raise ConfigError(f"{kind}.{key} must be finite")
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, str):
        ok = isinstance(value, (str, int))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{kind}.{key}: expected {type(default).__name__}, got {value!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated, fully resolved experiment configuration.

    Attributes
    ----------
    kind : str
    params : dict
        Every parameter of the kind, defaults filled in.
    out : str or None
        Output directory; not part of the digest.
    threads : int
        Worker count; affects speed only and is not part of the digest.
    """

    kind: str
    params: dict
    out: str = None
    threads: int = 1

    @property
    def seed(self):
        return int(self.params["seed"])

    def resolved(self):
        """The echoable document: version, kind and all parameters."""
        return {"version": SCHEMA_VERSION, "kind": self.kind, "params": copy.deepcopy(self.params)}

    def digest(self):
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def __getitem__(self, key):
        return self.params[key]


def make_config(kind, overrides=None, out=None, threads=1):
    """Validate ``overrides`` for ``kind`` and fill in defaults."""
    if kind not in DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}; known: {', '.join(KINDS)}")
    overrides = dict(overrides or {})
    allowed = {**COMMON, **DEFAULTS[kind]}
    unknown = sorted(set(overrides) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys for {kind!r}: {unknown}")
    params = copy.deepcopy(allowed)
    for key, value in overrides.items():
        _check_types(kind, key, value, allowed[key])
        params[key] = copy.deepcopy(value)
    seed = params["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if int(threads) < 1:
        raise ConfigError("threads must be >= 1")
    return ExperimentConfig(kind=kind, params=params, out=out, threads=int(threads))


def load_config(source, kind=None, out=None, threads=1, seed=None):
    """Configuration from a JSON file path, JSON text or dict.

    The document holds ``version``, ``kind`` (optional when ``kind`` is given)
    and ``params``. ``seed`` overrides ``params.seed``.
    """
    if source is None:
        doc = {}
    elif isinstance(source, dict):
        doc = copy.deepcopy(source)
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            try:
                with open(text) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {source!r}: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    extra = sorted(set(doc) - {"version", "kind", "params"})
    if extra:
        raise ConfigError(f"unknown top-level config keys: {extra}")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    doc_kind = doc.get("kind", kind)
    if kind is not None and doc_kind != kind:
        raise ConfigError(f"config is for {doc_kind!r}, not {kind!r}")
    if doc_kind is None:
        raise ConfigError("config does not name an experiment kind")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be a JSON object")
    if seed is not None:
        params = {**params, "seed": int(seed)}
    return make_config(doc_kind, params, out=out, threads=threads)
