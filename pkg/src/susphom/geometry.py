"""Hardcore point processes on the torus and their periodized sphere suspensions.

Coordinates live in ``[-L/2, L/2)^d``; distances are always torus distances.
"""

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    ConfigError,
    InsufficientSamplesError,
    OverDenseError,
    SeparationError,
)
from .parallel import ordered_map
from .streams import check_seed, counter_uniform, derive_seed, generator
from .strain import cubic_group

CONFIG_VERSION = 1

#: Largest accepted ``lambda (2 r_hc)^d``. Beyond it a Matern-III sample keeps
#: a vanishing fraction of its proposals (each proposal has more than ~30
#: conflicting neighbours on average).
SATURATION_THRESHOLD = 8.0

#: Largest accepted ``lambda 6^d`` for the parent-satellite example process.
EXAMPLE26_MAX_DENSITY = 0.1

#: Capacity guard: a periodized configuration holds at most ``(L/delta)^d``
#: inclusions (disjoint delta-balls around the centres need that much room).
CAPACITY_CONSTANT = 1.0

#: Default relative standard error above which an estimate is refused.
MAX_RELATIVE_SE = 0.5


def wrap(x, L):
    """Map coordinates or displacements into ``[-L/2, L/2)``."""
    return np.mod(np.asarray(x, dtype=float) + 0.5 * L, L) - 0.5 * L


def _tree(points, L):
    shifted = np.mod(points + 0.5 * L, L)
    shifted[shifted >= L] = 0.0
    return cKDTree(shifted, boxsize=L)


def torus_pairs(points, L, radius):
    """Unordered index pairs at torus distance ``<= radius`` and their displacements.

    Returns
    -------
    pairs : ndarray, shape (P, 2)
    diff : ndarray, shape (P, d)
        Minimum-image ``x_j - x_i`` for each pair ``(i, j)``.
    """
    points = np.asarray(points, dtype=float)
    d = points.shape[1] if points.ndim == 2 else 3
    if len(points) < 2 or radius <= 0:
        return np.zeros((0, 2), dtype=int), np.zeros((0, d))
    pairs = _tree(points, L).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=int), np.zeros((0, d))
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    diff = wrap(points[pairs[:, 1]] - points[pairs[:, 0]], L)
    return pairs, diff


def min_torus_distance(points, L):
    """Smallest pairwise torus distance (``inf`` for fewer than two points)."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return np.inf
    tree = _tree(points, L)
    dist, _ = tree.query(tree.data, k=2)
    return float(dist[:, 1].min())


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """A finite point pattern on the torus ``[-L/2, L/2)^d``.

    Attributes
    ----------
    d : int
    L : float
    points : ndarray, shape (N, d)
    r_hc : float
        Hardcore radius; pairwise torus distances are at least ``2 r_hc``.
    seed, stream : int
        The master seed and stream index that produced the sample.
    parents : ndarray of int, optional
        For clustered processes, index of each point's parent (``-1`` for parents).
    weights : ndarray, optional
        Presence probabilities of a conditional sample; ``None`` means all ones.
        Weighted samples feed the intensity estimators only.
    """

    d: int
    L: float
    points: np.ndarray
    r_hc: float = 0.0
    seed: int = 0
    stream: int = 0
    parents: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.d)
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if len(w) != len(pts) or np.any((w < 0) | (w > 1)):
                raise ConfigError("weights must be one probability per point")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points)

    @property
    def intensity(self):
        """Empirical intensity ``N / L^d`` (weighted for conditional samples)."""
        n = len(self) if self.weights is None else float(self.weights.sum())
        return n / self.L**self.d

    def validate(self, tol=1e-12):
        """Check the coordinate range and the hardcore invariant."""
        h = 0.5 * self.L
        if len(self) and (self.points.min() < -h or self.points.max() >= h):
            raise ConfigError("coordinates outside [-L/2, L/2)")
        if self.r_hc > 0 and min_torus_distance(self.points, self.L) < 2 * self.r_hc - tol:
            raise ConfigError("hardcore invariant violated")
        return self

    def to_dict(self):
        out = {
            "version": CONFIG_VERSION,
            "d": self.d,
            "L": self.L,
            "r_hc": self.r_hc,
            "seed": self.seed,
            "stream": self.stream,
            "points": self.points.tolist(),
        }
        if self.parents is not None:
            out["parents"] = self.parents.tolist()
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        return out

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported configuration version {doc.get('version')!r}")
        known = {"version", "d", "L", "r_hc", "seed", "stream", "points", "parents", "weights"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        parents = doc.get("parents")
        return cls(
            d=int(doc["d"]),
            L=float(doc["L"]),
            points=np.array(doc["points"], dtype=float).reshape(-1, int(doc["d"])),
            r_hc=float(doc.get("r_hc", 0.0)),
            seed=int(doc.get("seed", 0)),
            stream=int(doc.get("stream", 0)),
            parents=None if parents is None else np.asarray(parents, dtype=int),
            weights=doc.get("weights"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SphereInclusion:
    """A rigid sphere with ``center`` and ``radius`` (at most 1)."""

    center: tuple
    radius: float = 1.0

    def __post_init__(self):
        if not 0 < self.radius <= 1.0:
            raise ConfigError("radius exceeds unit ball")


@dataclass(frozen=True, eq=False)
class PeriodicConfiguration:
    """Spheres on the torus of side ``L`` with surface gaps larger than ``2 delta``.

    Use :func:`periodize` or :meth:`from_spheres`, which validate the invariants.
    """

    d: int
    L: float
    centers: np.ndarray
    radii: np.ndarray
    delta: float

    def __len__(self):
        return len(self.centers)

    @property
    def inclusions(self):
        return [SphereInclusion(tuple(c), float(r)) for c, r in zip(self.centers, self.radii)]

    @property
    def volume_fraction(self):
        from .kernels import ball_volume

        return float(sum(ball_volume(self.d, r) for r in self.radii)) / self.L**self.d

    @classmethod
    def from_spheres(cls, centers, radii, L, delta, check_window=True):
        """Validated configuration from explicit centres and radii."""
        centers = np.asarray(centers, dtype=float)
        centers = centers.reshape(0, 3) if centers.size == 0 else np.atleast_2d(centers)
        d = centers.shape[1]
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),)).copy()
        cfg = cls(d=d, L=float(L), centers=wrap(centers, L), radii=radii, delta=float(delta))
        cfg.validate(check_window=check_window)
        return cfg

    def validate(self, check_window=True):
        if self.delta <= 0:
            raise ConfigError("separation delta must be positive")
        if np.any(self.radii <= 0):
            raise ConfigError("radii must be positive")
        if np.any(self.radii > 1.0):
            raise ConfigError("radius exceeds unit ball")
        if len(self) > CAPACITY_CONSTANT * (self.L / self.delta) ** self.d:
            raise ConfigError("too many inclusions for the period (capacity guard)")
        if check_window and len(self):
            half = 0.5 * (self.L - 2 * (1 + self.delta))
            if np.any(np.abs(self.centers) > half):
                raise ConfigError("centre outside the retention window")
        if len(self) > 1:
            reach = 2 * float(self.radii.max()) + 2 * self.delta
            pairs, diff = torus_pairs(self.centers, self.L, reach)
            gap = np.linalg.norm(diff, axis=1) - self.radii[pairs[:, 0]] - self.radii[pairs[:, 1]]
            bad = np.nonzero(gap <= 2 * self.delta)[0]
            if len(bad):
                i, j = (int(v) for v in pairs[bad[0]])
                raise SeparationError(
                    f"separation violation between inclusions {i} and {j}: "
                    f"surface gap {gap[bad[0]]:.6g} <= 2*delta = {2 * self.delta:.6g}",
                    pair=(i, j),
                )
        return self

    def subset(self, mask):
        """Configuration restricted to the selected inclusions (no re-validation needed).

        ``mask`` is a boolean mask or a sequence of indices.
        """
        mask = np.asarray(mask if isinstance(mask, np.ndarray) else list(mask))
        if mask.dtype != bool:
            mask = mask.astype(int)
        return replace(self, centers=self.centers[mask], radii=self.radii[mask])

    def translated(self, shift):
        return replace(self, centers=wrap(self.centers + np.asarray(shift), self.L))

    def to_dict(self):
        return {
            "version": CONFIG_VERSION,
            "d": self.d,
            "L": self.L,
            "delta": self.delta,
            "centers": self.centers.tolist(),
            "radii": self.radii.tolist(),
        }


# -- samplers ---------------------------------------------------------------------


def _check_box(L, r_hc):
    if not (np.isfinite(L) and L > 0):
        raise ConfigError("box side must be positive and finite")
    if L <= 4 * r_hc:
        raise ConfigError("box side must exceed 4 * hardcore radius")


def sample_poisson(intensity, L, seed, d=3, stream=0):
    """Plain Poisson process of the given intensity on the torus."""
    if intensity < 0:
        raise ConfigError("intensity must be non-negative")
    _check_box(L, 0.0)
    rng = generator(seed, "poisson", stream)
    n = rng.poisson(intensity * L**d)
    pts = rng.uniform(-0.5 * L, 0.5 * L, size=(n, d))
    return PointConfiguration(d=d, L=float(L), points=pts, seed=check_seed(seed), stream=stream)


def matern3_retain(points, marks, L, r_hc):
    """Matern-III retention mask.

    A point is kept iff every point within torus distance ``2 r_hc`` that has a
    smaller mark is itself removed. Processing points by increasing mark
    resolves this recursion in one pass.
    """
    n = len(points)
    keep = np.ones(n, dtype=bool)
    if n < 2 or r_hc <= 0:
        return keep
    pairs, _ = torus_pairs(points, L, 2 * r_hc)
    if len(pairs) == 0:
        return keep
    lo = np.where(marks[pairs[:, 0]] < marks[pairs[:, 1]], pairs[:, 0], pairs[:, 1])
    hi = pairs[:, 0] + pairs[:, 1] - lo
    order = np.argsort(hi, kind="stable")
    hi, lo = hi[order], lo[order]
    starts = np.searchsorted(hi, np.arange(n + 1))
    involved = np.unique(hi)
    for i in involved[np.argsort(marks[involved], kind="stable")]:
        if keep[lo[starts[i] : starts[i + 1]]].any():
            keep[i] = False
    return keep


def sample_hardcore_poisson(intensity, hardcore_radius, L, seed, d=3, stream=0):
    """Matern-III hardcore sample on the torus.

    Parameters
    ----------
    intensity : float
        Proposal intensity ``lambda``; ``Poisson(lambda L^d)`` proposals.
    hardcore_radius : float
        Retained points are at least ``2 r_hc`` apart.
    L : float
        Box side, larger than ``4 r_hc``.
    seed : int
        Unsigned 64-bit master seed; ``stream`` selects an independent sample.

    Raises
    ------
    OverDenseError
        If ``lambda (2 r_hc)^d`` exceeds :data:`SATURATION_THRESHOLD`.
    """
    lam, r_hc = float(intensity), float(hardcore_radius)
    if lam < 0 or r_hc < 0:
        raise ConfigError("intensity and hardcore radius must be non-negative")
    _check_box(L, r_hc)
    if lam * (2 * r_hc) ** d > SATURATION_THRESHOLD:
        raise OverDenseError(
            f"over-dense request: lambda (2 r_hc)^d = {lam * (2 * r_hc) ** d:.3g} "
            f"exceeds {SATURATION_THRESHOLD}"
        )
    rng = generator(seed, "hardcore", stream)
    n = rng.poisson(lam * L**d)
    pts = rng.uniform(-0.5 * L, 0.5 * L, size=(n, d))
    marks = rng.random(n)
    keep = matern3_retain(pts, marks, L, r_hc)
    return PointConfiguration(
        d=d, L=float(L), points=pts[keep], r_hc=r_hc, seed=check_seed(seed), stream=stream
    )


def _uniform_annulus(rng, n, d, r_in, r_out):
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    t = rng.random(n)
    r = (r_in**d + (r_out**d - r_in**d) * t) ** (1.0 / d)
    return u * r[:, None]


def sample_example26(intensity, beta, L, seed, d=3, stream=0, conditional=False):
    """Parent-satellite process with tunable short-range dependence.

    Parents form a Matern-III process with hardcore radius 6. Each parent gets,
    with probability ``lambda^beta``, one satellite uniform in the annulus
    ``3 <= |y| <= 4`` around it. The union has all pair distances at least 3.

    With ``conditional=True`` every parent carries its satellite with weight
    ``lambda^beta`` instead of a coin flip: the conditional expectation given
    parents and offsets, so weighted tuple counts stay unbiased with far less
    variance when ``lambda^beta`` is small.
    """
    lam, beta = float(intensity), float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ConfigError("beta must lie in [0, 1]")
    if not lam > 0:
        raise ConfigError("intensity must be positive")
    if lam * 6.0**d > EXAMPLE26_MAX_DENSITY:
        raise OverDenseError(
            f"over-dense request: lambda 6^d = {lam * 6.0**d:.3g} exceeds {EXAMPLE26_MAX_DENSITY}"
        )
    parents = sample_hardcore_poisson(lam, 6.0, L, seed, d=d, stream=stream)
    rng = generator(seed, "satellite", stream)
    n = len(parents)
    offsets = _uniform_annulus(rng, n, d, 3.0, 4.0)
    flags = rng.random(n) < lam**beta
    weights = None
    if conditional:
        flags = np.ones(n, dtype=bool)
        weights = np.concatenate([np.ones(n), np.full(n, lam**beta)])
    sats = wrap(parents.points[flags] + offsets[flags], L)
    pts = np.concatenate([parents.points, sats])
    parent_idx = np.concatenate([np.full(n, -1), np.nonzero(flags)[0]])
    return PointConfiguration(
        d=d,
        L=float(L),
        points=pts,
        r_hc=1.5,
        seed=check_seed(seed),
        stream=stream,
        parents=parent_idx,
        weights=weights,
    )


def dilate(config, ell):
    """Scale a configuration by ``ell >= 1`` (points, box and hardcore radius)."""
    ell = float(ell)
    if not ell >= 1.0:
        raise ConfigError("dilation factor must be >= 1")
    if not np.isfinite(ell * config.L):
        raise ConfigError("dilated box side overflows")
    if ell == 1.0:
        return config
    return replace(config, L=ell * config.L, points=ell * config.points, r_hc=ell * config.r_hc)


def bernoulli_keep_mask(n, p, seed):
    """Keep flags for points ``0 .. n-1``; point ``n`` depends only on ``(seed, n)``."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ConfigError("deletion probability must lie in [0, 1]")
    return counter_uniform(seed, "delete", np.arange(n)) < p


def bernoulli_delete(config, p, seed):
    """Keep each point independently with probability ``p``.

    The decision for point ``n`` depends only on ``(seed, n)``.
    """
    keep = bernoulli_keep_mask(len(config), p, seed)
    weights = None if config.weights is None else config.weights[keep]
    parents = config.parents
    if parents is not None:
        new_index = np.cumsum(keep) - 1
        parents = parents[keep]
        ok = parents >= 0
        parents = np.where(ok & keep[np.maximum(parents, 0)], new_index[np.maximum(parents, 0)], -1)
    return replace(config, points=config.points[keep], parents=parents, weights=weights)


def periodize(points, radii, L, delta):
    """Periodized suspension from a point pattern.

    Keeps the points inside the centred window ``Q_{L - 2(1 + delta)}``, attaches
    radii (a scalar or one per input point) and validates the separation
    constraint on the torus of side ``L``.
    """
    if isinstance(points, PointConfiguration) and points.weights is not None:
        raise ConfigError("weighted conditional samples cannot be periodized")
    pts = points.points if isinstance(points, PointConfiguration) else np.asarray(points, float)
    d = pts.shape[1] if pts.ndim == 2 else 3
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(pts),))
    if np.any(radii <= 0):
        raise ConfigError("radii must be positive")
    if np.any(radii > 1.0):
        raise ConfigError("radius exceeds unit ball")
    if not delta > 0:
        raise ConfigError("separation delta must be positive")
    half = 0.5 * (L - 2 * (1 + delta))
    inside = np.all((pts >= -half) & (pts < half), axis=1) if len(pts) else np.zeros(0, bool)
    return PeriodicConfiguration.from_spheres(
        pts[inside].reshape(-1, d), radii[inside], L, delta
    )


# -- intensity estimation ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IntensityEstimate:
    """Monte Carlo estimate of the ``j``-point intensity.

    ``cell_means`` and ``cell_stderr`` hold the per-offset estimates; the
    reported value is their maximum over ``offset_grid``.
    """

    j: int
    estimate: float
    stderr: float
    n_samples: int
    offset_grid: np.ndarray
    cell_means: np.ndarray = field(repr=False, default=None)
    cell_stderr: np.ndarray = field(repr=False, default=None)
    argmax: int = 0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class PairCorrelationTable:
    """Radial two-point density ``f2`` and correlation ``h2 = f2 - lambda^2``."""

    bin_edges: np.ndarray
    f2: np.ndarray
    f2_stderr: np.ndarray
    h2: np.ndarray
    h2_stderr: np.ndarray
    intensity: float
    intensity_stderr: float
    n_samples: int
    seed: int = 0

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


def default_offset_grid(j, r_hc, d=3, separations=None):
    """Offset tuples ``(z_1, ..., z_j)`` with consecutive axis steps.

    ``z_1 = 0`` and each following offset moves from the previous one along a
    coordinate axis by one of the separations (default ``0, 2 r_hc, 3, 4, 8``).
    """
    if separations is None:
        separations = (0.0, 2.0 * r_hc, 3.0, 4.0, 8.0)
    seps = sorted(set(float(s) for s in separations))
    steps = [np.zeros(d)]
    for s in seps:
        if s == 0:
            continue
        for a in range(d):
            e = np.zeros(d)
            e[a] = s
            steps.append(e)
    tuples = [[np.zeros(d)]]
    for _ in range(j - 1):
        tuples = [t + [t[-1] + s] for t in tuples for s in steps]
    return np.array(tuples)


def _overlap(rel):
    """Volume of the intersection of unit cubes centred at the rows of ``rel``.

    ``rel`` has shape (..., j, d) and holds relative positions ``x_i - z_i``.
    """
    span = rel.max(axis=-2) - rel.min(axis=-2)
    return np.prod(np.clip(1.0 - span, 0.0, None), axis=-1)


def _orbit_images(offsets, ops):
    """Distinct images of each relative offset tuple under the symmetry operations."""
    out = []
    for t in offsets:
        if ops is None:
            out.append(t[None])
            continue
        imgs = np.einsum("gab,jb->gja", ops, t)
        out.append(np.unique(np.round(imgs, 12), axis=0))
    return out


def _tuple_statistic(cfg, j, grid, ops):
    """Per-offset sum over distinct ordered j-tuples of the overlap volume, over L^d.

    With symmetry operations the overlap is averaged over the distinct images
    of each offset tuple (uniform over the orbit).
    """
    pts, L, d = cfg.points, cfg.L, cfg.d
    w = np.ones(len(pts)) if cfg.weights is None else cfg.weights
    G = grid.shape[0]
    out = np.zeros(G)
    if len(pts) < j:
        return out
    orbits = _orbit_images(grid - grid[:, :1, :], ops)
    reach = max(np.linalg.norm(o, axis=-1).max() for o in orbits) + np.sqrt(d) + 1e-9
    reach = min(reach, 0.5 * L)
    pairs, diff = torus_pairs(pts, L, reach)
    if len(pairs) == 0:
        return out
    if j == 2:
        # ordered pairs: both orientations of each unordered pair
        disp = np.concatenate([diff, -diff])
        pw = np.tile(w[pairs[:, 0]] * w[pairs[:, 1]], 2)
        dist = np.linalg.norm(disp, axis=1)
        for g, imgs in enumerate(orbits):
            v = imgs[:, 1, :]
            vn = np.linalg.norm(v, axis=1)
            near = np.abs(dist[:, None] - vn[None, :]).min(axis=1) < np.sqrt(d)
            if not near.any():
                continue
            span = np.abs(disp[near][None, :, :] - v[:, None, :])
            ov = np.prod(np.clip(1.0 - span, 0.0, None), axis=-1)
            out[g] = (ov @ pw[near]).sum() / len(v)
        return out / L**d
    # general j: join, per image tuple, the ordered pairs landing near each offset
    first = np.concatenate([pairs[:, 0], pairs[:, 1]])
    second = np.concatenate([pairs[:, 1], pairs[:, 0]])
    disp = np.concatenate([diff, -diff])
    for g, imgs in enumerate(orbits):
        total = 0.0
        for img in imgs:
            cands = []
            for i in range(1, j):
                hit = np.all(np.abs(disp - img[i]) < 1.0, axis=1)
                cands.append({})
                for a, b, v in zip(first[hit], second[hit], disp[hit]):
                    cands[-1].setdefault(a, []).append((b, v))
            common = set(cands[0]).intersection(*cands[1:])
            for a in common:
                for combo in itertools.product(*(c[a] for c in cands)):
                    if len({b for b, _ in combo}) < j - 1:
                        continue
                    rel = np.array([np.zeros(d)] + [v for _, v in combo]) - img
                    weight = w[a] * np.prod([w[b] for b, _ in combo])
                    total += weight * float(_overlap(rel))
        out[g] = total / len(imgs)
    return out / L**d


def estimate_intensity_j(
    sampler,
    j,
    offset_grid=None,
    n_samples=100,
    seed=0,
    symmetrize=False,
    max_rel_se=MAX_RELATIVE_SE,
    workers=1,
):
    """Monte Carlo ``j``-point intensity, maximised over a grid of offset tuples.

    For each offset tuple ``(z_1, ..., z_j)`` the expected number of distinct
    ordered ``j``-tuples of points with ``x_i`` in the unit cube around
    ``z_i + t`` is estimated, averaging the translation ``t`` over the torus
    exactly (an overlap volume per tuple).

    Parameters
    ----------
    sampler : callable
        ``sampler(seed) -> PointConfiguration``; called with derived per-sample seeds.
    j : int
        Order; for ``j = 1`` the grid is ignored.
    offset_grid : array_like, shape (G, j, d), optional
        Defaults to :func:`default_offset_grid` using the first sample's ``r_hc``.
    symmetrize : bool
        Average each offset over the cube symmetry group. Unbiased for
        isotropic processes and much less noisy.

    Raises
    ------
    InsufficientSamplesError
        If the relative standard error of the maximising cell exceeds ``max_rel_se``.
    """
    if j < 1:
        raise ConfigError("order j must be >= 1")
    if n_samples < 2:
        raise ConfigError("need at least two samples")
    seeds = [derive_seed(seed, "intensity", i) for i in range(n_samples)]
    if j == 1:
        vals = np.array(ordered_map(lambda s: [sampler(s).intensity], seeds, workers))
        grid = np.zeros((1, 1, 0))
    else:
        if offset_grid is None:
            first = sampler(seeds[0])
            offset_grid = default_offset_grid(j, first.r_hc, first.d)
        grid = np.asarray(offset_grid, dtype=float)
        if grid.ndim != 3 or grid.shape[1] != j or grid.shape[0] == 0:
            raise ConfigError("offset grid must have shape (G, j, d) with G >= 1")
        ops = cubic_group(grid.shape[2]) if symmetrize else None
        vals = np.array(
            ordered_map(lambda s: _tuple_statistic(sampler(s), j, grid, ops), seeds, workers)
        )
    means = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(n_samples)
    k = int(np.argmax(means))
    if means[k] > 0 and se[k] > max_rel_se * means[k]:
        raise InsufficientSamplesError(
            f"relative standard error {se[k] / means[k]:.3f} of the maximising cell "
            f"exceeds {max_rel_se}"
        )
    return IntensityEstimate(
        j=j,
        estimate=float(means[k]),
        stderr=float(se[k]),
        n_samples=n_samples,
        offset_grid=grid,
        cell_means=means,
        cell_stderr=se,
        argmax=k,
        seed=seed,
    )


def _shell_volumes(edges, d):
    from .kernels import ball_volume

    return ball_volume(d) * (edges[1:] ** d - edges[:-1] ** d)


def _pair_histogram(cfg, edges):
    pairs, diff = torus_pairs(cfg.points, cfg.L, edges[-1])
    r = np.linalg.norm(diff, axis=1)
    counts, _ = np.histogram(r, bins=edges)
    return counts


def estimate_pair_correlation(
    sampler, bin_edges, n_samples=100, seed=0, max_rel_se=MAX_RELATIVE_SE, workers=1
):
    """Radial pair density ``f2`` and correlation ``h2 = f2 - lambda^2``.

    Each unordered pair is counted once and contributes twice (both orderings),
    normalised by ``L^d`` times the shell volume, so that a Poisson process
    gives ``f2 = lambda^2``.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ConfigError("bin edges must be non-negative and strictly increasing")
    if n_samples < 2:
        raise ConfigError("need at least two samples")
    seeds = [derive_seed(seed, "pair-correlation", i) for i in range(n_samples)]

    def one(s):
        cfg = sampler(s)
        if edges[-1] >= 0.5 * cfg.L:
            raise ConfigError("largest bin edge must stay below L/2")
        vol = _shell_volumes(edges, cfg.d)
        f2 = 2.0 * _pair_histogram(cfg, edges) / (cfg.L**cfg.d * vol)
        return np.concatenate([[cfg.intensity], f2])

    vals = np.array(ordered_map(one, seeds, workers))
    lam_i, f2_i = vals[:, 0], vals[:, 1:]
    lam = lam_i.mean()
    f2 = f2_i.mean(axis=0)
    n = n_samples
    var_lam = lam_i.var(ddof=1) / n
    var_f2 = f2_i.var(axis=0, ddof=1) / n
    cov = ((f2_i - f2) * (lam_i - lam)[:, None]).sum(axis=0) / (n - 1) / n
    h2 = f2 - lam**2
    h2_var = var_f2 + 4 * lam**2 * var_lam - 4 * lam * cov
    f2_se = np.sqrt(var_f2)
    k = int(np.argmax(f2))
    if f2[k] > 0 and f2_se[k] > max_rel_se * f2[k]:
        raise InsufficientSamplesError(
            f"relative standard error {f2_se[k] / f2[k]:.3f} of the largest bin exceeds {max_rel_se}"
        )
    return PairCorrelationTable(
        bin_edges=edges,
        f2=f2,
        f2_stderr=f2_se,
        h2=h2,
        h2_stderr=np.sqrt(np.maximum(h2_var, 0.0)),
        intensity=float(lam),
        intensity_stderr=float(np.sqrt(var_lam)),
        n_samples=n,
        seed=seed,
    )
