"""Cluster expansion of periodized viscosity readings and pair-correlation integrals.

Subsets of a configuration are bitmasks (bit ``n`` set when particle ``n`` is
present). For every subset in a family the stresslet system is re-solved with
the other particles removed, and the readings are combined by the difference
operators ``delta^F X^H = sum_{G <= F} (-1)^{|F \\ G|} X^{G u H}`` into cluster
coefficients, Bernoulli averages and remainders.

The second half evaluates second-order coefficients from a pair correlation:
the leading term as an angular-first shell integral of the strain kernel
against ``h2``, and the full three-term pair formula from two-sphere
reflection solves.
"""

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    MissingSubsetError,
    NonIntegrableTailError,
    NumericalError,
)
from .kernels import (
    ball_volume,
    einstein_tensor,
    kernel_point_term,
    single_sphere_gradient,
    single_sphere_traction,
    single_sphere_velocity,
    strain_kernel_matrix,
)
from .parallel import ordered_map
from .quadrature import gauss_legendre, sphere_rule
from .solver import (
    ViscosityReading,
    interaction_matrix,
    response_coefficients,
    _check_kernel,
)
from .strain import check_strain, from_coords, strain_basis, sym, to_coords

#: Largest particle count for an all-subsets sweep.
MAX_SUBSET_PARTICLES = 16

#: Largest number of subsets in any sweep.
MAX_SUBSETS = 1 << MAX_SUBSET_PARTICLES


# -- subsets --------------------------------------------------------------------------


def _popcount(mask):
    return bin(mask).count("1")


def _bits(mask):
    return [n for n in range(mask.bit_length()) if mask >> n & 1]


def as_mask(subset):
    """Bitmask of a subset given as an int mask or an iterable of indices."""
    if isinstance(subset, (int, np.integer)):
        if subset < 0:
            raise ConfigError("subset masks are non-negative")
        return int(subset)
    mask = 0
    for n in subset:
        if n < 0:
            raise ConfigError("particle indices are non-negative")
        mask |= 1 << int(n)
    return mask


def gray_code(n):
    """All ``2^n`` masks in reflected Gray-code order."""
    return [i ^ (i >> 1) for i in range(1 << n)]


def subset_family(n, family="all", k=None):
    """Masks of a subset family, in deterministic order.

    Parameters
    ----------
    n : int
        Number of particles.
    family : {"all", "up-to-k"} or iterable of masks
        ``"all"`` lists every subset in Gray-code order; ``"up-to-k"`` lists
        subsets of size at most ``k`` by size, then lexicographically.
    """
    if family == "all":
        if n > MAX_SUBSET_PARTICLES:
            raise ConfigError(
                f"subset budget exceeded: all subsets of {n} > {MAX_SUBSET_PARTICLES} particles"
            )
        return gray_code(n)
    if family == "up-to-k":
        if k is None or k < 0:
            raise ConfigError("family 'up-to-k' needs k >= 0")
        k = min(int(k), n)
        count = sum(math.comb(n, j) for j in range(k + 1))
        if count > MAX_SUBSETS:
            raise ConfigError(f"subset budget exceeded: {count} subsets > {MAX_SUBSETS}")
        return [as_mask(c) for j in range(k + 1) for c in combinations(range(n), j)]
    masks = list(dict.fromkeys(as_mask(m) for m in family))
    if any(m >> n for m in masks):
        raise ConfigError("subset refers to a particle outside the configuration")
    if len(masks) > MAX_SUBSETS:
        raise ConfigError(f"subset budget exceeded: {len(masks)} subsets > {MAX_SUBSETS}")
    return masks


@dataclass(frozen=True, eq=False)
class SubsetReadings:
    """Viscosity readings and stresslets for a family of subsets.

    Attributes
    ----------
    config : PeriodicConfiguration
    E : ndarray, shape (3, 3)
    masks : tuple of int
        The family, in sweep order.
    readings : dict
        ``mask -> ViscosityReading``; the empty mask reads ``|E|^2`` exactly.
    stresslets : dict
        ``mask -> ndarray (|S|, 5)`` of stresslet coordinates, particles in
        increasing index order.
    """

    config: object
    E: np.ndarray
    masks: tuple
    readings: dict = field(repr=False)
    stresslets: dict = field(repr=False)
    kernel_metadata: dict = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.config)

    @property
    def base(self):
        """Reading of the empty configuration, ``|E|^2``."""
        e = to_coords(self.E)
        return float(e @ e)

    @property
    def complete(self):
        return len(self.readings) == 1 << self.n

    def __contains__(self, mask):
        return as_mask(mask) in self.readings

    def reading(self, mask):
        mask = as_mask(mask)
        try:
            return self.readings[mask]
        except KeyError:
            raise MissingSubsetError(f"subset {_bits(mask)} is not in the sweep") from None

    def stresslet(self, mask, n):
        """Stresslet of particle ``n`` in the sub-configuration ``mask``."""
        mask = as_mask(mask)
        if not mask >> n & 1:
            raise ConfigError(f"particle {n} is absent from subset {_bits(mask)}")
        self.reading(mask)
        pos = _popcount(mask & ((1 << n) - 1))
        return from_coords(self.stresslets[mask][pos])

    def selector(self, quantity="reading"):
        """Scalar function of a mask for :func:`delta_F`.

        ``quantity`` is ``"reading"``, ``"excess"``, ``("stresslet", n)`` for
        ``E:S_n`` or a callable taking ``(readings, mask)``.
        """
        e = to_coords(self.E)
        if quantity == "reading":
            return lambda m: self.reading(m).value
        if quantity == "excess":
            return lambda m: self.reading(m).excess
        if isinstance(quantity, tuple) and len(quantity) == 2 and quantity[0] == "stresslet":
            n = int(quantity[1])
            return lambda m: float(to_coords(self.stresslet(m, n)) @ e)
        if callable(quantity):
            return lambda m: quantity(self, m)
        raise ConfigError(f"unknown quantity selector {quantity!r}")


def _solve_batch(alpha, M, e, masks, L, d):
    """Direct solves for masks of equal size, stacked."""
    idx = np.array([_bits(m) for m in masks])
    k = idx.shape[1]
    rows = (5 * idx[:, :, None] + np.arange(5)).reshape(len(masks), 5 * k)
    A = -M[rows[:, :, None], rows[:, None, :]]
    diag = np.repeat(1.0 / alpha[idx], 5, axis=1)
    A[:, np.arange(5 * k), np.arange(5 * k)] += diag
    rhs = np.broadcast_to(np.tile(e, k), (len(masks), 5 * k))[..., None]
    s = np.linalg.solve(A, rhs)[..., 0].reshape(len(masks), k, 5)
    if not np.all(np.isfinite(s)):
        bad = masks[int(np.argmax(~np.isfinite(s).all(axis=(1, 2))))]
        raise NumericalError(f"subset {_bits(bad)}: singular stresslet system")
    base = float(e @ e)
    out = []
    for m, sm in zip(masks, s):
        excess = math.fsum(sm @ e) / (2.0 * L**d)
        out.append((ViscosityReading(base + excess, excess, 0, 0.0, k), sm))
    return out


def subset_sweep(config, E, kernel, family="all", k=None, workers=1):
    """Solve the stresslet system on every subset of a family.

    Parameters
    ----------
    config : PeriodicConfiguration
    E : array_like, shape (3, 3)
    kernel : StrainKernel
        Built for ``config.L``.
    family : {"all", "up-to-k"} or iterable of masks
    k : int, optional
        Size bound for ``"up-to-k"``.
    workers : int
        Thread count; results do not depend on it.

    Returns
    -------
    SubsetReadings

    Raises
    ------
    ConfigError
        When the subset budget is exceeded.
    NumericalError
        From a subset solve, naming the subset.
    """
    E = check_strain(E)
    _check_kernel(config, kernel)
    masks = subset_family(len(config), family, k)
    alpha = response_coefficients(config.radii, config.d)
    M = interaction_matrix(config, kernel)
    e = to_coords(E)
    base = float(e @ e)

    by_size = {}
    for m in masks:
        by_size.setdefault(_popcount(m), []).append(m)
    batches = []
    for size, group in sorted(by_size.items()):
        step = max(1, 4096 // max(1, size * size))
        batches.extend(group[i : i + step] for i in range(0, len(group), step))

    def one(batch):
        if batch[0] == 0:
            return [(ViscosityReading(base, 0.0, 0, 0.0, 0), np.zeros((0, 5)))]
        return _solve_batch(alpha, M, e, batch, config.L, config.d)

    solved = {}
    for batch, res in zip(batches, ordered_map(one, batches, workers)):
        solved.update(zip(batch, res))
    results = [solved[m] for m in masks]
    readings = {m: r for m, (r, _) in zip(masks, results)}
    stresslets = {m: s for m, (_, s) in zip(masks, results)}
    return SubsetReadings(
        config=config,
        E=E,
        masks=tuple(masks),
        readings=readings,
        stresslets=stresslets,
        kernel_metadata=kernel.metadata(),
    )


# -- difference operators ----------------------------------------------------------------


def difference_operator(F):
    """``delta^F`` acting on scalar functions of a mask.

    Returns a map ``X -> (H -> sum_{G <= F} (-1)^{|F \\ G|} X(G u H))``; results
    compose, so ``difference_operator({n})`` applied twice equals minus once.
    """
    F = as_mask(F)
    bits = _bits(F)

    def apply(X):
        def value(H):
            H = as_mask(H)
            terms = []
            for r in range(len(bits) + 1):
                sign = -1.0 if (len(bits) - r) % 2 else 1.0
                for G in combinations(bits, r):
                    terms.append(sign * X(as_mask(G) | H))
            return math.fsum(terms)

        return value

    return apply


def compose_difference(sets, X):
    """``delta^{F_1} ... delta^{F_k} X`` as a function of ``H`` (innermost last)."""
    for F in reversed(list(sets)):
        X = difference_operator(F)(X)
    return X


def delta_F(readings, F, H=0, quantity="reading"):
    """Inclusion-exclusion combination ``delta^F X^H`` of a per-subset quantity.

    Parameters
    ----------
    readings : SubsetReadings
    F, H : int mask or iterable of indices
        Disjoint subsets.
    quantity : str, tuple or callable
        See :meth:`SubsetReadings.selector`.

    Raises
    ------
    ConfigError
        If ``F`` and ``H`` intersect.
    MissingSubsetError
        If a needed subset was not swept.
    """
    F, H = as_mask(F), as_mask(H)
    if F & H:
        raise ConfigError("F and H must be disjoint")
    return difference_operator(F)(readings.selector(quantity))(H)


# -- coefficients --------------------------------------------------------------------------


def _mobius(values, n):
    """``out[F] = sum_{G <= F} (-1)^{|F \\ G|} values[G]`` over all masks."""
    out = np.array(values, dtype=float)
    idx = np.arange(1 << n)
    for b in range(n):
        hi = (idx >> b) & 1 == 1
        out[hi] -= out[idx[hi] ^ (1 << b)]
    return out


def _popcounts(n):
    idx = np.arange(1 << n)
    return np.array([_popcount(int(i)) for i in idx])


def _signed_products(readings, F, H, e, particle=None):
    """``delta^F`` of ``S:E`` summed over the particles of ``G u H`` (or one particle).

    Sums the individual coordinate products with signs in one compensated sum,
    so the result does not inherit the rounding of per-subset contractions.
    """
    parts = []
    for r in range(len(F) + 1):
        sign = -1.0 if (len(F) - r) % 2 else 1.0
        for G in combinations(F, r):
            mask = as_mask(G) | H
            readings.reading(mask)
            S = readings.stresslets[mask]
            if particle is not None:
                S = S[_popcount(mask & ((1 << particle) - 1))]
            parts.append(sign * (S * e).ravel())
    return math.fsum(np.concatenate(parts))


def _energy_route(readings, k):
    n = readings.n
    if readings.complete and 3**n > 10**6:
        vals = np.array([readings.readings[m].excess for m in range(1 << n)])
        mob = _mobius(vals, n)
        pc = _popcounts(n)
        return [math.factorial(j) * math.fsum(mob[pc == j]) for j in range(1, k + 1)]
    e = to_coords(readings.E)
    scale = 0.5 / readings.config.L**readings.config.d
    out = []
    for j in range(1, k + 1):
        terms = [_signed_products(readings, F, 0, e) for F in combinations(range(n), j)]
        out.append(scale * math.factorial(j) * math.fsum(terms))
    return out


def _boundary_route(readings, k):
    n = readings.n
    cfg = readings.config
    scale = 0.5 / cfg.L**cfg.d
    if readings.complete and 3**n > 10**6:
        e = to_coords(readings.E)
        pc = _popcounts(n)
        sums = np.zeros(k + 1)
        for p in range(n):
            others = [q for q in range(n) if q != p]
            vals = np.empty(1 << (n - 1))
            for g in range(1 << (n - 1)):
                full = 1 << p
                for b, q in enumerate(others):
                    if g >> b & 1:
                        full |= 1 << q
                pos = _popcount(full & ((1 << p) - 1))
                vals[g] = readings.stresslets[full][pos] @ e
            mob = _mobius(vals, n - 1)
            pcg = pc[: 1 << (n - 1)]
            for j in range(1, k + 1):
                sums[j] += math.fsum(mob[pcg == j - 1])
        return [scale * math.factorial(j) * sums[j] for j in range(1, k + 1)]
    e = to_coords(readings.E)
    out = []
    for j in range(1, k + 1):
        terms = []
        for F in combinations(range(n), j):
            for p in F:
                rest = [q for q in F if q != p]
                terms.append(_signed_products(readings, rest, 1 << p, e, particle=p))
        out.append(scale * math.factorial(j) * math.fsum(terms))
    return out


@dataclass(frozen=True)
class ClusterReport:
    """Cluster coefficients and the quantities checked against them.

    Attributes
    ----------
    n_particles : int
    base : float
        ``|E|^2``, the zeroth-order term.
    energy, boundary : tuple of float or None
        ``B^1 .. B^k`` from the energy and boundary routes.
    bernoulli : dict
        ``p -> brute-force Bernoulli average``.
    polynomial : dict
        ``p -> base + sum_j p^j/j! B^j`` through order ``k``.
    remainders : dict
        ``(p, k) -> remainder``.
    route_discrepancy : float
        Max relative difference between the routes (``nan`` if one is missing).
    """

    n_particles: int
    base: float
    energy: tuple = None
    boundary: tuple = None
    bernoulli: dict = field(default_factory=dict)
    polynomial: dict = field(default_factory=dict)
    remainders: dict = field(default_factory=dict)
    route_discrepancy: float = float("nan")
    kernel_metadata: dict = None

    @property
    def coefficients(self):
        return self.energy if self.energy is not None else self.boundary

    def to_dict(self):
        return {
            "n_particles": self.n_particles,
            "base": self.base,
            "energy": None if self.energy is None else list(self.energy),
            "boundary": None if self.boundary is None else list(self.boundary),
            "bernoulli": {repr(p): v for p, v in self.bernoulli.items()},
            "polynomial": {repr(p): v for p, v in self.polynomial.items()},
            "remainders": {f"{p!r},{k}": v for (p, k), v in self.remainders.items()},
            "route_discrepancy": self.route_discrepancy,
            "kernel": self.kernel_metadata,
        }

    def csv_rows(self):
        """Rows ``(j, route, value)``."""
        rows = []
        for route, coeffs in (("energy", self.energy), ("boundary", self.boundary)):
            if coeffs is not None:
                rows.extend((j, route, v) for j, v in enumerate(coeffs, start=1))
        return rows


def _relative_gap(a, b):
    gaps = [abs(x - y) / max(abs(x), abs(y), 1e-300) for x, y in zip(a, b)]
    return max(gaps, default=0.0)


def cluster_coefficients(
    config=None, E=None, kernel=None, k=None, route="both", readings=None, workers=1
):
    """Per-configuration cluster coefficients ``B^1 .. B^k``.

    Energy route: ``B^j = j! sum_{|F|=j} delta^F (reading)``. Boundary route:
    ``B^j = j!/(2 L^d) sum_{|F|=j} sum_{n in F} E:delta^{F \\ n} S_n``.

    Parameters
    ----------
    config, E, kernel
        Used to run an ``"up-to-k"`` sweep when ``readings`` is not given.
    k : int, optional
        Highest order, default the particle count.
    route : {"energy", "boundary", "both"}
    readings : SubsetReadings, optional
        Must cover all subsets of size at most ``k``.

    Returns
    -------
    ClusterReport
    """
    if route not in ("energy", "boundary", "both"):
        raise ConfigError(f"unknown route {route!r}")
    if readings is None:
        n = len(config)
        k = n if k is None else k
        if k > n:
            raise ConfigError("order k exceeds the particle count")
        readings = subset_sweep(config, E, kernel, "up-to-k", k, workers=workers)
    n = readings.n
    k = n if k is None else k
    if k > n:
        raise ConfigError("order k exceeds the particle count")
    energy = tuple(_energy_route(readings, k)) if route in ("energy", "both") else None
    boundary = tuple(_boundary_route(readings, k)) if route in ("boundary", "both") else None
    gap = _relative_gap(energy, boundary) if route == "both" else float("nan")
    return ClusterReport(
        n_particles=n,
        base=readings.base,
        energy=energy,
        boundary=boundary,
        route_discrepancy=gap,
        kernel_metadata=readings.kernel_metadata,
    )


def bernoulli_average_bruteforce(readings, p):
    """``sum_S p^|S| (1-p)^(N-|S|) reading(S)`` over all subsets (compensated sum).

    Raises
    ------
    MissingSubsetError
        If the sweep does not cover all ``2^N`` subsets.
    """
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ConfigError("p must lie in [0, 1]")
    if not readings.complete:
        raise MissingSubsetError("Bernoulli average needs all subsets (incomplete sweep)")
    n = readings.n
    terms = []
    for mask, r in readings.readings.items():
        s = _popcount(mask)
        w = p**s * (1.0 - p) ** (n - s)
        if w:
            terms.append(w * r.value)
    return math.fsum(terms)


def cluster_polynomial(base, coefficients, p, k=None):
    """``base + sum_{j<=k} p^j/j! B^j``."""
    k = len(coefficients) if k is None else k
    if k > len(coefficients):
        raise ConfigError(f"only {len(coefficients)} coefficients available")
    terms = [base] + [p ** (j + 1) / math.factorial(j + 1) * c for j, c in enumerate(coefficients[:k])]
    return math.fsum(terms)


def remainder_value(readings, p, k, coefficients=None):
    """Remainder of the cluster expansion after order ``k`` at deletion parameter ``p``.

    Computed as ``(average - partial sum through k) / p^(k+1)`` from the
    brute-force average.

    Raises
    ------
    NumericalError
        At ``p = 0`` with ``k < N``, where the limit is ``B^{k+1}/(k+1)!``.
    """
    n = readings.n
    if coefficients is None:
        coefficients = cluster_coefficients(readings=readings, k=n, route="energy").energy
    if len(coefficients) < min(k, n):
        raise ConfigError(f"need coefficients through order {min(k, n)}")
    if p == 0.0:
        if k >= n:
            return 0.0
        limit = coefficients[k] / math.factorial(k + 1)
        raise NumericalError(
            f"remainder indeterminate at p=0; its limit is B^{k + 1}/{k + 1}! = {limit!r}"
        )
    avg = bernoulli_average_bruteforce(readings, p)
    partial = cluster_polynomial(readings.base, coefficients, p, min(k, n))
    return (avg - partial) / p ** (k + 1)


def cluster_report(readings, k=None, route="both", ps=(), remainder_orders=()):
    """Coefficients plus Bernoulli averages, polynomials and remainders at each ``p``."""
    rep = cluster_coefficients(readings=readings, k=k, route=route)
    coeffs = rep.coefficients
    full = None
    if readings.complete:
        full = coeffs if len(coeffs) == readings.n else cluster_coefficients(
            readings=readings, route="energy"
        ).energy
    bern, poly, rem = {}, {}, {}
    for p in ps:
        poly[p] = cluster_polynomial(readings.base, coeffs, p)
        if full is not None:
            bern[p] = bernoulli_average_bruteforce(readings, p)
            for kk in remainder_orders:
                rem[(p, kk)] = remainder_value(readings, p, kk, full)
    return replace(rep, bernoulli=bern, polynomial=poly, remainders=rem)


# -- correlation models ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CorrelationModel:
    """Pair correlation ``h2(z) = f2(z) - lam^2`` of a stationary process.

    Attributes
    ----------
    kind : str
        ``"radial-table"``, ``"shell-grid"``, ``"analytic-radial"``,
        ``"analytic"``, ``"lemma10"`` or ``"dilated"``.
    lam : float
        Intensity.
    exclusion : float
        ``h2 = -lam^2`` for ``|z| < exclusion``.
    support : float
        ``h2 = 0`` for ``|z| > support`` (``inf`` for a decaying tail).
    radial : bool
        True when ``h2`` does not depend on direction.
    breakpoints : tuple of float
        Radii where ``h2`` is not smooth; radial panels end there.
    tail_start : float
        Radius from which the tail decay test samples shells.
    params : dict
        Construction parameters, for metadata.
    """

    kind: str
    lam: float
    exclusion: float
    support: float
    fn: Callable = field(repr=False)
    radial: bool = False
    breakpoints: tuple = ()
    tail_start: float = 0.0
    params: dict = field(default_factory=dict, repr=False)

    def h2(self, r, u):
        """Values on the grid ``r x u``: shape ``(len(r), len(u))``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.broadcast_to(self.fn(r, u), (len(r), len(u))).astype(float)
        out = np.where((r < self.exclusion)[:, None], -self.lam**2, out)
        return np.where((r > self.support)[:, None], 0.0, out)

    def f2(self, r, u):
        return self.h2(r, u) + self.lam**2

    def metadata(self):
        meta = {
            "kind": self.kind,
            "lam": self.lam,
            "exclusion": self.exclusion,
            "support": self.support if np.isfinite(self.support) else "inf",
        }
        meta.update({k: v for k, v in self.params.items() if np.isscalar(v)})
        return meta

    def check(self, n_radii=64, order=17, tol=1e-14):
        """Validate ``f2 >= 0`` on a sample grid; returns the model.

        Raises
        ------
        ConfigError
            If the sampled ``f2`` is negative.
        """
        top = self.support if np.isfinite(self.support) else max(self.tail_start, 1.0) * 4
        r = np.linspace(0.0, top, n_radii)[1:]
        u, _ = sphere_rule(order)
        f2 = self.f2(r, u)
        if f2.min() < -tol * max(self.lam**2, 1e-300):
            raise ConfigError(f"pair density f2 = h2 + lam^2 is negative ({f2.min():.3e})")
        return self

    def dilated(self, ell):
        """Correlation of the ``ell``-dilated process: ``ell^-2d h2(z/ell)``, ``lam ell^-d``."""
        ell = float(ell)
        if not ell >= 1.0:
            raise ConfigError("dilation factor must be >= 1")
        base = self
        d = 3

        def fn(r, u):
            return base.h2(r / ell, u) / ell ** (2 * d)

        return CorrelationModel(
            kind="dilated",
            lam=self.lam / ell**d,
            exclusion=self.exclusion * ell,
            support=self.support * ell,
            fn=fn,
            radial=self.radial,
            breakpoints=tuple(b * ell for b in self.breakpoints),
            tail_start=self.tail_start * ell,
            params={**self.params, "ell": ell, "base_kind": self.kind},
        )


def radial_table_model(bin_edges, h2, lam, exclusion=None):
    """Piecewise-constant radial ``h2`` on bins; ``-lam^2`` below ``exclusion``.

    ``exclusion`` defaults to the first bin edge; ``h2 = 0`` beyond the last.
    """
    edges = np.asarray(bin_edges, dtype=float)
    vals = np.asarray(h2, dtype=float)
    if edges.ndim != 1 or len(edges) != len(vals) + 1 or np.any(np.diff(edges) <= 0):
        raise ConfigError("bin edges must be strictly increasing, one more than values")
    exclusion = float(edges[0]) if exclusion is None else float(exclusion)

    def fn(r, u):
        i = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, len(vals) - 1)
        v = np.where((r >= edges[0]) & (r <= edges[-1]), vals[i], 0.0)
        return v[:, None]

    return CorrelationModel(
        kind="radial-table",
        lam=float(lam),
        exclusion=exclusion,
        support=float(edges[-1]),
        fn=fn,
        radial=True,
        breakpoints=tuple(edges) + (exclusion,),
        tail_start=float(edges[-1]),
    )


def pair_table_model(table, exclusion=None):
    """Radial model from an estimated :class:`PairCorrelationTable`."""
    return radial_table_model(table.bin_edges, table.h2, table.intensity, exclusion)


def shell_grid_model(bin_edges, directions, values, lam, exclusion=None):
    """Radial bins times an angular table of ``h2`` values.

    ``values[i, q]`` is ``h2`` on bin ``i`` in the direction cell of
    ``directions[q]`` (nearest-direction lookup), so a quadrature on the same
    directions reproduces the table exactly.
    """
    edges = np.asarray(bin_edges, dtype=float)
    dirs = np.asarray(directions, dtype=float)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = np.asarray(values, dtype=float)
    if vals.shape != (len(edges) - 1, len(dirs)) or np.any(np.diff(edges) <= 0):
        raise ConfigError("values must have shape (bins, directions) on increasing edges")
    exclusion = float(edges[0]) if exclusion is None else float(exclusion)

    def fn(r, u):
        i = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, len(vals) - 1)
        q = np.argmax(u @ dirs.T, axis=1)
        v = vals[i][:, q]
        return np.where(((r >= edges[0]) & (r <= edges[-1]))[:, None], v, 0.0)

    return CorrelationModel(
        kind="shell-grid",
        lam=float(lam),
        exclusion=exclusion,
        support=float(edges[-1]),
        fn=fn,
        radial=False,
        breakpoints=tuple(edges) + (exclusion,),
        tail_start=float(edges[-1]),
    )


def analytic_model(fn, lam, exclusion, support=np.inf, breakpoints=(), radial=False, tail_start=None):
    """Model from ``fn(r, u) -> (len(r), len(u))`` values of ``h2`` outside the exclusion."""
    bps = tuple(float(b) for b in breakpoints) + (float(exclusion),)
    if np.isfinite(support):
        bps += (float(support),)
    return CorrelationModel(
        kind="analytic-radial" if radial else "analytic",
        lam=float(lam),
        exclusion=float(exclusion),
        support=float(support),
        fn=fn,
        radial=radial,
        breakpoints=bps,
        tail_start=float(max(bps) if tail_start is None else tail_start),
    )


def analytic_radial_model(fn_r, lam, exclusion, support=np.inf, breakpoints=(), tail_start=None):
    """Radial model from ``fn_r(r) -> (len(r),)``."""
    return analytic_model(
        lambda r, u: np.asarray(fn_r(r), dtype=float)[:, None],
        lam,
        exclusion,
        support,
        breakpoints,
        radial=True,
        tail_start=tail_start,
    )


# -- leading pair term ---------------------------------------------------------------------


def _bhat_coords(E, bhat1):
    e = to_coords(check_strain(E))
    if bhat1 is None:
        bhat1 = einstein_tensor(3)
    b = np.asarray(bhat1, dtype=float)
    return (b * e) if b.ndim == 0 else b @ e


def _kernel_on_sphere(v, u):
    """``4 v.M(u) v`` on unit vectors ``u``."""
    return 4.0 * np.einsum("a,nab,b->n", v, strain_kernel_matrix(u), v)


def _radial_rule(edges, n):
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(a, b, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _panel_edges(start, stop, breakpoints, ratio=2.0):
    """Breakpoints within ``(start, stop)``, refined so every panel has ``b/a <= ratio``."""
    pts = sorted({start, stop, *(b for b in breakpoints if start < b < stop)})
    out = [pts[0]]
    for b in pts[1:]:
        a = out[-1]
        m = max(1, int(math.ceil(math.log(b / a) / math.log(ratio))))
        out.extend(a * (b / a) ** (np.arange(1, m + 1) / m))
    return np.array(out)


def _tail_rule(R, n):
    """Nodes/weights for ``int_R^inf f(r) dr`` via ``r = 1/t``."""
    t, w = gauss_legendre(0.0, 1.0 / R, n)
    return 1.0 / t, w / t**2


def shell_values(model, v, r, order):
    """Angular integrals ``s(r) = r^2 int_S 4 v.M(r u) v h2(r u) du``."""
    u, w = sphere_rule(order)
    k = _kernel_on_sphere(v, u) * w
    return model.h2(r, u) @ k / np.asarray(r, dtype=float)


def _check_tail(model, v, order):
    r = model.tail_start * 2.0 ** np.arange(4, 13)
    mag = np.abs(shell_values(model, v, r, order)) * r
    top = mag.max()
    if top == 0.0:
        return
    if mag[-1] > mag[0] * 2.0 ** (-0.4):
        raise NonIntegrableTailError(
            "shell values do not decay faster than |z|^-1 beyond the cutoff "
            "(h2 not integrable against the kernel)"
        )


def bg_leading(
    model, E, bhat1=None, pv_inner_cutoff=None, radial_nodes=16, angular_order=29, octaves=60
):
    """Leading second-order coefficient as an angular-first principal value.

    Integrates ``4 (B E):G(z):(B E) h2(z)`` shell by shell: on each sphere the
    angular integral is taken first, so the radial integral of the shell values
    converges absolutely. With ``B = einstein_tensor(3)`` the integrand equals
    :func:`bg_integrand_sphere` times ``h2``.

    Parameters
    ----------
    model : CorrelationModel
    E : array_like, shape (3, 3)
    bhat1 : float or ndarray (5, 5), optional
        First-order tensor on strain coordinates (default: unit spheres).
    pv_inner_cutoff : float, optional
        Inner radius of the shell integration (default: the exclusion radius,
        inside which ``h2`` is radial and contributes nothing).
    radial_nodes : int
        Gauss nodes per radial panel.
    angular_order : int
        Lebedev order of the shell quadrature.
    octaves : int
        Radial doublings covered by panels before the mapped tail, for
        unbounded support.

    Raises
    ------
    NonIntegrableTailError
        If shell values of an unbounded model decay no faster than ``1/r``.
    """
    v = _bhat_coords(E, bhat1)
    r0 = model.exclusion if pv_inner_cutoff is None else float(pv_inner_cutoff)
    if not r0 > 0:
        raise ConfigError("principal-value inner cutoff must be positive")
    if np.isfinite(model.support):
        if model.support <= r0:
            return 0.0
        edges = _panel_edges(r0, model.support, model.breakpoints)
        r, w = _radial_rule(edges, radial_nodes)
    else:
        _check_tail(model, v, angular_order)
        top = max(r0, model.tail_start) * 2.0**octaves
        edges = _panel_edges(r0, top, model.breakpoints)
        r, w = _radial_rule(edges, radial_nodes)
        rt, wt = _tail_rule(top, radial_nodes)
        r, w = np.concatenate([r, rt]), np.concatenate([w, wt])
    s = shell_values(model, v, r, angular_order)
    return math.fsum(s * w)


def bg_point_term(model, E, bhat1=None, d=3):
    """Contribution of the kernel's point mass to the periodized pair sum.

    ``4 |B E|^2 lam^2/(d+2)``: the gap between the periodic (zero-mean)
    pairing of the kernel with ``f2`` and the ball-excised principal value
    :func:`bg_leading`.
    """
    v = _bhat_coords(E, bhat1)
    return -4.0 * float(v @ v) * kernel_point_term(d) * model.lam**2


# -- full pair formula ---------------------------------------------------------------------


@dataclass(frozen=True)
class PairTermBreakdown:
    """Terms of the second-order pair formula.

    ``T1`` pairs the Taylor remainder of the partner field with the two-sphere
    traction, ``T2`` the partner strain with the traction change, ``T3`` the
    stresslet with the partner strain against ``h2``. ``T3_interior`` is the
    part of ``T3`` from offsets inside the partner, where its velocity is the
    rigid motion ``-E(x - z)``.
    """

    T1: float
    T2: float
    T3: float
    T3_interior: float
    T3_exterior: float
    reflection_order: int

    @property
    def total(self):
        return math.fsum([self.T1, self.T2, self.T3])

    def to_dict(self):
        return {
            "T1": self.T1,
            "T2": self.T2,
            "T3": self.T3,
            "T3_interior": self.T3_interior,
            "T3_exterior": self.T3_exterior,
            "total": self.total,
            "reflection_order": self.reflection_order,
        }


def _traction_basis(u):
    return np.array([single_sphere_traction(u, B) for B in strain_basis(3)])


def _partner_strain_map(z):
    """``T[n, a, b]``: strain coordinate ``a`` at the origin from a unit sphere at ``z[n]``
    with ambient basis strain ``b``."""
    B = strain_basis(3)
    grads = np.stack([sym(single_sphere_gradient(-z, Eb)) for Eb in B], axis=-1)
    return np.einsum("aij,nijb->nab", B, grads)


def _ambient_at_origin(z, e, order):
    """Reflected ambient strain coordinates of the sphere at the origin (equal spheres)."""
    T = _partner_strain_map(z)
    a = np.broadcast_to(e, (len(z), 5)).copy()
    for _ in range(order - 1):
        a = e + np.einsum("nab,nb->na", T, a)
    return a


def pair_surface_terms(z, E, reflection_order=8, surface_order=29):
    """Surface integrals of the first two pair terms for a partner at each ``z``.

    Returns ``(t1, t2)``, arrays of shape ``(len(z),)``; requires ``|z| >= 2``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if np.any(np.linalg.norm(z, axis=1) < 2.0 - 1e-12):
        raise ConfigError("partner spheres must not overlap (|z| >= 2)")
    E = check_strain(E)
    e = to_coords(E)
    us, ws = sphere_rule(surface_order)
    tb = _traction_basis(us)  # (5, ns, 3)
    A0 = _ambient_at_origin(z, e, reflection_order)
    t_A0 = np.einsum("na,asi->nsi", A0, tb)
    t_dA = np.einsum("na,asi->nsi", A0 - e, tb)
    grad0 = single_sphere_gradient(-z, E)  # d_j psi^z_i at the origin
    psi0 = single_sphere_velocity(-z, E)
    psi = single_sphere_velocity(us[None, :, :] - z[:, None, :], E)
    lin = np.einsum("nij,sj->nsi", grad0, us)
    rem = psi - psi0[:, None, :] - lin
    t1 = np.einsum("s,nsi,nsi->n", ws, rem, t_A0)
    t2 = np.einsum("s,nsi,nsi->n", ws, lin, t_dA)
    return t1, t2


def bg_full(
    model,
    E,
    reflection_order=8,
    radial_nodes=12,
    angular_order=17,
    surface_order=29,
    octaves=24,
    chunk=2048,
):
    """Second-order coefficient from the three-term pair formula, for unit spheres.

    ``T1`` and ``T2`` integrate two-sphere surface terms against ``f2`` (to
    infinity, through a mapped tail). The partner-sphere ambient strain comes
    from ``reflection_order`` reflections with the exact single-sphere fields.
    ``T3 = (d+2)|B| E : int grad psi^z(0) h2(z) dz`` over all offsets,
    including those inside the partner, where ``grad psi^z = -E``.

    Returns
    -------
    PairTermBreakdown
    """
    if reflection_order < 4:
        raise ConfigError("reflection order must be >= 4")
    E = check_strain(E)
    d = 3
    alpha = (d + 2) * ball_volume(d)
    u, wu = sphere_rule(angular_order)

    # T1, T2 against f2 on |z| >= max(2, exclusion)
    r0 = max(2.0, model.exclusion)
    top = max(r0, model.tail_start, model.support if np.isfinite(model.support) else 0) * 2.0**octaves
    edges = _panel_edges(r0, top, model.breakpoints + ((model.support,) if np.isfinite(model.support) else ()))
    r, wr = _radial_rule(edges, radial_nodes)
    rt, wt = _tail_rule(top, radial_nodes)
    r, wr = np.concatenate([r, rt]), np.concatenate([wr, wt])
    f2 = model.f2(r, u)
    if not np.any(f2):
        t1_total = t2_total = 0.0
    else:
        pts = (r[:, None, None] * u[None, :, :]).reshape(-1, 3)
        t1 = np.empty(len(pts))
        t2 = np.empty(len(pts))
        for s in range(0, len(pts), chunk):
            t1[s : s + chunk], t2[s : s + chunk] = pair_surface_terms(
                pts[s : s + chunk], E, reflection_order, surface_order
            )
        weight = (wr * r**2)[:, None] * wu[None, :] * f2
        t1_total = math.fsum((t1.reshape(weight.shape) * weight).ravel())
        t2_total = math.fsum((t2.reshape(weight.shape) * weight).ravel())

    # T3 interior: grad psi^z(0) = -E inside the partner
    ri, wi = gauss_legendre(0.0, 1.0, radial_nodes)
    h_in = model.h2(ri, u)
    interior = -float(np.sum(E * E)) * math.fsum(((wi * ri**2)[:, None] * wu[None, :] * h_in).ravel())

    # T3 exterior: shell integrals of E:grad psi^z(0) h2 for |z| > 1
    g_edges = _panel_edges(1.0, model.support if np.isfinite(model.support) else top, model.breakpoints)
    rg, wg = _radial_rule(g_edges, radial_nodes)
    if not np.isfinite(model.support):
        rgt, wgt = _tail_rule(top, radial_nodes)
        rg, wg = np.concatenate([rg, rgt]), np.concatenate([wg, wgt])
    zg = (rg[:, None, None] * u[None, :, :]).reshape(-1, 3)
    eg = np.einsum("ij,nij->n", E, single_sphere_gradient(-zg, E)).reshape(len(rg), len(u))
    h_out = model.h2(rg, u)
    shells = np.einsum("ru,u->r", eg * h_out, wu)
    exterior = math.fsum(shells * wg * rg**2)

    T3_in = alpha * interior
    T3_out = alpha * exterior
    return PairTermBreakdown(
        T1=t1_total,
        T2=t2_total,
        T3=T3_in + T3_out,
        T3_interior=T3_in,
        T3_exterior=T3_out,
        reflection_order=int(reflection_order),
    )


# -- logarithmic-growth construction --------------------------------------------------------


def default_angular_profile(E=None):
    """Normalized positive part of ``(d+2)/2 (e.Ee)^2 - |Ee|^2`` on unit vectors."""
    if E is None:
        E = from_coords(np.array([0.0, 0.0, 0.0, 1.0, 0.0]))
    E = check_strain(E)
    u, _ = sphere_rule(131)

    def raw(x):
        Ex = x @ E.T
        return 2.5 * np.sum(x * Ex, axis=-1) ** 2 - np.sum(Ex * Ex, axis=-1)

    top = raw(u).max()

    def g(x):
        return np.clip(raw(np.atleast_2d(x)), 0.0, None) / top

    return g


def _hermite(t, v0, m0, v1, m1):
    t2, t3 = t * t, t * t * t
    return (
        (2 * t3 - 3 * t2 + 1) * v0
        + (t3 - 2 * t2 + t) * m0
        + (-2 * t3 + 3 * t2) * v1
        + (t3 - t2) * m1
    )


def lemma10_model(lam, lam2, g=None, K=1.0, d=3):
    """Correlation with an inner hole and a slowly decaying anisotropic shell.

    ``h = -lam^2`` for ``|z| < 4``;
    ``h = lam2/K (1 + lam2^{1/(2d+1)} |z|)^{-2d-1} g(z/|z|)`` for ``|z| > 5``;
    a C1 cubic in the radius bridges ``4 < |z| < 5``.
    """
    lam, lam2, K = float(lam), float(lam2), float(K)
    if not 0.0 < lam2 <= lam**2 * (1 + 1e-12):
        raise ConfigError("need 0 < lam2 <= lam^2")
    if not K > 0:
        raise ConfigError("normalization K must be positive")
    if g is None:
        g = default_angular_profile()
    a = lam2 ** (1.0 / (2 * d + 1))
    p = 2 * d + 1

    def outer(r):
        return lam2 / K * (1.0 + a * r) ** (-p)

    def outer_dr(r):
        return -p * a * lam2 / K * (1.0 + a * r) ** (-p - 1)

    def fn(r, u):
        gu = np.asarray(g(u), dtype=float)[None, :]
        out = outer(r)[:, None] * gu
        t = np.clip(r - 4.0, 0.0, 1.0)[:, None]
        bridge = _hermite(t, -lam**2, 0.0, outer(5.0) * gu, outer_dr(5.0) * gu)
        inner = np.full_like(out, -lam**2)
        return np.where((r < 4.0)[:, None], inner, np.where((r <= 5.0)[:, None], bridge, out))

    return CorrelationModel(
        kind="lemma10",
        lam=lam,
        exclusion=4.0,
        support=np.inf,
        fn=fn,
        radial=False,
        breakpoints=(4.0, 5.0, 1.0 / a),
        tail_start=max(5.0, 1.0 / a),
        params={"lam2": lam2, "K": K, "decay_rate": a},
    )


def cube_sup(model, n=8, order=17, radii=None):
    """Approximate ``sup_z int_{Q(z)} |h2|`` over unit cubes by a local search.

    Cube centres run over Lebedev directions at the given radii; each cube
    integral uses an ``n^3`` midpoint rule.
    """
    if radii is None:
        radii = np.arange(0.0, 12.01, 0.25)
    dirs, _ = sphere_rule(order)
    g = (np.arange(n) + 0.5) / n - 0.5
    cell = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    best = 0.0
    for rc in radii:
        centres = np.zeros((1, 3)) if rc == 0 else rc * dirs
        for c in centres:
            x = c + cell
            rx = np.linalg.norm(x, axis=1)
            ux = x / np.where(rx > 0, rx, 1.0)[:, None]
            vals = np.abs(np.array([model.h2(np.array([ri]), ui[None])[0, 0] for ri, ui in zip(rx, ux)]))
            best = max(best, float(vals.mean()))
    return best


def lemma10_integral(lam, lam2, g=None, E=None, K=1.0, radial_nodes=16, angular_order=29, octaves=60):
    """``|int_{|z|>2} 4 (B E):G(z):(B E) h(z) dz|`` for the :func:`lemma10_model` correlation.

    ``K = 1`` meets ``sup_z int_{Q(z)} |h| = lam2`` when ``lam^2 = lam2``: the
    inner hole then attains the supremum and the outer shell stays below it.
    """
    if E is None:
        E = from_coords(np.array([0.0, 0.0, 0.0, 1.0, 0.0]))
    model = lemma10_model(lam, lam2, g if g is not None else default_angular_profile(E), K)
    return abs(
        bg_leading(
            model,
            E,
            pv_inner_cutoff=2.0,
            radial_nodes=radial_nodes,
            angular_order=angular_order,
            octaves=octaves,
        )
    )
