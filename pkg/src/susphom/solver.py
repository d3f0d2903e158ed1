"""Stresslet-level solver for periodized suspensions and a free-space reflection oracle.

Each sphere carries a stresslet ``S_n = alpha_n A_n`` with ``alpha_n = (d+2)|B_{r_n}|``,
where the ambient strain ``A_n`` is the imposed strain plus the strains induced
at the centre by all other stresslets (and, periodically, by the sphere's own
images). The induced strain of a point stresslet ``S`` at offset ``z`` is the
kernel matrix ``M(z)`` applied to the coordinates of ``S``; the sign is pinned by
the far field of the exact single-sphere solution.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve

from .errors import (
    ConfigError,
    InsideInclusionError,
    KernelMismatchError,
    NonConvergentError,
    NumericalError,
    OverlapError,
)
from .geometry import PeriodicConfiguration, wrap
from .kernels import single_sphere_gradient, stresslet_response
from .strain import check_strain, from_coords, sym, to_coords

#: Largest number of scalar unknowns handled by the dense direct solve.
DIRECT_SOLVE_LIMIT = 3000

#: Consecutive non-contracting iterations tolerated before giving up.
NONCONTRACTION_LIMIT = 25


@dataclass(frozen=True, eq=False)
class DipoleSolution:
    """Stresslets and ambient strains of a truncated corrector solution.

    Attributes
    ----------
    config : PeriodicConfiguration or None
        The periodic configuration (``None`` for free-space solutions).
    E : ndarray, shape (3, 3)
        Imposed strain.
    stresslets, ambient : ndarray, shape (N, 3, 3)
    iterations : int
        Fixed-point iterations used (0 for a direct solve or an empty system).
    residual : float
        Max over particles of the last stresslet update norm (0 for direct solves).
    flavor : str
        ``"periodic"``, ``"free-dipole"`` or ``"free-reflection"``.
    """

    config: object
    E: np.ndarray
    stresslets: np.ndarray
    ambient: np.ndarray
    iterations: int
    residual: float
    flavor: str = "periodic"
    kernel: object = field(default=None, repr=False)
    centers: np.ndarray = field(default=None, repr=False)
    radii: np.ndarray = field(default=None, repr=False)
    method: str = "direct"

    def __len__(self):
        return len(self.stresslets)

    def to_dict(self, digest=None):
        out = {
            "config_digest": digest,
            "flavor": self.flavor,
            "method": self.method,
            "E": self.E.tolist(),
            "stresslets": self.stresslets.tolist(),
            "ambient": self.ambient.tolist(),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
        }
        if self.kernel is not None:
            out["kernel"] = self.kernel.metadata()
        return out


@dataclass(frozen=True)
class ViscosityReading:
    """``E:B_L E`` of a periodized configuration, with its excess over ``|E|^2``."""

    value: float
    excess: float
    iterations: int = 0
    residual: float = 0.0
    n_particles: int = 0


def response_coefficients(radii, d=3):
    """``alpha_n = (d+2)|B_{r_n}|`` for each radius."""
    return np.array([stresslet_response(d, r) for r in np.asarray(radii, float)])


def _displacements(config, kernel):
    c = config.centers
    z = c[:, None, :] - c[None, :, :]
    return kernel.wrap(z) if kernel.periodic else z


def interaction_matrix(config, kernel):
    """Dense ``(5N, 5N)`` matrix of induced-strain couplings.

    Block ``(n, m)`` is ``M(x_n - x_m)`` for ``n != m`` and the regularized
    self term on the diagonal (zero in free space).
    """
    n = len(config)
    out = np.zeros((n, 5, n, 5))
    if n == 0:
        return out.reshape(0, 0)
    iu, ju = np.triu_indices(n, k=1)
    if len(iu):
        z = _displacements(config, kernel)[iu, ju]
        blocks = kernel.matrix(z)
        out[iu, :, ju, :] = blocks
        out[ju, :, iu, :] = blocks  # even kernel, symmetric blocks
    out[np.arange(n), :, np.arange(n), :] = kernel.regularized_self()
    return out.reshape(5 * n, 5 * n)


def _check_kernel(config, kernel):
    if kernel.periodic and not math.isclose(kernel.L, config.L, rel_tol=1e-12):
        raise KernelMismatchError(f"kernel period {kernel.L} differs from configuration {config.L}")


def _fixed_point(alpha, M, e, tol, max_iter, relaxation):
    n = len(alpha)
    a = np.repeat(alpha, 5)
    rhs = np.tile(e, n)
    s = np.zeros(5 * n)
    omega = float(relaxation)
    prev = np.inf
    bad = 0
    for it in range(1, max_iter + 1):
        update = a * (rhs + M @ s) - s
        res = float(np.linalg.norm(update.reshape(n, 5), axis=1).max())
        if res <= tol:
            return s, it, res
        s = s + omega * update
        if not np.isfinite(res):
            break
        if res >= prev:
            bad += 1
            omega *= 0.5
            if bad >= NONCONTRACTION_LIMIT:
                break
        else:
            bad = 0
        prev = res
    raise NonConvergentError(
        f"fixed-point iteration stopped contracting (residual {res:.3e} after {it} iterations); "
        "configuration is likely outside the dilute validity envelope"
    )


def solve_dipole_system(alpha, M, e, tol=1e-12, max_iter=500, method="auto", relaxation=1.0):
    """Solve ``s = alpha (e + M s)`` for stacked stresslet coordinates.

    Returns ``(s, iterations, residual, method_used)``.
    """
    n = len(alpha)
    if n == 0:
        return np.zeros(0), 0, 0.0, "empty"
    if method == "auto":
        method = "direct" if 5 * n <= DIRECT_SOLVE_LIMIT else "iterate"
    if method in ("direct", "both"):
        if 5 * n > DIRECT_SOLVE_LIMIT:
            raise ConfigError(f"direct solve limited to {DIRECT_SOLVE_LIMIT} unknowns")
        A = np.diag(np.repeat(1.0 / alpha, 5)) - M
        s_direct = solve(A, np.tile(e, n), assume_a="sym")
        if method == "direct":
            return s_direct, 0, 0.0, "direct"
        s_iter, it, res = _fixed_point(alpha, M, e, 0.1 * tol, max_iter, relaxation)
        gap = float(np.abs(s_iter - s_direct).max())
        if gap > tol:
            raise NumericalError(f"direct and iterative solutions differ by {gap:.3e} > {tol:.1e}")
        return s_direct, it, res, "both"
    if method == "iterate":
        s, it, res = _fixed_point(alpha, M, e, tol, max_iter, relaxation)
        return s, it, res, "iterate"
    raise ConfigError(f"unknown solve method {method!r}")


def solve_periodic_dipole(
    config, E, kernel, tol=1e-12, max_iter=500, method="auto", relaxation=1.0, matrix=None
):
    """Stresslet-level solution of the periodized corrector problem.

    Parameters
    ----------
    config : PeriodicConfiguration
    E : array_like, shape (3, 3)
        Imposed strain.
    kernel : StrainKernel
        Periodic kernel built for ``config.L``; a free-space kernel gives the
        free-space dipole model of the same centres.
    tol : float
        Stresslet tolerance in ``(1e-14, 1e-4)``.
    method : {"auto", "direct", "iterate", "both"}
        ``"auto"`` solves directly up to :data:`DIRECT_SOLVE_LIMIT` unknowns;
        ``"both"`` runs both and checks their agreement.
    matrix : ndarray, optional
        Precomputed :func:`interaction_matrix` for ``config``.

    Raises
    ------
    KernelMismatchError, NonConvergentError
    """
    E = check_strain(E)
    if not 1e-14 < tol < 1e-4:
        raise ConfigError("tolerance must lie in (1e-14, 1e-4)")
    _check_kernel(config, kernel)
    alpha = response_coefficients(config.radii, config.d)
    M = interaction_matrix(config, kernel) if matrix is None else matrix
    s, it, res, used = solve_dipole_system(
        alpha, M, to_coords(E), tol, max_iter, method, relaxation
    )
    s = s.reshape(-1, 5)
    S = from_coords(s)
    A = from_coords(s / alpha[:, None]) if len(alpha) else np.zeros((0, 3, 3))
    return DipoleSolution(
        config=config,
        E=E,
        stresslets=S,
        ambient=A,
        iterations=it,
        residual=res,
        flavor="periodic" if kernel.periodic else "free-dipole",
        kernel=kernel,
        centers=config.centers,
        radii=config.radii,
        method=used,
    )


def reading_from_stresslets(s, e, L, d=3):
    """``|E|^2 + (2 L^d)^{-1} sum_n S_n:E`` from stresslet coordinates (compensated sum)."""
    base = float(np.dot(e, e))
    contrib = math.fsum(np.asarray(s).reshape(-1, 5) @ e) if len(s) else 0.0
    return base + contrib / (2.0 * L**d)


def effective_viscosity_reading(solution):
    """Periodized effective-viscosity reading ``E:B_L E`` of a dipole solution."""
    if solution.flavor != "periodic":
        raise ConfigError("viscosity readings need a periodic solution")
    cfg = solution.config
    e = to_coords(solution.E)
    value = reading_from_stresslets(to_coords(solution.stresslets), e, cfg.L, cfg.d)
    return ViscosityReading(
        value=value,
        excess=value - float(np.dot(e, e)),
        iterations=solution.iterations,
        residual=solution.residual,
        n_particles=len(cfg),
    )


def assemble_viscosity_tensor(config, kernel, tol=1e-12, method="auto"):
    """Matrix ``[E_a:B_L E_b]`` over the orthonormal strain basis."""
    from .strain import strain_basis

    basis = strain_basis(config.d)
    M = interaction_matrix(config, kernel)
    out = np.empty((len(basis), len(basis)))
    for b, Eb in enumerate(basis):
        sol = solve_periodic_dipole(config, Eb, kernel, tol=tol, method=method, matrix=M)
        s = to_coords(sol.stresslets)
        for a in range(len(basis)):
            ea = np.zeros(len(basis))
            ea[a] = 1.0
            out[a, b] = float(a == b) + math.fsum(s @ ea) / (2.0 * config.L**config.d)
    return out


# -- free-space reflections -------------------------------------------------------


def _sphere_arrays(spheres):
    if isinstance(spheres, PeriodicConfiguration):
        return spheres.centers, spheres.radii
    spheres = list(spheres)
    centers = np.array([np.asarray(s.center, float) for s in spheres]).reshape(-1, 3)
    radii = np.array([float(s.radius) for s in spheres])
    return centers, radii


def induced_strain_exact(A, center, radius, at):
    """Strain of the exact single-sphere disturbance for ambient ``A`` at points ``at``."""
    y = (np.asarray(at, float) - center) / radius
    return sym(single_sphere_gradient(y, A))


def solve_freespace_reflections(spheres, E, order=50, tol=1e-12):
    """Method of reflections with the exact single-sphere fields, in free space.

    Each sphere responds with ``S = alpha A`` to the strain ``A`` at its centre,
    which is the imposed strain plus the exact disturbance strains of the other
    spheres (responding to their own previous ambient strains). Iterates
    ``order`` times or until the stresslet change falls below ``tol``.

    Raises
    ------
    OverlapError
        For overlapping spheres.
    NonConvergentError
        If the stresslet change keeps growing.
    """
    E = check_strain(E)
    if order < 1:
        raise ConfigError("reflection order must be >= 1")
    centers, radii = _sphere_arrays(spheres)
    n = len(centers)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(centers[i] - centers[j]) < radii[i] + radii[j]:
                raise OverlapError(f"spheres {i} and {j} overlap")
    alpha = response_coefficients(radii)
    A = np.broadcast_to(E, (n, 3, 3)).copy()
    S = alpha[:, None, None] * A
    iterations, change, growth = 1, 0.0, 0
    while iterations < order and n > 1:
        A_new = np.broadcast_to(E, (n, 3, 3)).copy()
        for i in range(n):
            for j in range(n):
                if i != j:
                    A_new[i] += induced_strain_exact(A[j], centers[j], radii[j], centers[i])
        S_new = alpha[:, None, None] * A_new
        new_change = float(np.abs(S_new - S).max())
        growth = growth + 1 if new_change > change and iterations > 1 else 0
        if growth >= 5 or not np.isfinite(new_change):
            raise NonConvergentError("reflection iteration diverges")
        A, S, change = A_new, S_new, new_change
        iterations += 1
        if change < tol:
            break
    return DipoleSolution(
        config=None,
        E=E,
        stresslets=S,
        ambient=A,
        iterations=iterations,
        residual=change,
        flavor="free-reflection",
        centers=centers,
        radii=radii,
        method="reflection",
    )


def disturbance_strain(solution, at):
    """Total disturbance strain of all particles at a point outside the spheres.

    Free-space reflection solutions use the exact single-sphere fields; dipole
    solutions use the (periodic or free) point-stresslet kernel.
    """
    at = np.asarray(at, dtype=float)
    centers, radii = solution.centers, solution.radii
    out = np.zeros((3, 3))
    if centers is None or len(centers) == 0:
        return out
    rel = at - centers
    if solution.flavor == "periodic":
        rel = wrap(rel, solution.config.L)
    if np.any(np.linalg.norm(rel, axis=1) < radii):
        raise InsideInclusionError("evaluation point lies inside an inclusion")
    if solution.flavor == "free-reflection":
        for A, r, y in zip(solution.ambient, radii, rel):
            out += sym(single_sphere_gradient(y / r, A))
        return out
    s = to_coords(solution.stresslets)
    coords = np.einsum("nab,nb->a", solution.kernel.matrix(rel), s)
    return from_coords(coords)
