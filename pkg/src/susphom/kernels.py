"""Closed-form Stokes objects for spheres and point stresslets.

Single-sphere fields (unit sphere, unit ambient strain), the free-space Stokeslet,
the strain propagation kernel obtained from its second derivatives, and an Ewald
evaluator for the zero-mean periodic version of that kernel.

Strain-kernel contractions are written through two radial potentials. With
``G_jl = delta_jl Phi + d_j d_l Psi``, ``Phi = 1/(4 pi r)``, ``Psi = -r/(8 pi)`` and
``D = (1/r) d/dr``::

    E:G(x):E' = c0(r) E:E' + c1(r) (Ex).(E'x) + c2(r) (x.Ex)(x.E'x)

with ``c0 = D Phi + 2 D^2 Psi``, ``c1 = D^2 Phi + 4 D^3 Psi`` and ``c2 = D^4 Psi``.
The Ewald split uses the weight ``w(k) = (1 + k^2/4xi^2) exp(-k^2/4xi^2)``, whose
real-space complement decays like a Gaussian.
"""

from dataclasses import dataclass, field
from math import gamma

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

from .errors import AccuracyNotMetError, ConfigError
from .strain import check_strain, strain_basis

SQRT_PI = np.sqrt(np.pi)


def ball_volume(d=3, r=1.0):
    """Volume of the ``d``-ball of radius ``r``."""
    return np.pi ** (d / 2) / gamma(d / 2 + 1) * r**d


def stresslet_response(d=3, radius=1.0):
    """Stresslet per unit ambient strain of an isolated sphere, ``(d+2)|B_r|``."""
    return (d + 2) * ball_volume(d, radius)


def _require_3d(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ConfigError("this kernel is implemented for d = 3 only")
    return x


def _outside_unit_ball(x):
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < 1.0 - 1e-12):
        raise ConfigError("point lies inside the unit sphere")
    return r


# -- single sphere ---------------------------------------------------------------


def single_sphere_velocity(x, E):
    """Exterior velocity disturbance of a rigid unit sphere in ambient strain ``E``.

    Parameters
    ----------
    x : array_like, shape (..., 3)
        Evaluation points with ``|x| >= 1``.
    E : array_like, shape (3, 3)
        Symmetric trace-free ambient strain.

    Returns
    -------
    ndarray, shape (..., 3)
        Equals ``-E x`` on the sphere and decays like ``|x|^{-2}``.
    """
    x = _require_3d(x)
    E = check_strain(E)
    r = _outside_unit_ball(x)[..., None]
    n = 3
    Ex = x @ E.T
    q = np.sum(x * Ex, axis=-1, keepdims=True)
    a = 0.5 * (n + 2) * (r ** -(n + 4) - r ** -(n + 2))
    return a * q * x - Ex * r ** -(n + 2)


def single_sphere_gradient(x, E):
    """Velocity gradient of :func:`single_sphere_velocity`.

    Returns ``grad[..., i, j] = d_j psi_i``, differentiated analytically.
    """
    x = _require_3d(x)
    E = check_strain(E)
    r = _outside_unit_ball(x)[..., None, None]
    n = 3
    Ex = x @ E.T
    q = np.sum(x * Ex, axis=-1)[..., None, None]
    a = 0.5 * (n + 2) * (r ** -(n + 4) - r ** -(n + 2))
    da = 0.5 * (n + 2) ** 2 * r ** -(n + 3) - 0.5 * (n + 2) * (n + 4) * r ** -(n + 5)
    xi = x[..., :, None]
    xj = x[..., None, :]
    Exi = Ex[..., :, None]
    Exj = Ex[..., None, :]
    eye = np.eye(3)
    return (
        da / r * q * xi * xj
        + a * (2.0 * Exj * xi + q * eye)
        - E * r ** -(n + 2)
        + (n + 2) * r ** -(n + 4) * Exi * xj
    )


def single_sphere_pressure(x, E):
    """Pressure of the single-sphere disturbance, ``-(d+2)(x.Ex)/|x|^{d+2}``."""
    x = _require_3d(x)
    E = check_strain(E)
    r = _outside_unit_ball(x)
    q = np.einsum("...i,ij,...j->...", x, E, x)
    return -5.0 * q * r**-5


def single_sphere_traction(u, E):
    """Traction ``sigma(u) u`` on the unit sphere at the outward normal ``u``.

    ``sigma = 2 D(psi + E x) - Sigma Id`` from the exterior analytic derivatives.
    """
    u = _require_3d(u)
    if np.any(np.abs(np.linalg.norm(u, axis=-1) - 1.0) > 1e-10):
        raise ConfigError("traction needs unit normals")
    E = check_strain(E)
    grad = single_sphere_gradient(u, E)
    strain = 0.5 * (grad + np.swapaxes(grad, -1, -2)) + E
    p = single_sphere_pressure(u, E)
    sigma = 2.0 * strain - p[..., None, None] * np.eye(3)
    return np.einsum("...ij,...j->...i", sigma, u)


def einstein_coefficient(d=3, mean_rd=1.0):
    """Scalar ``b`` with first-order coefficient ``b Id``: ``(d+2)/2 |B_1| E[r^d]``."""
    if d not in (2, 3):
        raise ConfigError("Einstein coefficient supports d in {2, 3}")
    if not 0.0 < mean_rd <= 1.0:
        raise ConfigError("mean of r^d must lie in (0, 1]")
    return 0.5 * (d + 2) * ball_volume(d) * mean_rd


def einstein_tensor(d=3, mean_rd=1.0):
    """First-order viscosity coefficient as a matrix on strain coordinates.

    Returns
    -------
    ndarray, shape (m, m)
        ``(d+2)/2 |B_1| E[r^d]`` times the identity, ``m = d(d+1)/2 - 1``.
    """
    m = d * (d + 1) // 2 - 1
    return einstein_coefficient(d, mean_rd) * np.eye(m)


# -- Stokeslet and strain kernel ------------------------------------------------


def _nonzero(z):
    z = _require_3d(z)
    r = np.linalg.norm(z, axis=-1)
    if np.any(r == 0.0):
        raise ConfigError("kernel is singular at z = 0")
    return z, r


def stokeslet(z):
    """Free-space Stokeslet ``(1/(8 pi |z|)) (Id + z z^T/|z|^2)``."""
    z, r = _nonzero(z)
    zz = z[..., :, None] * z[..., None, :] / (r**2)[..., None, None]
    return (np.eye(3) + zz) / (8.0 * np.pi * r)[..., None, None]


def _free_coeffs(r):
    c0 = np.zeros_like(r)
    c1 = -3.0 / (4.0 * np.pi * r**5)
    c2 = 15.0 / (8.0 * np.pi * r**7)
    return c0, c1, c2


def _ewald_coeffs(r, xi):
    """Radial coefficients of the real-space (short-range) part of the kernel."""
    g = np.exp(-((xi * r) ** 2))
    r2 = r * r
    b0 = erfc(xi * r) / r
    b1 = (b0 + 2.0 * xi * g / SQRT_PI) / r2
    b2 = (3.0 * b1 + 4.0 * xi**3 * g / SQRT_PI) / r2
    b3 = (5.0 * b2 + 8.0 * xi**5 * g / SQRT_PI) / r2
    c0 = xi**3 * g / (2.0 * np.pi * SQRT_PI)
    c1 = -b2 / (4.0 * np.pi) - xi**5 * g / (np.pi * SQRT_PI)
    c2 = b3 / (8.0 * np.pi)
    return c0, c1, c2


def _assemble(x, c0, c1, c2):
    """Basis matrix ``M_ab = E_a:G:E_b`` from radial coefficients, shape (..., m, m)."""
    B = strain_basis(3)
    Ex = np.einsum("aij,...j->...ai", B, x)
    q = np.einsum("...i,...ai->...a", x, Ex)
    dot = np.einsum("...ai,...bi->...ab", Ex, Ex)
    m = B.shape[0]
    return (
        c0[..., None, None] * np.eye(m)
        + c1[..., None, None] * dot
        + c2[..., None, None] * q[..., :, None] * q[..., None, :]
    )


def strain_kernel_matrix(z):
    """Free-space strain kernel on strain coordinates, ``M_ab(z) = E_a:G(z):E_b``.

    The same matrix maps a point stresslet (coordinates) to the symmetric
    velocity gradient it induces at offset ``z``.
    """
    z, r = _nonzero(z)
    return _assemble(z, *_free_coeffs(r))


def strain_kernel(z, E, Eprime):
    """Contraction ``E:G(z):E'`` of the free-space strain kernel.

    ``G_{jk,lm}(z)`` is the second derivative ``d_k d_m`` of the Stokeslet
    component ``G_jl``.
    """
    z, r = _nonzero(z)
    E = check_strain(E)
    Ep = check_strain(Eprime)
    c0, c1, c2 = _free_coeffs(r)
    Ez = z @ E.T
    Epz = z @ Ep.T
    return (
        c0 * np.sum(E * Ep)
        + c1 * np.sum(Ez * Epz, axis=-1)
        + c2 * np.sum(z * Ez, axis=-1) * np.sum(z * Epz, axis=-1)
    )


def kernel_point_term(d=3):
    """Weight of the point mass at the origin in the strain kernel, on ``E:E'``.

    As a distribution ``E:G:E' = p.v.(E:G:E') + w (E:E') delta_0`` with
    ``w = -1/(d+2)``, the angular mean of the Fourier symbol. Ball-excised
    principal values drop this term.
    """
    return -1.0 / (d + 2)


def bg_integrand_sphere(z, E):
    """Pair integrand for spheres: ``(d+2)^2 |B| [(d+2)/2 (z.Ez)^2/|z|^{d+4} - |Ez|^2/|z|^{d+2}]``."""
    z, r = _nonzero(z)
    E = check_strain(E)
    d = 3
    Ez = z @ E.T
    q = np.sum(z * Ez, axis=-1)
    return (d + 2) ** 2 * ball_volume(d) * (
        0.5 * (d + 2) * q**2 / r ** (d + 4) - np.sum(Ez * Ez, axis=-1) / r ** (d + 2)
    )


# -- periodic evaluator -----------------------------------------------------------


def _tail_moment(x):
    """``int_x^inf t^2 (1 + t^2) exp(-t^2) dt`` in closed form."""
    g = np.exp(-x * x)
    i2 = 0.5 * x * g + 0.25 * SQRT_PI * erfc(x)
    i4 = (0.5 * x**3 + 0.75 * x) * g + 0.375 * SQRT_PI * erfc(x)
    return i2 + i4


def _cutoff(prefactor, target):
    """Smallest ``x`` with ``prefactor * tail_moment(x) <= target``."""
    f = lambda x: prefactor * _tail_moment(x) - target
    return brentq(f, 0.1, 30.0)


@dataclass(frozen=True, eq=False)
class StrainKernel:
    """Evaluator of the strain kernel, periodic with period ``L`` or free (``L = inf``).

    Values are ``E_a:G_L(z):E_b`` on the orthonormal strain basis. The periodic
    kernel is the lattice sum with the ``k = 0`` mode removed, so it has zero
    mean over the period cell as a distribution. That distribution carries the
    point term of :func:`kernel_point_term` at each lattice point, so the
    ball-excised principal value of the cell integral is ``Id/(d+2)``.
    Build with :func:`build_periodic_strain_kernel` or :func:`free_strain_kernel`.

    Attributes
    ----------
    L : float
        Period, ``inf`` for free space.
    accuracy : float
        Target absolute accuracy of ``L^3 * value`` (the kernel in units of
        its natural scale ``L^{-3}``).
    xi : float
        Ewald splitting parameter.
    r_cut, k_cut : float
        Real- and Fourier-space cutoffs.
    tabulation : None
        Reserved; evaluations are always direct sums.
    """

    L: float
    accuracy: float = 0.0
    xi: float = 0.0
    r_cut: float = np.inf
    k_cut: float = 0.0
    images: np.ndarray = field(default=None, repr=False)
    kvecs: np.ndarray = field(default=None, repr=False)
    kcoef: np.ndarray = field(default=None, repr=False)
    self_matrix: np.ndarray = field(default=None, repr=False)
    tabulation: object = None

    @property
    def periodic(self):
        return np.isfinite(self.L)

    def metadata(self):
        """Kernel settings for result lineage."""
        return {
            "L": float(self.L) if self.periodic else "inf",
            "accuracy": float(self.accuracy),
            "xi": float(self.xi),
            "r_cut": float(self.r_cut) if self.periodic else "inf",
            "k_cut": float(self.k_cut),
            "n_images": 0 if self.images is None else int(len(self.images)),
            "n_wavevectors": 0 if self.kvecs is None else int(2 * len(self.kvecs)),
        }

    def wrap(self, z):
        """Minimum-image representative of displacements."""
        z = np.asarray(z, dtype=float)
        if not self.periodic:
            return z
        return z - self.L * np.round(z / self.L)

    def matrix(self, z, chunk=4096):
        """Kernel matrices at displacements ``z`` (shape (..., 3)) -> (..., 5, 5)."""
        z = _require_3d(z)
        if not self.periodic:
            return strain_kernel_matrix(z)
        shape = z.shape[:-1]
        flat = self.wrap(z).reshape(-1, 3)
        out = np.empty((flat.shape[0], 5, 5))
        for s in range(0, flat.shape[0], chunk):
            out[s : s + chunk] = self._periodic_block(flat[s : s + chunk])
        return out.reshape(shape + (5, 5))

    def _periodic_block(self, x):
        # real-space image sum
        y = x[:, None, :] + self.images[None, :, :]
        r = np.linalg.norm(y, axis=-1)
        if np.any(r == 0.0):
            raise ConfigError("periodic kernel is singular at lattice points")
        real = _assemble(y, *_ewald_coeffs(r, self.xi)).sum(axis=1)
        # Fourier sum over half of the wavevectors (cos is even)
        phase = np.cos(x @ self.kvecs.T)
        fourier = (phase @ self.kcoef.reshape(len(self.kvecs), -1)).reshape(-1, 5, 5)
        return real + fourier

    def contract(self, z, E, Eprime):
        """``E:G_L(z):E'`` for strain matrices ``E``, ``E'``."""
        B = strain_basis(3)
        a = np.einsum("ij,aij->a", check_strain(E), B)
        b = np.einsum("ij,aij->a", check_strain(Eprime), B)
        return np.einsum("a,...ab,b->...", a, self.matrix(z), b)

    def regularized_self(self):
        """``lim_{z->0} (G_L - G)(z)`` on strain coordinates (zero in free space)."""
        if self.self_matrix is None:
            return np.zeros((5, 5))
        return self.self_matrix


def free_strain_kernel():
    """Free-space evaluator with the periodic interface (no self term)."""
    return StrainKernel(L=np.inf)


def _lattice(radius, L):
    nmax = int(np.ceil(radius / L))
    rng = np.arange(-nmax, nmax + 1)
    n = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    keep = np.linalg.norm(n, axis=1) * L <= radius
    return n[keep].astype(float)


def _fourier_coefficients(kvecs, xi, L):
    """Per-wavevector kernel matrices, weighted, for the half-space sum."""
    B = strain_basis(3)
    k2 = np.sum(kvecs**2, axis=1)
    Bk = np.einsum("aij,kj->kai", B, kvecs)
    q = np.einsum("ki,kai->ka", kvecs, Bk)
    dot = np.einsum("kai,kbi->kab", Bk, Bk)
    c = -dot / k2[:, None, None] + q[:, :, None] * q[:, None, :] / (k2**2)[:, None, None]
    u = k2 / (4.0 * xi**2)
    w = (1.0 + u) * np.exp(-u)
    # factor 2: each retained k stands for the pair {k, -k}
    return 2.0 * w[:, None, None] * c / L**3


def _build(L, accuracy, xi):
    target = accuracy / 10.0
    # real-space tail: 4 pi * 10 * tail_moment(xi r_cut) in units of L^-3
    x_r = _cutoff(40.0 * np.pi, target)
    r_cut = x_r / xi
    # Fourier tail: (2 xi L)^3/(2 pi)^3 * 4 pi * tail_moment(k_cut / 2 xi)
    pref = (xi * L / np.pi) ** 3 * 4.0 * np.pi
    x_k = _cutoff(pref, target)
    k_cut = 2.0 * xi * x_k

    images = _lattice(r_cut + L * np.sqrt(3.0) / 2.0, L) * L
    m = _lattice(k_cut * L / (2.0 * np.pi), 1.0)
    # keep one of each +-k pair: first nonzero component positive
    first = np.where(m[:, 0] != 0, m[:, 0], np.where(m[:, 1] != 0, m[:, 1], m[:, 2]))
    m = m[first > 0]
    kvecs = 2.0 * np.pi / L * m
    kcoef = _fourier_coefficients(kvecs, xi, L)

    # regularized self term: nonzero images + analytic limit of the smooth part
    far = images[np.linalg.norm(images, axis=1) > 0]
    r = np.linalg.norm(far, axis=1)
    self_real = _assemble(far, *_ewald_coeffs(r, xi)).sum(axis=0)
    self_local = xi**3 / (2.0 * np.pi * SQRT_PI) * np.eye(5)
    self_fourier = kcoef.sum(axis=0)
    self_matrix = self_real + self_local + self_fourier
    return StrainKernel(
        L=float(L),
        accuracy=float(accuracy),
        xi=float(xi),
        r_cut=float(r_cut),
        k_cut=float(k_cut),
        images=images,
        kvecs=kvecs,
        kcoef=kcoef,
        self_matrix=self_matrix,
    )


def build_periodic_strain_kernel(L, accuracy=1e-10, xi=None, check=True):
    """Ewald evaluator for the zero-mean periodic strain kernel.

    Parameters
    ----------
    L : float
        Period of the cubic lattice.
    accuracy : float
        Target absolute accuracy of ``L^3 * E_a:G_L:E_b``; in ``(1e-14, 1e-4)``.
    xi : float, optional
        Splitting parameter, default ``3 sqrt(pi)/L`` (few real-space images).
    check : bool
        Cross-check the default split against real-dominant and
        Fourier-dominant splits at ``|z| = L/4``.

    Raises
    ------
    AccuracyNotMetError
        If the cross-check disagrees by more than ``accuracy``.
    """
    L = float(L)
    if not L > 0 or not np.isfinite(L):
        raise ConfigError("period must be positive and finite")
    if not 1e-14 < accuracy < 1e-4:
        raise ConfigError("accuracy must lie in (1e-14, 1e-4)")
    if xi is None:
        xi = 3.0 * SQRT_PI / L
    kernel = _build(L, accuracy, float(xi))
    if check:
        probe = L / 4.0 * np.array([[1.0, 0.0, 0.0], [0.6, 0.0, 0.8], [0.48, 0.6, 0.64]])
        ref = kernel.matrix(probe)
        for factor in (0.5, 2.0):
            alt = _build(L, accuracy, float(xi) * factor).matrix(probe)
            err = np.abs(alt - ref).max() * L**3
            if err > accuracy:
                raise AccuracyNotMetError(
                    f"Ewald cross-check at |z| = L/4 differs by {err:.3e} "
                    f"(L^-3 units), above accuracy {accuracy:.1e}"
                )
    return kernel
