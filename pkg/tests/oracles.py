"""Independent reference implementations used only by the tests."""

import numpy as np


def torus_distances(points, L):
    diff = points[:, None, :] - points[None, :, :]
    diff -= L * np.round(diff / L)
    return np.linalg.norm(diff, axis=-1)


def matern3_bruteforce(points, marks, L, r_hc):
    """Matern-III retention by iterating the defining rule to its fixed point.

    Status starts undecided; a point becomes retained once every conflicting
    point with a smaller mark is rejected, and rejected once any of them is
    retained. Dense distances, no ordering tricks.
    """
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=bool)
    conflict = torus_distances(points, L) < 2 * r_hc
    np.fill_diagonal(conflict, False)
    lower = conflict & (marks[None, :] < marks[:, None])
    status = np.zeros(n, dtype=int)  # 0 undecided, 1 kept, -1 rejected
    while (status == 0).any():
        before = status.copy()
        kept_below = (lower & (status == 1)[None, :]).any(axis=1)
        all_rejected = (~lower | (status == -1)[None, :]).all(axis=1)
        undecided = status == 0
        status[undecided & kept_below] = -1
        status[undecided & ~kept_below & all_rejected] = 1
        if np.array_equal(before, status):
            raise RuntimeError("fixed point iteration stalled")
    return status == 1


def sample_matern3_oracle(lam, r_hc, L, rng, d=3):
    n = rng.poisson(lam * L**d)
    pts = rng.uniform(-L / 2, L / 2, size=(n, d))
    marks = rng.random(n)
    return pts[matern3_bruteforce(pts, marks, L, r_hc)]


def pair_count_in_shell(points, L, r_lo, r_hi):
    """Unordered pairs with torus distance in ``[r_lo, r_hi)``."""
    D = torus_distances(points, L)
    iu = np.triu_indices(len(points), k=1)
    d = D[iu]
    return int(np.count_nonzero((d >= r_lo) & (d < r_hi)))
