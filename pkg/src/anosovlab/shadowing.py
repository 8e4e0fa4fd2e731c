"""Topological conjugacy h with h o f1 = f2 o h, computed by shadowing.

The f1-orbit of x over times -N..N is a pseudo-orbit for f2; the genuine
f2-orbit tracking it is found by the sequence-space solver and h(x) is its
time-zero point. Everything stays in lifted coordinates, so h is returned
as the lift close to the identity.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import (InvalidInput, Inconclusive, NoConvergence, ShadowingFailed,
                     WindowTooSmall)
from .manifolds import chart_s, chart_u, stable_coords
from .sequence import default_window, lattice_shifts, solve_segment
from .torus_maps import (PerturbedMap, backward_orbit, coerce_points, forward_orbit,
                         torus_distance)


class ConjugacyMap:
    """Shadowing conjugacy between two perturbations of the same L.

    ``window`` is the starting half-length N; it grows until the time-zero
    point moves less than ``tol`` between N and a longer window.
    """

    def __init__(self, f1: PerturbedMap, f2: PerturbedMap, window: int | None = None,
                 tol: float = 1e-12, max_window: int = 4000, cache: bool = False):
        if f1.linear != f2.linear:
            raise InvalidInput("conjugacy needs both maps to share the linear part")
        self.f1, self.f2 = f1, f2
        self.window = default_window(f1, 14) if window is None else int(window)
        self.tol = float(tol)
        self.max_window = int(max_window)
        self.cache_enabled = cache
        self._cache: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        self.window_used = self.window

    def _solve(self, X: np.ndarray, N: int) -> np.ndarray:
        past = backward_orbit(self.f1, X, N)
        future = forward_orbit(self.f1, X, N)
        ref = np.concatenate([past[:, :-1], future], axis=1)
        shifts = lattice_shifts(self.f1, ref)
        try:
            sol = solve_segment(self.f2, ref, shifts=shifts)
        except NoConvergence as exc:
            raise ShadowingFailed(str(exc)) from None
        return sol.z[:, N]

    def images(self, X) -> np.ndarray:
        X = coerce_points(X, self.f1.dim)
        lead = X.shape[:-1]
        X = X.reshape(-1, self.f1.dim)
        if self.f1 is self.f2:
            return X.reshape(lead + (self.f1.dim,)).copy()
        if self.cache_enabled:
            keys = [tuple(p) for p in X]
            with self._lock:
                hit = [self._cache.get(k) for k in keys]
            todo = [i for i, v in enumerate(hit) if v is None]
            if todo:
                fresh = self._images(X[todo])
                with self._lock:
                    for i, y in zip(todo, fresh):
                        self._cache[keys[i]] = y
                        hit[i] = y
            return np.array(hit).reshape(lead + (self.f1.dim,))
        return self._images(X).reshape(lead + (self.f1.dim,))

    __call__ = images

    def _images(self, X: np.ndarray) -> np.ndarray:
        N = self.window
        y = self._solve(X, N)
        while True:
            N2 = N + max(10, N // 4)
            if N2 > self.max_window:
                raise WindowTooSmall(f"time-zero point still moving at window {N}")
            y2 = self._solve(X, N2)
            if np.max(np.abs(y2 - y)) < self.tol:
                self.window_used = N2
                return y2
            N, y = N2, y2

    def conjugate_point(self, x) -> np.ndarray:
        return self.images(np.asarray(x, float)[None])[0]


def linearizing_conjugacy(f: PerturbedMap, **kw) -> ConjugacyMap:
    """Conjugacy H with H o f = L o H."""
    return ConjugacyMap(f, PerturbedMap.linear_map(f.linear), **kw)


def leaf_order(f: PerturbedMap, X, H: ConjugacyMap | None = None) -> np.ndarray:
    """Stable coordinate of the linearised lift H(x).

    Constant along unstable leaves, it orders them when dim E^s = 1.
    """
    H = linearizing_conjugacy(f) if H is None else H
    return stable_coords(f, H(X))


def grid_points(d: int, grid_size: int) -> np.ndarray:
    g = (np.arange(grid_size) + 0.5) / grid_size
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)


def conjugacy_defect(q: ConjugacyMap, grid_size: int = 10, points=None) -> float:
    """sup over a grid of the torus distance between h(f1 x) and f2(h x)."""
    X = grid_points(q.f1.dim, grid_size) if points is None else coerce_points(points, q.f1.dim)
    Y = q(np.concatenate([X, q.f1.eval(X)]))
    hx, hfx = Y[: len(X)], Y[len(X):]
    return float(np.max(torus_distance(hfx, q.f2.eval_lift(hx))))


def sup_distance_to_identity(q: ConjugacyMap, grid_size: int = 10, points=None) -> float:
    X = grid_points(q.f1.dim, grid_size) if points is None else coerce_points(points, q.f1.dim)
    return float(np.max(torus_distance(q(X), X)))


def holder_exponent_estimate(q: ConjugacyMap, base, direction: str, scales,
                             noise_floor: float = 1e-12) -> float:
    """Slope of log|h(x_s) - h(base)| against log s along a leaf of f1.

    x_s is the point of the chosen leaf of base at leaf coordinate s
    (first coordinate direction for unstable planes).
    """
    scales = np.asarray(scales, float)
    if np.any(scales <= 0) or np.log10(scales.max() / scales.min()) < 2 - 1e-12:
        raise InvalidInput("scales must be positive and span at least two decades")
    base = coerce_points(base, q.f1.dim).reshape(q.f1.dim)
    if direction == "stable":
        k = q.f1.dim_stable
        pts = chart_s(q.f1, np.broadcast_to(base, (len(scales), q.f1.dim)),
                      scales[:, None] * np.eye(k)[0])
    elif direction == "unstable":
        k = q.f1.dim_unstable
        pts = chart_u(q.f1, np.broadcast_to(base, (len(scales), q.f1.dim)),
                      scales[:, None] * np.eye(k)[0])
    else:
        raise InvalidInput("direction must be 'stable' or 'unstable'")
    Y = q(np.concatenate([base[None], pts]))
    disp = np.linalg.norm(Y[1:] - Y[0], axis=-1)
    keep = disp > noise_floor
    if keep.sum() < 2:
        raise Inconclusive("displacements below the noise floor")
    slope, _ = np.polyfit(np.log(scales[keep]), np.log(disp[keep]), 1)
    return float(slope)


def catalog_pairing_defect(q: ConjugacyMap, cat1, cat2) -> dict:
    """Torus distance between h(base) and the orbit with the same index in cat2.

    Index-exact pairing holds when every key of cat1 is present in cat2 and
    h maps each base point onto its partner.
    """
    k1, k2 = cat1.by_key(), cat2.by_key()
    keys = sorted(k1)
    missing = [k for k in keys if k not in k2]
    common = [k for k in keys if k in k2]
    if not common:
        return {"paired": 0, "missing": len(missing), "max_distance": None}
    X = np.array([k1[k].base for k in common])
    Y = np.array([k2[k].base for k in common])
    dist = torus_distance(q(X), Y)
    return {"paired": len(common), "missing": len(missing), "max_distance": float(np.max(dist))}
