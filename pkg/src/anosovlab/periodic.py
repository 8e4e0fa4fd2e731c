"""Periodic orbits of perturbed maps and their Jacobian data.

Seeds are the exact rational solutions of (L^k - I) x = 0 mod Z^d, read off
a Smith normal form; each seed is continued to the perturbed map by Newton
on F^k(x) - x - m with the lattice class m frozen from the linear model.
Orbits are indexed by (k, Smith coordinates) so that the same index picks
out h-paired orbits of two perturbations of the same L.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContinuationFailed, Degenerate, InvalidInput
from .spectral import IntegerAutomorphism, as_automorphism
from .torus_maps import PerturbedMap, mod1, unstable_frames_along, stable_frames_along


# ---------------------------------------------------------------- Smith form

def smith_normal_form(A) -> tuple[list[list[int]], list[list[int]], list[list[int]]]:
    """Return (D, U, V) with U A V = D diagonal, U and V unimodular.

    Plain elimination with gcd pivoting on Python ints; fine for the small
    matrices met here.
    """
    D = [list(map(int, r)) for r in A]
    n, m = len(D), len(D[0])
    U = [[int(i == j) for j in range(n)] for i in range(n)]
    V = [[int(i == j) for j in range(m)] for i in range(m)]

    def swap_rows(M, i, j):
        M[i], M[j] = M[j], M[i]

    def swap_cols(M, i, j):
        for r in M:
            r[i], r[j] = r[j], r[i]

    def add_row(M, src, dst, c):   # row_dst += c * row_src
        M[dst] = [a + c * b for a, b in zip(M[dst], M[src])]

    def add_col(M, src, dst, c):   # col_dst += c * col_src
        for r in M:
            r[dst] += c * r[src]

    for t in range(min(n, m)):
        while True:
            entries = [(abs(D[i][j]), i, j) for i in range(t, n) for j in range(t, m) if D[i][j]]
            if not entries:
                return D, U, V
            _, pi, pj = min(entries)
            swap_rows(D, t, pi), swap_rows(U, t, pi)
            swap_cols(D, t, pj), swap_cols(V, t, pj)
            done = True
            for i in range(t + 1, n):
                q = D[i][t] // D[t][t]
                if q:
                    add_row(D, t, i, -q), add_row(U, t, i, -q)
                if D[i][t]:
                    done = False
            for j in range(t + 1, m):
                q = D[t][j] // D[t][t]
                if q:
                    add_col(D, t, j, -q), add_col(V, t, j, -q)
                if D[t][j]:
                    done = False
            if not done:
                continue
            # divisibility condition d_t | remaining entries
            bad = next(((i, j) for i in range(t + 1, n) for j in range(t + 1, m)
                        if D[i][j] % D[t][t]), None)
            if bad is None:
                break
            add_row(D, bad[0], t, 1), add_row(U, bad[0], t, 1)
        if D[t][t] < 0:
            D[t] = [-v for v in D[t]]
            U[t] = [-v for v in U[t]]
    return D, U, V


def _matvec_frac(M, v):
    return [sum(Fraction(a) * b for a, b in zip(row, v)) for row in M]


@dataclass(frozen=True)
class LinearSeed:
    """Exact rational point x with (L^k - I) x in Z^d."""

    k: int
    index: tuple[int, ...]          # Smith coordinates j_i, 0 <= j_i < d_i
    coords: tuple[Fraction, ...]    # in [0, 1)

    @property
    def array(self) -> np.ndarray:
        return np.array([float(c) for c in self.coords])


def linear_fixed_points(L, k: int) -> list[LinearSeed]:
    """All solutions of (L^k - I) x = 0 mod Z^d; there are |det(L^k - I)| of them."""
    L = as_automorphism(L)
    if k < 1:
        raise InvalidInput("period must be >= 1")
    Lk = L.power(k)
    d = L.dim
    A = [[Lk[i][j] - int(i == j) for j in range(d)] for i in range(d)]
    D, U, V = smith_normal_form(A)
    diag = [D[i][i] for i in range(d)]
    if any(v == 0 for v in diag):
        raise Degenerate(f"L^{k} - I is singular")
    seeds = []
    for j in itertools.product(*[range(abs(v)) for v in diag]):
        y = [Fraction(ji, di) for ji, di in zip(j, diag)]
        x = _matvec_frac(V, y)
        x = tuple(c - (c.numerator // c.denominator) for c in x)
        seeds.append(LinearSeed(k, tuple(j), x))
    return seeds


def _apply_exact(L: IntegerAutomorphism, x):
    return [sum(Fraction(a) * b for a, b in zip(row, x)) for row in L.entries]


def minimal_period(L, x, k: int) -> int:
    """Smallest j dividing k with L^j x = x mod Z^d (exact)."""
    L = as_automorphism(L)
    for j in range(1, k + 1):
        if k % j:
            continue
        y = list(x)
        for _ in range(j):
            y = _apply_exact(L, y)
        if all((a - b).denominator == 1 for a, b in zip(y, x)):
            return j
    return k


def lattice_class(L, x, k: int) -> tuple[int, ...]:
    """m = L^k x - x for the exact seed x."""
    L = as_automorphism(L)
    y = list(x)
    for _ in range(k):
        y = _apply_exact(L, y)
    m = [a - b for a, b in zip(y, x)]
    assert all(v.denominator == 1 for v in m)
    return tuple(int(v) for v in m)


# ---------------------------------------------------------------- continuation

@dataclass
class PeriodicOrbit:
    base: np.ndarray
    period: int
    lattice: tuple[int, ...]
    residual: float
    index: tuple = ()
    seed: tuple[Fraction, ...] = ()

    @property
    def key(self) -> tuple:
        return (self.period, self.index)

    def points(self, f: PerturbedMap) -> np.ndarray:
        """Orbit points base, f(base), ..., f^{k-1}(base) (reduced after the first)."""
        pts = [self.base]
        for _ in range(self.period - 1):
            pts.append(mod1(f.eval_lift(pts[-1])))
        return np.array(pts)


def iterate_with_derivative(f: PerturbedMap, x: np.ndarray, k: int):
    """F^k(x) in the lift and D F^k(x), batched over leading axes."""
    y = np.array(x, float)
    J = np.broadcast_to(np.eye(f.dim), y.shape[:-1] + (f.dim, f.dim)).copy()
    for _ in range(k):
        J = f.derivative(y) @ J
        y = f.eval_lift(y)
    return y, J


def _continue_batch(f: PerturbedMap, X: np.ndarray, M: np.ndarray, k: int,
                    tol: float, max_iter: int):
    x = X.copy()
    y, J = iterate_with_derivative(f, x, k)
    G = y - x - M
    res = np.max(np.abs(G), axis=-1)
    I = np.eye(f.dim)
    for _ in range(max_iter):
        active = res >= tol
        if not active.any():
            break
        step = np.linalg.solve(J[active] - I, G[active][..., None])[..., 0]
        lam = np.ones(active.sum())
        xa = x[active]
        ra = res[active]
        for _ in range(30):
            trial = xa - lam[:, None] * step
            yt, Jt = iterate_with_derivative(f, trial, k)
            Gt = yt - trial - M[active]
            rt = np.max(np.abs(Gt), axis=-1)
            worse = rt > ra
            if not worse.any():
                break
            lam = np.where(worse, lam / 2, lam)
        x[active], G[active], J[active], res[active] = trial, Gt, Jt, rt
    return x, res


def continue_orbit(f: PerturbedMap, seed, k: int | None = None, tol: float = 1e-11,
                   max_iter: int = 50) -> PeriodicOrbit:
    """Newton continuation of a linear period-k seed to the perturbed map."""
    if not isinstance(seed, LinearSeed):
        raise InvalidInput("seed must be a LinearSeed from linear_fixed_points")
    orbits = continue_seeds(f, [seed], tol, max_iter)
    if isinstance(orbits[0], ContinuationFailed):
        raise orbits[0]
    return orbits[0]


def continue_seeds(f: PerturbedMap, seeds: list[LinearSeed], tol: float = 1e-11,
                   max_iter: int = 50, workers: int = 1) -> list:
    """Continue many seeds; failures are returned in place as exceptions."""
    if not seeds:
        return []
    out: list = [None] * len(seeds)
    by_k: dict[int, list[int]] = {}
    for i, s in enumerate(seeds):
        by_k.setdefault(s.k, []).append(i)

    def run(k, idx):
        X = np.array([seeds[i].array for i in idx])
        Mv = np.array([lattice_class(f.linear, seeds[i].coords, k) for i in idx], float)
        x, res = _continue_batch(f, X, Mv, k, tol, max_iter)
        for j, i in enumerate(idx):
            s = seeds[i]
            if not res[j] < tol or not np.all(np.isfinite(x[j])):
                out[i] = ContinuationFailed(f"seed {s.index} (k={k}) stalled at residual {res[j]:.2e}")
                continue
            per = minimal_period(f.linear, s.coords, k)
            out[i] = PeriodicOrbit(x[j], per, tuple(int(v) for v in Mv[j]) if per == k
                                   else lattice_class(f.linear, s.coords, per),
                                   float(res[j]), s.index, s.coords)

    jobs = []
    for k, idx in by_k.items():
        chunks = [idx[c: c + 256] for c in range(0, len(idx), 256)]
        jobs.extend((k, c) for c in chunks)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(lambda a: run(*a), jobs))
    else:
        for a in jobs:
            run(*a)
    return out


# ---------------------------------------------------------------- catalogs

@dataclass
class Catalog:
    """Periodic orbits of minimal period <= k_max, one representative per cycle."""

    k_max: int
    orbits: list[PeriodicOrbit]
    counts: dict[int, int] = field(default_factory=dict)       # k -> |det(L^k - I)|
    continued: dict[int, int] = field(default_factory=dict)    # k -> seeds continued
    max_residual: dict[int, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def by_key(self) -> dict:
        return {o.key: o for o in self.orbits}


def _cycle_members(L: IntegerAutomorphism, coords, per: int) -> list[tuple]:
    members, y = [], list(coords)
    for _ in range(per):
        members.append(tuple(c - (c.numerator // c.denominator) for c in y))
        y = _apply_exact(L, y)
    return members


def build_catalog(f: PerturbedMap, k_max: int, tol: float = 1e-11, workers: int = 1,
                  continue_all: bool = False) -> Catalog:
    """Enumerate cycles of minimal period k <= k_max and continue them.

    A cycle is represented by its member with the smallest Smith index at
    its own period. With ``continue_all`` every seed of every level is
    continued (this is what the orbit-count check uses).
    """
    L = f.linear
    reps: list[LinearSeed] = []
    counts, continued, maxres = {}, {}, {}
    all_seeds = []
    for k in range(1, k_max + 1):
        seeds = linear_fixed_points(L, k)
        counts[k] = len(seeds)
        seen = set()
        for s in seeds:
            if minimal_period(L, s.coords, k) != k or s.coords in seen:
                continue
            seen.update(_cycle_members(L, s.coords, k))
            reps.append(s)
        if continue_all:
            all_seeds.extend(seeds)
    failures = []
    if continue_all:
        res = continue_seeds(f, all_seeds, tol, workers=workers)
        for s, o in zip(all_seeds, res):
            if isinstance(o, Exception):
                failures.append(str(o))
                continue
            continued[s.k] = continued.get(s.k, 0) + 1
            maxres[s.k] = max(maxres.get(s.k, 0.0), o.residual)
    orbits = []
    for s, o in zip(reps, continue_seeds(f, reps, tol, workers=workers)):
        if isinstance(o, Exception):
            failures.append(str(o))
        else:
            orbits.append(o)
    return Catalog(k_max, orbits, counts, continued, maxres, failures)


# ---------------------------------------------------------------- periodic data

@dataclass
class PeriodicData:
    jac_s: float
    jac_u: float
    jac_full: float
    spectrum: np.ndarray
    log_jac_s: float = 0.0
    log_jac_u: float = 0.0

    def to_dict(self) -> dict:
        return {"jac_s": self.jac_s, "jac_u": self.jac_u, "jac_full": self.jac_full,
                "log_jac_s": self.log_jac_s, "log_jac_u": self.log_jac_u,
                "spectrum": [[float(z.real), float(z.imag)] for z in self.spectrum]}


def periodic_data(f: PerturbedMap, orbit: PeriodicOrbit) -> PeriodicData:
    """Jacobians of f^k on E^s, E^u and in full, accumulated along the orbit."""
    pts = orbit.points(f)
    Qu = unstable_frames_along(f, pts)
    Qs = stable_frames_along(f, pts)
    J = f.derivative(pts)

    def logvol(Q):
        A = J @ Q
        return 0.5 * np.log(np.linalg.det(np.swapaxes(A, -1, -2) @ A))

    lu = float(np.sum(logvol(Qu)))
    ls = float(np.sum(logvol(Qs)))
    P = np.eye(f.dim)
    for m in range(len(pts)):
        P = J[m] @ P
    return PeriodicData(jac_s=float(np.exp(ls)), jac_u=float(np.exp(lu)),
                        jac_full=float(np.linalg.det(P)), spectrum=np.linalg.eigvals(P),
                        log_jac_s=ls, log_jac_u=lu)


def catalog_csv(f: PerturbedMap, catalog: Catalog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = f.dim
    w.writerow(["period", "index", "lattice"] + [f"x{i}" for i in range(d)]
               + ["jac_s", "jac_u", "jac_full", "residual"])
    for o in catalog.orbits:
        pd = periodic_data(f, o)
        w.writerow([o.period, " ".join(map(str, o.index)), " ".join(map(str, o.lattice))]
                   + [repr(float(v)) for v in o.base]
                   + [repr(pd.jac_s), repr(pd.jac_u), repr(pd.jac_full), repr(o.residual)])
    return buf.getvalue()
