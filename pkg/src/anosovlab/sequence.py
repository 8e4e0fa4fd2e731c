"""Sequence-space Newton solver for finite orbit segments.

Given a pseudo-orbit ``ref[0..M]`` of a perturbed map, find a genuine orbit
``z = ref + w`` with

* stable coordinate of ``w[0]`` prescribed,
* unstable coordinate of ``w[M]`` prescribed,

where the coordinates are taken in the eigenbasis of the linear part L.
The hyperbolic boundary conditions make this problem well conditioned
uniformly in M (exponential dichotomy), so one solver serves for
shadowing, leaf charts, paired orbits and bracket points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NoConvergence
from .torus_maps import PerturbedMap

MAX_UNKNOWNS = 400_000


def default_window(f: PerturbedMap, digits: float = 16.0) -> int:
    """Half-window so that the linear dichotomy damps a unit offset to 10^-digits."""
    sd = f.spectrum
    rate = min(math.log(sd.moduli_unstable[0]), -math.log(sd.moduli_stable[-1]))
    return int(math.ceil(digits * math.log(10) / (0.9 * rate))) + 2


def lattice_shifts(f: PerturbedMap, ref: np.ndarray) -> np.ndarray:
    """Integer vectors k_m with F(ref_m) - k_m closest to ref_{m+1}."""
    return np.round(f.eval_lift(ref[..., :-1, :]) - ref[..., 1:, :])


@dataclass
class SegmentSolution:
    z: np.ndarray           # (B, M+1, d) lifted orbit points
    residual: np.ndarray    # (B,) max-norm residual of the orbit equations
    iterations: int


def _assemble(J: np.ndarray, Pinv: np.ndarray, ds: int) -> sp.csc_matrix:
    B, M, d, _ = J.shape
    du = d - ds
    n = (M + 1) * d
    off = np.arange(B) * n
    rows, cols, vals = [], [], []
    # start boundary: stable coordinates of w_0
    r = off[:, None, None] + np.arange(ds)[None, :, None]
    c = off[:, None, None] + np.arange(d)[None, None, :]
    rows.append(np.broadcast_to(r, (B, ds, d)).ravel())
    cols.append(np.broadcast_to(c, (B, ds, d)).ravel())
    vals.append(np.broadcast_to(Pinv[:ds], (B, ds, d)).ravel())
    # dynamics: DF(z_m) w_m - w_{m+1}
    m = np.arange(M)
    rbase = off[:, None] + ds + m[None, :] * d
    cbase = off[:, None] + m[None, :] * d
    r = rbase[:, :, None, None] + np.arange(d)[None, None, :, None]
    c = cbase[:, :, None, None] + np.arange(d)[None, None, None, :]
    rows.append(np.broadcast_to(r, J.shape).ravel())
    cols.append(np.broadcast_to(c, J.shape).ravel())
    vals.append(J.ravel())
    r = rbase[:, :, None] + np.arange(d)
    rows.append(r.ravel())
    cols.append((cbase[:, :, None] + d + np.arange(d)).ravel())
    vals.append(-np.ones(r.size))
    # end boundary: unstable coordinates of w_M
    r = off[:, None, None] + ds + M * d + np.arange(du)[None, :, None]
    c = off[:, None, None] + M * d + np.arange(d)[None, None, :]
    rows.append(np.broadcast_to(r, (B, du, d)).ravel())
    cols.append(np.broadcast_to(c, (B, du, d)).ravel())
    vals.append(np.broadcast_to(Pinv[ds:], (B, du, d)).ravel())
    N = B * n
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N))


def _solve_batch(f, ref, shifts, s_start, u_end, w, tol, max_iter):
    B, M1, d = ref.shape
    ds = f.dim_stable
    Pinv = f.adapted_inverse
    target = ref[:, 1:] + shifts
    scale = 1.0 + np.max(np.abs(target), axis=(1, 2))
    err = np.full(B, np.inf)
    prev = np.inf
    for it in range(max_iter + 1):
        z = ref + w
        R = f.eval_lift(z[:, :-1]) - target - w[:, 1:]
        b0 = w[:, 0] @ Pinv[:ds].T - s_start
        bM = w[:, -1] @ Pinv[ds:].T - u_end
        err = np.maximum(np.max(np.abs(R), axis=(1, 2)),
                         np.maximum(np.max(np.abs(b0), axis=1), np.max(np.abs(bM), axis=1)))
        worst = float(np.max(err / scale))
        if worst <= tol or it == max_iter:
            break
        if worst > 0.5 * prev and worst < 1e3 * tol:
            break  # stagnated at the roundoff floor
        prev = worst
        A = _assemble(f.derivative(z[:, :-1]), Pinv, ds)
        rhs = np.concatenate([b0, R.reshape(B, -1), bM], axis=1).ravel()
        dw = splu(A).solve(-rhs)
        w = w + dw.reshape(B, M1, d)
    return ref + w, err, it


def solve_segment(f: PerturbedMap, ref: np.ndarray, s_start=None, u_end=None, *,
                  shifts: np.ndarray | None = None, w0: np.ndarray | None = None,
                  tol: float = 1e-14, max_iter: int = 25, accept: float = 1e-11) -> SegmentSolution:
    """Find the f-orbit segment near ``ref`` with hyperbolic boundary data.

    ``ref`` has shape (B, M+1, d). ``s_start`` (B, d_s) and ``u_end`` (B, d_u)
    default to zero. ``shifts`` (B, M, d) are the lattice vectors relating
    consecutive reference points; by default they are rounded from ref.
    Raises NoConvergence when some residual stays above ``accept``.
    """
    ref = np.asarray(ref, float)
    squeeze = ref.ndim == 2
    if squeeze:
        ref = ref[None]
    B, M1, d = ref.shape
    ds, du = f.dim_stable, f.dim_unstable
    s_start = np.zeros((B, ds)) if s_start is None else np.broadcast_to(np.asarray(s_start, float), (B, ds))
    u_end = np.zeros((B, du)) if u_end is None else np.broadcast_to(np.asarray(u_end, float), (B, du))
    if shifts is None:
        shifts = lattice_shifts(f, ref)
    shifts = np.broadcast_to(shifts, (B, M1 - 1, d))
    w = np.zeros_like(ref) if w0 is None else np.array(w0, float).reshape(ref.shape)
    chunk = max(1, MAX_UNKNOWNS // (M1 * d))
    zs, errs, its = [], [], 0
    for lo in range(0, B, chunk):
        sl = slice(lo, lo + chunk)
        z, err, it = _solve_batch(f, ref[sl], shifts[sl], s_start[sl], u_end[sl], w[sl], tol, max_iter)
        zs.append(z)
        errs.append(err)
        its = max(its, it)
    z = np.concatenate(zs)
    err = np.concatenate(errs)
    scale = 1.0 + np.max(np.abs(ref), axis=(1, 2)) + np.max(np.abs(shifts), axis=(1, 2), initial=0.0)
    if np.any(err > accept * scale):
        raise NoConvergence(f"orbit segment solve stalled: residual {float(err.max()):.2e}")
    if squeeze:
        return SegmentSolution(z[0], err, its)
    return SegmentSolution(z, err, its)
