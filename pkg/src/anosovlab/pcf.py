"""Periodic cycle functionals (PCFs) on us-adapted paths.

A us-adapted path is a chain of legs, each inside a single stable (S) or
unstable (U) leaf. For an S-leg the PCF of phi is
sum_{n>=0} phi(f^n start) - phi(f^n end), for a U-leg
sum_{n<0} phi(f^n end) - phi(f^n start). Paired orbits come from the
orbit-segment solver, so no unstable direction is ever iterated forward.
Points are lifts to R^d; loops are closed in the lift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (DecompositionFailed, InvalidInput, InvalidLeg, NullHomologyError,
                     OutOfChart, WrongSignature)
from .manifolds import (SeriesValue, bracket, chart_s, chart_u, pair_orbits,
                        series_from_pairs, stable_coords, unstable_coords, _batch)
from .observables import Observable
from .shadowing import ConjugacyMap, leaf_order, linearizing_conjugacy
from .torus_maps import PerturbedMap, splitting_frames

CHAIN_TOL = 1e-10
LEAF_TOL = 1e-8


# ---------------------------------------------------------------- paths

@dataclass
class Leg:
    kind: str
    start: np.ndarray
    end: np.ndarray
    leaf_residual: float | None = None

    def __post_init__(self):
        if self.kind not in ("S", "U"):
            raise InvalidLeg(f"leg kind must be 'S' or 'U', got {self.kind!r}")
        self.start = np.asarray(self.start, float).copy()
        self.end = np.asarray(self.end, float).copy()
        if self.start.shape != self.end.shape or self.start.ndim != 1:
            raise InvalidLeg("leg endpoints must be points of equal dimension")

    def reversed(self) -> Leg:
        return Leg(self.kind, self.end, self.start, self.leaf_residual)

    def translated(self, n) -> Leg:
        n = np.asarray(n, float)
        return Leg(self.kind, self.start + n, self.end + n, self.leaf_residual)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "start": self.start.tolist(), "end": self.end.tolist()}


@dataclass
class UsPath:
    legs: list[Leg] = field(default_factory=list)

    def __post_init__(self):
        if not self.legs:
            raise InvalidInput("a path needs at least one leg")
        self.legs = [g if isinstance(g, Leg) else Leg(**g) for g in self.legs]
        for g, h in zip(self.legs, self.legs[1:]):
            if np.max(np.abs(g.end - h.start)) > CHAIN_TOL:
                raise InvalidLeg("consecutive legs do not chain")

    @property
    def start(self) -> np.ndarray:
        return self.legs[0].start

    @property
    def end(self) -> np.ndarray:
        return self.legs[-1].end

    def __len__(self) -> int:
        return len(self.legs)

    def displacement(self) -> np.ndarray:
        return self.end - self.start

    def is_closed(self) -> bool:
        """Closed on the torus: displacement is a lattice vector."""
        dv = self.displacement()
        return bool(np.max(np.abs(dv - np.round(dv))) <= CHAIN_TOL)

    def is_null_homologous(self) -> bool:
        return bool(np.max(np.abs(self.displacement())) <= CHAIN_TOL)

    def reversed(self) -> UsPath:
        return UsPath([g.reversed() for g in reversed(self.legs)])

    def translated(self, n) -> UsPath:
        return UsPath([g.translated(n) for g in self.legs])

    def concat(self, other: UsPath) -> UsPath:
        return UsPath(self.legs + other.legs)

    def kinds(self) -> str:
        return "".join(g.kind for g in self.legs)

    def to_dict(self) -> dict:
        return {"legs": [g.to_dict() for g in self.legs]}

    @classmethod
    def from_dict(cls, spec) -> UsPath:
        legs = spec["legs"] if isinstance(spec, dict) else spec
        return cls([Leg(g["kind"], g["start"], g["end"]) for g in legs])


UsLoop = UsPath


def require_loop(path: UsPath) -> None:
    if not path.is_closed():
        raise InvalidLeg("path is not closed")
    if not path.is_null_homologous():
        raise NullHomologyError(
            f"loop has lattice displacement {np.round(path.displacement()).astype(int).tolist()}")


# ---------------------------------------------------------------- leg values

def _legs_series(f: PerturbedMap, phi: Observable, kind: str, starts: np.ndarray,
                 ends: np.ndarray, tol: float, window: int | None,
                 leaf_tol: float) -> SeriesValue:
    B = len(starts)
    # evaluate on the lift with start in [0, 1)^d so deck translates agree bit for bit
    shift = np.floor(starts)
    starts, ends = starts - shift, ends - shift
    if kind == "S":
        pairs = pair_orbits(f, starts, stable_coords(f, ends - starts), "S", window)
    else:
        pairs = pair_orbits(f, starts, unstable_coords(f, ends - starts), "U", window)
    res = np.linalg.norm(pairs.point - ends, axis=-1)
    if np.max(res) > leaf_tol:
        i = int(np.argmax(res))
        raise InvalidLeg(f"{kind}-leg end is off the leaf of its start by {res[i]:.2e}")
    # S: ref - partner. U: partner - ref (end minus start at negative times).
    val = series_from_pairs(phi, pairs, f, tol, sign_partner_minus_ref=(kind == "U"),
                            leaf_residual=res)
    degenerate = np.all(starts == ends, axis=-1)
    if degenerate.any():
        v = np.array(val.value, float).reshape(B)
        t = np.array(val.tail_bound, float).reshape(B)
        n = np.array(val.truncation).reshape(B)
        v[degenerate], t[degenerate], n[degenerate] = 0.0, 0.0, 0
        val = SeriesValue(v, n, t)
    return val


def pcf_legs(f: PerturbedMap, phi: Observable, legs: list[Leg], tol: float = 1e-10,
             window: int | None = None, leaf_tol: float = LEAF_TOL) -> SeriesValue:
    """PCF of every leg, batched by kind. Returns arrays in leg order."""
    n = len(legs)
    value = np.zeros(n)
    trunc = np.zeros(n, int)
    tail = np.zeros(n)
    for kind in ("S", "U"):
        idx = [i for i, g in enumerate(legs) if g.kind == kind]
        if not idx:
            continue
        s = np.array([legs[i].start for i in idx])
        e = np.array([legs[i].end for i in idx])
        sv = _legs_series(f, phi, kind, s, e, tol, window, leaf_tol)
        value[idx] = sv.value
        trunc[idx] = sv.truncation
        tail[idx] = sv.tail_bound
    return SeriesValue(value, trunc, tail)


def pcf_leg(f: PerturbedMap, phi: Observable, leg: Leg, tol: float = 1e-10,
            window: int | None = None) -> SeriesValue:
    return pcf_legs(f, phi, [leg], tol, window)[0]


def _total(sv: SeriesValue) -> SeriesValue:
    return SeriesValue(float(np.sum(sv.value)), int(np.max(sv.truncation, initial=0)),
                       float(np.sum(sv.tail_bound)))


def pcf_path(f: PerturbedMap, phi: Observable, path: UsPath, tol: float = 1e-10,
             window: int | None = None) -> SeriesValue:
    """Sum of leg PCFs; tail bounds add."""
    return _total(pcf_legs(f, phi, path.legs, tol, window))


def pcf_paths(f: PerturbedMap, phi: Observable, paths: list[UsPath], tol: float = 1e-10,
              window: int | None = None) -> list[SeriesValue]:
    """pcf_path for many paths with all legs solved in one batch."""
    legs = [g for p in paths for g in p.legs]
    sv = pcf_legs(f, phi, legs, tol, window)
    out, i = [], 0
    for p in paths:
        out.append(_total(sv[i: i + len(p)]))
        i += len(p)
    return out


# ---------------------------------------------------------------- simple PCF

def simple_loop(f: PerturbedMap, a, b, x, window: int | None = None) -> UsPath:
    """The loop a -U-> x -S-> Hol(x) -U-> b -S-> a."""
    a, b, x = (np.asarray(p, float) for p in (a, b, x))
    hx = bracket(f, b, x, window).point[0]
    return UsPath([Leg("U", a, x), Leg("S", x, hx), Leg("U", hx, b), Leg("S", b, a)])


def simple_pcf(f: PerturbedMap, a, b, x, phi: Observable, tol: float = 1e-10,
               window: int | None = None) -> SeriesValue:
    """rho^phi_{a,b}(x) for b on W^s(a) and x on W^u(a).

    The four legs a -> x (U), x -> Hol(x) (S), Hol(x) -> b (U), b -> a (S)
    are evaluated with the holonomy bracket's own orbit pair reused for
    the two middle legs. Batched over leading axes of a, b, x.
    """
    d = f.dim
    a2, lead = _batch(a, d)
    b2, _ = _batch(b, d)
    x2, lead_x = _batch(x, d)
    lead = np.broadcast_shapes(lead, lead_x, _batch(b, d)[1])
    a2, b2, x2 = (np.ascontiguousarray(v) for v in np.broadcast_arrays(a2, b2, x2))
    B = len(a2)
    br = bracket(f, b2, x2, window)
    M = br.depth
    # a -> x along W^u(a)
    p1 = pair_orbits(f, a2, unstable_coords(f, x2 - a2), "U", M)
    r1 = np.linalg.norm(p1.point - x2, axis=-1)
    # b -> a along W^s(b)
    p4 = pair_orbits(f, b2, stable_coords(f, a2 - b2), "S", M)
    r4 = np.linalg.norm(p4.point - a2, axis=-1)
    bad = np.maximum(r1, r4) > LEAF_TOL
    if bad.any():
        raise InvalidLeg("x must lie on W^u(a) and b on W^s(a) "
                         f"(offsets {float(r1.max()):.2e}, {float(r4.max()):.2e})")
    leg1 = series_from_pairs(phi, p1, f, tol, True, leaf_residual=r1)
    leg2 = series_from_pairs(phi, br.forward_pair(), f, tol, False)    # ref x, partner Hol x
    leg3 = series_from_pairs(phi, br.backward_pair(), f, tol, False)   # ref b, partner Hol x
    leg4 = series_from_pairs(phi, p4, f, tol, False, leaf_residual=r4)
    total = leg1 + leg2 + leg3 + leg4
    value = np.asarray(total.value, float).reshape(B).copy()
    tail = np.asarray(total.tail_bound, float).reshape(B).copy()
    at_a = np.all(x2 == a2, axis=-1)
    value[at_a], tail[at_a] = 0.0, 0.0
    return SeriesValue(value.reshape(lead), np.asarray(total.truncation).reshape(lead),
                       tail.reshape(lead))


def _richardson(v: np.ndarray, h: float) -> np.ndarray:
    """v[..., 0:4] at offsets +h, -h, +2h, -2h."""
    return (8 * (v[..., 0] - v[..., 1]) - (v[..., 2] - v[..., 3])) / (12 * h)


def _leaf_gradient(f: PerturbedMap, x2: np.ndarray, fn, step: float,
                   window: int | None) -> np.ndarray:
    """Gradient in E^u(x) of a leafwise function given by fn(points on W^u(x), rows).

    fn receives chart points of shape (B*k*4, d) and the batch row of each.
    Derivatives along the k chart directions are combined with the chart
    tangent T as g = T (T^T T)^-1 D, so g lies in the tangent space.
    """
    B, d = x2.shape
    k = f.dim_unstable
    offs = np.array([s * step * e for e in np.eye(k) for s in (1, -1, 2, -2)])
    rows = np.repeat(np.arange(B), len(offs))
    ys = chart_u(f, x2[rows], np.tile(offs, (B, 1)), window)
    vals = np.asarray(fn(ys, rows), float).reshape(B, k, 4)
    D = _richardson(vals, step)                                   # (B, k)
    T = np.swapaxes(_richardson(np.moveaxis(ys.reshape(B, k, 4, d), 3, 2), step), 1, 2)  # (B, d, k)
    G = np.swapaxes(T, 1, 2) @ T
    return np.einsum("bij,bj->bi", T, np.linalg.solve(G, D[..., None])[..., 0])


def simple_pcf_gradient(f: PerturbedMap, a, b, x, phi: Observable, step: float = 1e-5,
                        tol: float = 1e-13, window: int | None = None) -> np.ndarray:
    """Gradient of y -> rho^phi_{a,b}(y) along W^u(a) at y = x, as an ambient vector.

    Central differences along the unstable chart directions at scales step
    and 2 step, Richardson-combined.
    """
    d = f.dim
    a2, lead = _batch(a, d)
    b2, _ = _batch(b, d)
    x2, lx = _batch(x, d)
    lead = np.broadcast_shapes(lead, lx)
    a2, b2, x2 = (np.ascontiguousarray(v) for v in np.broadcast_arrays(a2, b2, x2))
    if not f.epsilon and phi.lipschitz == 0:
        return np.zeros(lead + (d,))

    def fn(ys, rows):
        return simple_pcf(f, a2[rows], b2[rows], ys, phi, tol, window).value

    return _leaf_gradient(f, x2, fn, step, window).reshape(lead + (d,))


# ---------------------------------------------------------------- loops

def random_null_homologous_loop(f: PerturbedMap, p0, n_legs: int, rng: np.random.Generator,
                                scale: float = 0.2, window: int | None = None) -> UsPath:
    """Random closed us-loop with n_legs (even, >= 4) legs starting with an S-leg.

    The first n_legs - 2 legs are random chart moves; the last two close the
    loop through r = W^u(p0) cap W^s(p_{n-2}).
    """
    if n_legs < 4 or n_legs % 2:
        raise InvalidInput("n_legs must be even and at least 4")
    p0 = np.asarray(p0, float)
    pts = [p0]
    kinds = []
    for i in range(n_legs - 2):
        if i % 2 == 0:
            t = rng.uniform(-scale, scale, size=(1, f.dim_stable))
            pts.append(chart_s(f, pts[-1][None], t, window)[0])
            kinds.append("S")
        else:
            v = rng.uniform(-scale, scale, size=(1, f.dim_unstable))
            pts.append(chart_u(f, pts[-1][None], v, window)[0])
            kinds.append("U")
    r = bracket(f, p0, pts[-1], window).point[0]
    pts += [r, p0.copy()]
    kinds += ["S", "U"]
    return UsPath([Leg(k, pts[i], pts[i + 1]) for i, k in enumerate(kinds)])


def normalize_loop(legs: list[Leg], zero_tol: float = 1e-14) -> list[Leg]:
    """Drop zero legs and merge consecutive (also cyclically) same-kind legs."""
    out: list[Leg] = []
    for g in legs:
        if np.max(np.abs(g.end - g.start)) <= zero_tol:
            continue
        if out and out[-1].kind == g.kind:
            out[-1] = Leg(g.kind, out[-1].start, g.end)
        else:
            out.append(Leg(g.kind, g.start, g.end))
    while len(out) > 1 and out[0].kind == out[-1].kind:
        last = out.pop()
        out[0] = Leg(last.kind, last.start, out[0].end)
    if out and out[0].kind == "U":
        out = out[1:] + out[:1]
    return out


def loop_decompose(f: PerturbedMap, loop: UsPath, H: ConjugacyMap | None = None,
                   max_depth: int = 64, window: int | None = None) -> list[UsPath]:
    """Split a null-homologous loop into 4-leg loops with the same total PCF.

    Repeatedly pick the unstable leg whose leaf is maximal in the leaf order
    (stable coordinate of the linearised lift) and cut off a 4-leg loop at
    the bracket q of its neighbours, inserting a U-leg and its reverse.
    """
    if f.dim_stable != 1:
        raise WrongSignature(f"loop decomposition needs dim E^s = 1, got {f.dim_stable}")
    require_loop(loop)
    H = linearizing_conjugacy(f) if H is None else H
    legs = normalize_loop(loop.legs)
    if not legs:
        return []
    out: list[UsPath] = []
    for _ in range(max_depth):
        if len(legs) <= 4:
            if len(legs) == 4:
                out.append(UsPath(legs))
            elif legs:
                raise DecompositionFailed(f"degenerate loop with {len(legs)} legs")
            return out
        n = len(legs)
        u_idx = list(range(1, n, 2))
        order = leaf_order(f, np.array([legs[i].start for i in u_idx]), H)[:, 0]
        j = u_idx[int(np.argmax(order))]
        shift = (j - 3) % n
        legs = legs[shift:] + legs[:shift]
        o = dict(zip([(i - shift) % n for i in u_idx], order))
        P, Q = legs[2].start, legs[4].end
        try:
            if o[1] >= o[5]:
                q = bracket(f, P, Q, window).point[0]
                d1, d2 = Leg("S", legs[4].start, q), Leg("S", q, Q)
                alpha = [legs[2], legs[3], d1, Leg("U", q, P)]
                beta = [legs[0], Leg("U", legs[1].start, q), d2] + legs[5:]
            else:
                q = bracket(f, Q, P, window).point[0]
                d1, d2 = Leg("S", P, q), Leg("S", q, legs[2].end)
                alpha = [d2, legs[3], legs[4], Leg("U", Q, q)]
                beta = [legs[0], legs[1], d1, Leg("U", q, legs[5].end)] + legs[6:]
        except OutOfChart as exc:
            raise DecompositionFailed(f"intersection point not found: {exc}") from None
        alpha = normalize_loop(alpha)
        if len(alpha) == 4:
            out.append(UsPath(alpha))
        elif alpha:
            raise DecompositionFailed(f"split produced a {len(alpha)}-leg piece")
        legs = normalize_loop(beta)
    raise DecompositionFailed("recursion depth exceeded")


# ---------------------------------------------------------------- matching kernel

@dataclass
class MatchingKernelReport:
    point: np.ndarray
    gradients: np.ndarray          # rows in orthonormal E^u(x) coordinates
    singular_values: list[float]
    numeric_rank: int
    kernel_dim: int
    kernel_basis: np.ndarray       # ambient vectors spanning the sampled kernel
    cutoff: float
    rank_ambiguous: bool
    cross_check_gap: float
    cross_check_bound: float
    pairs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "gradients": self.gradients.tolist(),
                "singular_values": self.singular_values, "numeric_rank": self.numeric_rank,
                "kernel_dim": self.kernel_dim, "kernel_basis": self.kernel_basis.tolist(),
                "cutoff": self.cutoff, "rank_ambiguous": self.rank_ambiguous,
                "cross_check_gap": self.cross_check_gap,
                "cross_check_bound": self.cross_check_bound,
                "pairs": [[np.asarray(a).tolist(), np.asarray(b).tolist()] for a, b in self.pairs]}


def gradient_rank(G: np.ndarray, rel: float = 1e-6, abs_tol: float = 1e-6):
    """(singular values, cutoff, rank, ambiguous, Vt) for the rows of G."""
    _, s, Vt = np.linalg.svd(G, full_matrices=True)
    smax = float(s[0]) if len(s) else 0.0
    cutoff = max(rel * smax, abs_tol)
    rank = int(np.sum(s > cutoff))
    ambiguous = bool(np.any((s > cutoff / 10) & (s < cutoff * 10)))
    return s, cutoff, rank, ambiguous, Vt


def matching_kernel(f1: PerturbedMap, f2: PerturbedMap, h: ConjugacyMap | None, x, pairs,
                    phi1: Observable, phi2: Observable, tol: float = 1e-6, step: float = 1e-5,
                    n_check: int = 3, window: int | None = None) -> MatchingKernelReport:
    """Sampled kernel of the simple-PCF gradients at x.

    Each (a, b) with b on W^s(a) is first slid to a' = W^u(x) cap W^s(a), so
    that rho_{a',b} is defined near x. Rows are grad rho_{a',b}(x) and the
    gradient of y -> rho_{a'',b}(f y) with a'' = W^u(f x) cap W^s(a), both in
    orthonormal E^u(x) coordinates. At a fixed point a'' = a' and the second
    row is the differential of rho_{a',b} o f. The cross-check compares rho^{phi1}_{a',b}(y) with
    rho^{phi2}_{h a', h b}(h y) on a few y on W^u(x).
    """
    d, k = f1.dim, f1.dim_unstable
    x = np.asarray(x, float).reshape(d)
    A = np.array([np.asarray(a, float) for a, _ in pairs])
    Bp = np.array([np.asarray(b, float) for _, b in pairs])
    P = len(A)
    ap = bracket(f1, np.broadcast_to(x, A.shape), A, window).point
    X = np.broadcast_to(x, (P, d)).copy()
    g1 = simple_pcf_gradient(f1, ap, Bp, X, phi1, step, window=window)
    # second row: y -> rho_{a2,b}(f y) with a2 = [f x, a]; a2 = a' when f x = x
    fx = f1.eval_lift(X)
    ap2 = bracket(f1, fx, A, window).point

    def shifted(ys, rows):
        return simple_pcf(f1, ap2[rows], Bp[rows], f1.eval_lift(ys), phi1, 1e-13, window).value

    if not f1.epsilon and phi1.lipschitz == 0:
        g2 = np.zeros_like(g1)
    else:
        g2 = _leaf_gradient(f1, X, shifted, step, window)
    _, Qu, _ = splitting_frames(f1, x[None])
    Qu = Qu[0]
    G = np.concatenate([g1, g2]) @ Qu
    s, cutoff, rank, ambiguous, Vt = gradient_rank(G, abs_tol=tol)
    kernel = (Qu @ Vt[rank:].T).T

    # matching relation on a few nearby points of W^u(x)
    rng = np.random.default_rng(0)
    v = rng.uniform(-0.05, 0.05, size=(n_check, k))
    ys = chart_u(f1, np.broadcast_to(x, (n_check, d)), v, window)
    idx = np.repeat(np.arange(P), n_check)
    yy = np.tile(ys, (P, 1))
    r1 = simple_pcf(f1, ap[idx], Bp[idx], yy, phi1, 1e-12, window)
    if h is None or f1 is f2:
        r2 = simple_pcf(f2, ap[idx], Bp[idx], yy, phi2, 1e-12, window)
    else:
        img = h(np.concatenate([ap, Bp, ys]))
        ha, hb, hy = img[:P], img[P: 2 * P], img[2 * P:]
        r2 = simple_pcf(f2, ha[idx], hb[idx], np.tile(hy, (P, 1)), phi2, 1e-12, window)
    gap = float(np.max(np.abs(np.asarray(r1.value) - np.asarray(r2.value))))
    bound = float(np.max(np.asarray(r1.tail_bound) + np.asarray(r2.tail_bound)))
    return MatchingKernelReport(x, G, [float(v) for v in s], rank, k - rank, kernel, cutoff,
                                ambiguous, gap, bound, list(zip(ap, Bp)))
