"""Stable and unstable leaves, holonomies and the associated series.

Leaves are parametrised as graphs over the linear eigenspaces: the unstable
leaf of x is {chart_u(x, v)} where v is the E^u_L coordinate of the offset
from x, and similarly for stable leaves. Points on leaves are produced by
the orbit-segment solver, which also returns the paired orbits needed by
every series below (no unstable forward iteration of nearby points).

Stable dimension one is assumed wherever a root is found along a stable
leaf; the bracket and chart routines work for any splitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ChartFailed, InvalidInput, NoConvergence, OutOfChart, WrongSignature
from .observables import LogJs, LogJu, Observable
from .sequence import default_window, lattice_shifts, solve_segment
from .torus_maps import (PerturbedMap, backward_orbit, coerce_points, forward_orbit,
                         splitting_frames)


# ---------------------------------------------------------------- coordinates

def stable_coords(f: PerturbedMap, v) -> np.ndarray:
    return np.asarray(v, float) @ f.adapted_inverse[: f.dim_stable].T


def unstable_coords(f: PerturbedMap, v) -> np.ndarray:
    return np.asarray(v, float) @ f.adapted_inverse[f.dim_stable:].T


def _batch(x, d):
    x = coerce_points(x, d)
    return x.reshape(-1, d), x.shape[:-1]


# ---------------------------------------------------------------- paired orbits

@dataclass
class PairOrbits:
    """A reference orbit and a partner orbit on the same stable or unstable leaf.

    For kind "S" both arrays hold times 0..M; for kind "U" times -M..0.
    ``ref`` starts at the given base point, ``partner`` is the solved orbit.
    """

    kind: str
    ref: np.ndarray
    partner: np.ndarray

    @property
    def base(self) -> np.ndarray:
        return self.ref[:, 0] if self.kind == "S" else self.ref[:, -1]

    @property
    def point(self) -> np.ndarray:
        """Partner point at time 0."""
        return self.partner[:, 0] if self.kind == "S" else self.partner[:, -1]

    def ordered(self) -> tuple[np.ndarray, np.ndarray]:
        """(ref, partner) reordered so index j is j steps away from time 0,
        j = 0..M, running forward for S and backward for U."""
        if self.kind == "S":
            return self.ref, self.partner
        return self.ref[:, ::-1], self.partner[:, ::-1]


def pair_orbits(f: PerturbedMap, base, coords, kind: str, window: int | None = None) -> PairOrbits:
    """Orbit of the point on the kind-leaf of ``base`` with leaf coordinate ``coords``.

    Stable coordinates are used for kind "S", unstable ones for kind "U".
    """
    d = f.dim
    base, lead = _batch(base, d)
    M = default_window(f) if window is None else int(window)
    k = f.dim_stable if kind == "S" else f.dim_unstable
    coords = np.asarray(coords, float).reshape(-1, k)
    coords = np.broadcast_to(coords, (base.shape[0], k))
    try:
        if kind == "S":
            ref = forward_orbit(f, base, M)
            z = solve_segment(f, ref, s_start=coords).z
        elif kind == "U":
            ref = backward_orbit(f, base, M)
            z = solve_segment(f, ref, u_end=coords).z
        else:
            raise InvalidInput(f"kind must be 'S' or 'U', got {kind!r}")
    except NoConvergence as exc:
        raise ChartFailed(str(exc)) from None
    return PairOrbits(kind, ref, z)


def chart_u(f: PerturbedMap, x, v, window: int | None = None) -> np.ndarray:
    """Point on W^u(x) whose E^u_L coordinate relative to x is v."""
    x = np.asarray(x, float)
    out = pair_orbits(f, x, v, "U", window).point
    return out.reshape(np.broadcast_shapes(x.shape[:-1], np.asarray(v).shape[:-1]) + (f.dim,))


def chart_s(f: PerturbedMap, x, t, window: int | None = None) -> np.ndarray:
    """Point on W^s(x) whose E^s_L coordinate relative to x is t."""
    x = np.asarray(x, float)
    out = pair_orbits(f, x, t, "S", window).point
    return out.reshape(np.broadcast_shapes(x.shape[:-1], np.asarray(t).shape[:-1]) + (f.dim,))


# ---------------------------------------------------------------- brackets

@dataclass
class Bracket:
    """q = W^u(u_point) intersect W^s(s_point) with both paired orbits.

    ``back_ref``/``back_partner``: times -M..0 for u_point and q.
    ``fwd_ref``/``fwd_partner``: times 0..M for s_point and q.
    """

    point: np.ndarray
    back_ref: np.ndarray
    back_partner: np.ndarray
    fwd_ref: np.ndarray
    fwd_partner: np.ndarray
    depth: int

    def backward_pair(self) -> PairOrbits:
        return PairOrbits("U", self.back_ref, self.back_partner)

    def forward_pair(self) -> PairOrbits:
        return PairOrbits("S", self.fwd_ref, self.fwd_partner)


def bracket(f: PerturbedMap, u_point, s_point, window: int | None = None) -> Bracket:
    """Local product [u_point, s_point] = W^u(u_point) cap W^s(s_point).

    Solved as a two-sided orbit segment whose reference follows u_point in
    the past and s_point in the future; the result is a lift close to
    s_point. ``depth`` records the half-window used.
    """
    d = f.dim
    u_point, lead = _batch(u_point, d)
    s_point, _ = _batch(s_point, d)
    u_point, s_point = np.broadcast_arrays(u_point, s_point)
    M = default_window(f) if window is None else int(window)
    past = backward_orbit(f, u_point, M)
    future = forward_orbit(f, s_point, M)
    ref = np.concatenate([past[:, :-1], future], axis=1)
    shifts = lattice_shifts(f, ref)
    shifts[:, M - 1] = np.round(f.eval_lift(past[:, M - 1]) - u_point)
    try:
        z = solve_segment(f, ref, shifts=shifts).z
    except NoConvergence as exc:
        raise OutOfChart(f"bracket not found: {exc}") from None
    # The backward reference at time 0 is u_point itself, in the lift fixed
    # by the junction shift, so (past, z) is a genuine pair.
    return Bracket(point=z[:, M], back_ref=past, back_partner=z[:, : M + 1],
                   fwd_ref=future, fwd_partner=z[:, M:], depth=M)


# ---------------------------------------------------------------- holonomy

@dataclass
class HolonomyResult:
    image: np.ndarray
    residual: np.ndarray

    def to_dict(self) -> dict:
        return {"image": np.asarray(self.image).tolist(), "residual": np.asarray(self.residual).tolist()}


def _require_codim1_stable(f: PerturbedMap):
    if f.dim_stable != 1:
        raise WrongSignature(f"needs dim E^s = 1, got {f.dim_stable}")


def holonomy(f: PerturbedMap, a, b, x, tol: float = 1e-13, max_iter: int = 40,
             window: int | None = None, check_pair: bool = True) -> HolonomyResult:
    """Stable holonomy Hol_{a,b}(x) from W^u(a) to W^u(b).

    Secant root-finding along the stable chart of x for the parameter t at
    which chart_s(x, t) lies on W^u(b). Requires dim E^s = 1.
    """
    _require_codim1_stable(f)
    d = f.dim
    a, lead = _batch(a, d)
    b, _ = _batch(b, d)
    x, _ = _batch(x, d)
    a, b, x = np.broadcast_arrays(a, b, x)
    if check_pair:
        back = chart_s(f, a, stable_coords(f, b - a), window)
        bad = np.linalg.norm(back - b, axis=-1) > 1e-8
        if bad.any():
            raise InvalidInput("b does not lie on the stable leaf of a")

    def gap(t):
        y = chart_s(f, x, t[:, None], window)
        u = chart_u(f, b, unstable_coords(f, y - b), window)
        return stable_coords(f, y - u)[:, 0], y, u

    t0 = stable_coords(f, b - a)[:, 0]
    t1 = t0 + 1e-4
    g0, _, _ = gap(t0)
    g1, y, u = gap(t1)
    for _ in range(max_iter):
        if np.max(np.abs(g1)) < tol:
            break
        denom = np.where(g1 == g0, 1.0, g1 - g0)
        step = np.where(g1 == g0, 0.0, g1 * (t1 - t0) / denom)
        t0, g0 = t1, g1
        t1 = t1 - step
        g1, y, u = gap(t1)
    res = np.linalg.norm(y - u, axis=-1)
    if np.max(res) > 1e-9:
        raise OutOfChart(f"holonomy root-finding residual {float(res.max()):.2e}")
    return HolonomyResult(y.reshape(lead + (d,)), res.reshape(lead))


def holonomy_bracket(f: PerturbedMap, b, x, window: int | None = None) -> Bracket:
    """Hol_{a,b}(x) as the bracket W^s(x) cap W^u(b) (a enters only through x)."""
    return bracket(f, b, x, window)


# ---------------------------------------------------------------- series

@dataclass
class SeriesValue:
    """Truncated series with a geometric tail bound (non-rigorous: it uses
    measured rates and an empirical Lipschitz constant). Fields are floats
    or arrays for batched evaluations."""

    value: np.ndarray | float
    truncation: np.ndarray | int
    tail_bound: np.ndarray | float
    rigorous: bool = False

    def __add__(self, other: SeriesValue) -> SeriesValue:
        return SeriesValue(np.asarray(self.value) + np.asarray(other.value),
                           np.maximum(self.truncation, other.truncation),
                           np.asarray(self.tail_bound) + np.asarray(other.tail_bound))

    def __neg__(self) -> SeriesValue:
        return SeriesValue(-np.asarray(self.value), self.truncation, self.tail_bound)

    def __sub__(self, other: SeriesValue) -> SeriesValue:
        return self + (-other)

    def __getitem__(self, i) -> SeriesValue:
        return SeriesValue(np.asarray(self.value)[i], np.asarray(self.truncation)[i],
                           np.asarray(self.tail_bound)[i])

    def __len__(self) -> int:
        return np.asarray(self.value).size

    def to_dict(self) -> dict:
        def conv(v):
            v = np.asarray(v)
            return v.item() if v.ndim == 0 else v.tolist()
        return {"value": conv(self.value), "truncation": conv(self.truncation),
                "tail_bound": conv(self.tail_bound), "rigorous": self.rigorous}


def inflated_factor(rate: float, safety: float = 1.1) -> float:
    """Per-step contraction factor 1/rate inflated by the safety margin."""
    r = safety / rate
    return r if r < 1 else rate ** -0.5


def series_from_pairs(phi: Observable, pairs: PairOrbits, f: PerturbedMap, tol: float,
                      sign_partner_minus_ref: bool, leaf_residual=None) -> SeriesValue:
    """Sum phi(ref) - phi(partner) (or the reverse) stepping away from time 0.

    S pairs include time 0; U pairs start at time -1. The truncation N is
    the first index at which the tail bound drops below tol.
    """
    ref, par = pairs.ordered()
    vr = phi.along(pairs.ref)
    vp = phi.along(pairs.partner)
    if pairs.kind == "U":
        vr, vp = vr[:, ::-1][:, 1:], vp[:, ::-1][:, 1:]
        dist = np.linalg.norm(ref - par, axis=-1)[:, 1:]
        rate = f.measured_rates.lambda_minus
    else:
        dist = np.linalg.norm(ref - par, axis=-1)
        rate = f.measured_rates.mu_minus
    terms = (vp - vr) if sign_partner_minus_ref else (vr - vp)
    B, J = terms.shape
    r = inflated_factor(rate)
    C = f.measured_rates.C
    lip = phi.lipschitz
    csum = np.concatenate([np.zeros((B, 1)), np.cumsum(terms, axis=1)], axis=1)
    mag = np.concatenate([np.zeros((B, 1)), np.cumsum(np.abs(vr) + np.abs(vp), axis=1)], axis=1)
    # tail after n terms uses dist[n]; n ranges over 1..J-1
    n = np.arange(1, J)
    geo = lip * C * dist[:, 1:J] / (1 - r)
    rounding = 4e-16 * mag[:, 1:J] + 1e-15
    extra = 0.0 if leaf_residual is None else lip * np.asarray(leaf_residual).reshape(B, 1)
    tails = geo + rounding + extra
    ok = tails < tol
    first = np.where(ok.any(axis=1), np.argmax(ok, axis=1), J - 2)
    N = n[first]
    rows = np.arange(B)
    return SeriesValue(csum[rows, N], N, tails[rows, first])


def holonomy_jacobian_series(f: PerturbedMap, a, b, x, tol: float = 1e-10,
                             window: int | None = None, br: Bracket | None = None) -> SeriesValue:
    """log J Hol_{a,b}(x) = sum_{n>=0} log J^u f(f^n x) - log J^u f(f^n Hol(x))."""
    if br is None:
        br = holonomy_bracket(f, b, x, window)
    return series_from_pairs(LogJu(f), br.forward_pair(), f, tol, sign_partner_minus_ref=False)


def srb_density(f: PerturbedMap, a, x, tol: float = 1e-10, window: int | None = None) -> SeriesValue:
    """log theta_a(x) = sum_{n<0} log J^u f(f^n a) - log J^u f(f^n x), x on W^u(a)."""
    d = f.dim
    a2, lead = _batch(a, d)
    x2, _ = _batch(x, d)
    a2, x2 = np.broadcast_arrays(a2, x2)
    pairs = pair_orbits(f, a2, unstable_coords(f, x2 - a2), "U", window)
    res = np.linalg.norm(pairs.point - x2, axis=-1)
    if np.max(res) > 1e-8:
        raise InvalidInput(f"x is not on the unstable leaf of a (offset {float(res.max()):.2e})")
    phi = LogJu(f)
    return series_from_pairs(phi, pairs, f, tol, sign_partner_minus_ref=False, leaf_residual=res)


def srb_holonomy_identity_check(f: PerturbedMap, a, b, x, tol: float = 1e-10,
                                window: int | None = None) -> dict:
    """Compare log J^SRB Hol_{a,b}(x) with the simple PCF of log J^u f.

    lhs = log J Hol(x) + log theta_b(Hol x) - log theta_a(x); rhs = rho(x).
    The identity holds up to the constant fixed by x = a.
    """
    from .pcf import simple_pcf

    d = f.dim
    a2, lead = _batch(a, d)
    b2, _ = _batch(b, d)
    x2, _ = _batch(x, d)
    a2, b2, x2 = np.broadcast_arrays(a2, b2, x2)
    br = holonomy_bracket(f, b2, x2, window)
    ljh = holonomy_jacobian_series(f, a2, b2, x2, tol, window, br=br)
    th_b = srb_density(f, b2, br.point, tol, window)
    th_a = srb_density(f, a2, x2, tol, window)
    lhs = ljh + th_b - th_a
    lhs_a = holonomy_jacobian_series(f, a2, b2, a2, tol, window)
    rhs = simple_pcf(f, a2, b2, x2, LogJu(f), tol, window)
    rhs_a = simple_pcf(f, a2, b2, a2, LogJu(f), tol, window)
    gap = np.abs((lhs.value - rhs.value) - (lhs_a.value - rhs_a.value))
    bound = lhs.tail_bound + rhs.tail_bound + lhs_a.tail_bound + rhs_a.tail_bound
    return {"lhs": lhs.value.reshape(lead), "rhs": rhs.value.reshape(lead),
            "gap": gap.reshape(lead), "tail_bound": np.asarray(bound).reshape(lead),
            "holds": (gap <= np.maximum(bound, 1e-12)).reshape(lead)}


# ---------------------------------------------------------------- FD oracle

def _leaf_volume(T: np.ndarray) -> np.ndarray:
    return np.sqrt(np.linalg.det(np.swapaxes(T, -1, -2) @ T))


def holonomy_jacobian_fd(f: PerturbedMap, a, b, x, h: float = 1e-3,
                         window: int | None = None) -> np.ndarray:
    """Finite-difference Jacobian of Hol_{a,b} at x with respect to leaf volume.

    Central differences along the unstable chart of x at steps h and 2h,
    Richardson-combined; holonomy images come from the root-finding routine.
    """
    d, k = f.dim, f.dim_unstable
    a2, lead = _batch(a, d)
    b2, _ = _batch(b, d)
    x2, _ = _batch(x, d)
    a2, b2, x2 = np.broadcast_arrays(a2, b2, x2)
    B = a2.shape[0]
    offs = np.array([s * h * e for e in np.eye(k) for s in (1, -1, 2, -2)])   # (4k, k)
    xs = chart_u(f, np.repeat(x2, len(offs), axis=0), np.tile(offs, (B, 1)), window)
    ys = holonomy(f, np.repeat(a2, len(offs), axis=0), np.repeat(b2, len(offs), axis=0), xs,
                  window=window, check_pair=False).image
    xs = xs.reshape(B, k, 4, d)
    ys = ys.reshape(B, k, 4, d)

    def deriv(p):
        return (8 * (p[:, :, 0] - p[:, :, 1]) - (p[:, :, 2] - p[:, :, 3])) / (12 * h)

    Tx = np.swapaxes(deriv(xs), 1, 2)   # (B, d, k)
    Ty = np.swapaxes(deriv(ys), 1, 2)
    return (_leaf_volume(Ty) / _leaf_volume(Tx)).reshape(lead)


# ---------------------------------------------------------------- leaf charts

@dataclass
class LeafChart:
    """Sampled local leaf W^kind(base) over a ball in leaf coordinates.

    ``table`` holds chart points on a regular parameter grid; ``__call__``
    solves exactly while ``interpolate`` uses cubic interpolation of the table.
    """

    f: PerturbedMap
    base: np.ndarray
    kind: str
    radius: float
    grid: np.ndarray
    table: np.ndarray
    frame: np.ndarray
    window: int
    _interp: list = field(default_factory=list, repr=False)

    @property
    def param_dim(self) -> int:
        return self.frame.shape[1]

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, float)
        fn = chart_s if self.kind == "stable" else chart_u
        return fn(self.f, np.broadcast_to(self.base, v.shape[:-1] + (self.f.dim,)), v, self.window)

    def interpolate(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, float))
        if np.any(np.abs(v) > self.radius + 1e-12):
            raise OutOfChart("parameter outside the chart radius")
        if not self._interp:
            axes = (self.grid,) * self.param_dim
            for j in range(self.f.dim):
                self._interp.append(RegularGridInterpolator(axes, self.table[..., j], method="cubic"))
        return np.stack([it(v) for it in self._interp], axis=-1)

    def invariance_defect(self, n_samples: int = 8, seed: int = 0) -> float:
        """max distance from f(chart points) to the chart of the same kind at f(base)."""
        rng = np.random.default_rng(seed)
        v = (rng.random((n_samples, self.param_dim)) * 2 - 1) * self.radius
        pts = self(v)
        fb = self.f.eval_lift(self.base)
        fp = self.f.eval_lift(pts)
        coords = stable_coords if self.kind == "stable" else unstable_coords
        back = (chart_s if self.kind == "stable" else chart_u)(
            self.f, np.broadcast_to(fb, fp.shape), coords(self.f, fp - fb), self.window)
        return float(np.max(np.linalg.norm(back - fp, axis=-1)))


def leaf_chart(f: PerturbedMap, x, kind: str, radius: float = 0.1, resolution: int = 9,
               window: int | None = None) -> LeafChart:
    if kind not in ("stable", "unstable"):
        raise InvalidInput("kind must be 'stable' or 'unstable'")
    x = coerce_points(x, f.dim).reshape(f.dim)
    M = default_window(f) if window is None else int(window)
    k = f.dim_stable if kind == "stable" else f.dim_unstable
    grid = np.linspace(-radius, radius, resolution)
    params = np.stack(np.meshgrid(*([grid] * k), indexing="ij"), axis=-1).reshape(-1, k)
    fn = chart_s if kind == "stable" else chart_u
    pts = fn(f, np.broadcast_to(x, (len(params), f.dim)), params, M)
    table = pts.reshape((resolution,) * k + (f.dim,))
    # tangent frame at the base from a small symmetric secant
    h = 1e-5
    E = np.eye(k)
    plus = fn(f, np.broadcast_to(x, (k, f.dim)), h * E, M)
    minus = fn(f, np.broadcast_to(x, (k, f.dim)), -h * E, M)
    frame = np.linalg.qr(((plus - minus) / (2 * h)).T)[0]
    return LeafChart(f, x, kind, radius, grid, table, frame, M)


# ---------------------------------------------------------------- affine parameter

def _stable_orientation(f: PerturbedMap, x) -> np.ndarray:
    """Unit E^s(x) vector with positive E^s_L coordinate (dim E^s = 1)."""
    Qs, _, _ = splitting_frames(f, x)
    e = Qs[..., 0]
    sgn = np.sign(stable_coords(f, e)[..., 0])
    return e * sgn[..., None]


def stable_jacobian_factor(f: PerturbedMap, x) -> np.ndarray:
    """Signed derivative of f along oriented stable leaves at x."""
    _require_codim1_stable(f)
    x = np.asarray(x, float)
    e0 = _stable_orientation(f, x)
    e1 = _stable_orientation(f, f.eval_lift(x))
    return np.einsum("...i,...i->...", np.einsum("...ij,...j->...i", f.derivative(x), e0), e1)


def stable_affine_parameter(f: PerturbedMap, x, y, nodes: int = 24,
                            window: int | None = None) -> float:
    """Affine parameter of y along W^s(x), normalised to unit speed at x.

    Integral over the leaf arc from x to y of prod_{n>=0} J^s f(f^n z) / J^s f(f^n x)
    (Gauss-Legendre in the E^s_L coordinate t). With this normalisation
    param(f x, f y) = J^s f(x) param(x, y) and
    param(x, z) = param(x, y) + rho_x(y) param(y, z).
    """
    _require_codim1_stable(f)
    x = coerce_points(x, f.dim).reshape(f.dim)
    y = coerce_points(y, f.dim).reshape(f.dim)
    M = default_window(f) if window is None else int(window)
    t_y = float(stable_coords(f, y - x)[0])
    back = chart_s(f, x, [t_y], M)
    if np.linalg.norm(back - y) > 1e-8:
        raise InvalidInput("y does not lie on the stable leaf of x")
    if t_y == 0.0:
        return 0.0
    g, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * t_y * (g + 1)
    h = 1e-4 * max(abs(t_y), 1e-3)
    offs = np.concatenate([t, t + h, t - h, t + 2 * h, t - 2 * h])[:, None]
    pts = chart_s(f, np.broadcast_to(x, (len(offs), f.dim)), offs, M).reshape(5, nodes, f.dim)
    dz = (8 * (pts[1] - pts[2]) - (pts[3] - pts[4])) / (12 * h)
    speed = np.linalg.norm(dz, axis=-1)
    # log density: sum_{n>=0} log J^s(f^n z) - log J^s(f^n x), from paired orbits
    pairs = pair_orbits(f, np.broadcast_to(x, (nodes, f.dim)), t[:, None], "S", M)
    dens = series_from_pairs(LogJs(f), pairs, f, 1e-13, sign_partner_minus_ref=True)
    integrand = np.exp(dens.value) * speed
    return float(0.5 * t_y * np.dot(w, integrand))


def stable_density(f: PerturbedMap, x, y, window: int | None = None) -> float:
    """rho_x(y) = prod_{n>=0} J^s f(f^n y) / J^s f(f^n x) for y on W^s(x)."""
    x = coerce_points(x, f.dim).reshape(1, f.dim)
    y = coerce_points(y, f.dim).reshape(1, f.dim)
    pairs = pair_orbits(f, x, stable_coords(f, y - x), "S", window)
    return float(np.exp(series_from_pairs(LogJs(f), pairs, f, 1e-13, True).value[0]))
