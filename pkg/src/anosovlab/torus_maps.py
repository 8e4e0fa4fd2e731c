"""Perturbed hyperbolic toral automorphisms f = L + eps * p on T^d.

Points are numpy arrays whose last axis has length d; every routine is
vectorised over leading axes. Lifted coordinates are used throughout and
``mod1`` projects to the fundamental domain [0, 1)^d.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (InvalidInput, NoConvergence, NotAnosovEvidence,
                     SplittingNotResolved)
from .spectral import IntegerAutomorphism, RateBounds, as_automorphism, spectral_analysis

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def mod1(x: np.ndarray) -> np.ndarray:
    y = np.asarray(x, dtype=float)
    y = y - np.floor(y)
    return np.where(y >= 1.0, 0.0, y)


def torus_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean distance on T^d (shortest lattice representative)."""
    diff = np.asarray(x, float) - np.asarray(y, float)
    diff -= np.round(diff)
    return np.linalg.norm(diff, axis=-1)


@dataclass(frozen=True)
class FourierMode:
    """One term ``coefficient * sin(2 pi k.x)`` or ``* cos(2 pi k.x)``.

    A cos mode with zero frequency is a constant translation.
    """

    frequency: tuple[int, ...]
    coefficient: tuple[float, ...]
    kind: str = "sin"

    def __post_init__(self):
        freq = tuple(int(v) for v in self.frequency)
        if any(float(a) != float(b) for a, b in zip(freq, self.frequency)):
            raise InvalidInput("mode frequencies must be integers")
        coef = tuple(float(v) for v in self.coefficient)
        if len(freq) != len(coef):
            raise InvalidInput("mode frequency and coefficient must have the same length")
        if self.kind not in ("sin", "cos"):
            raise InvalidInput(f"mode kind must be 'sin' or 'cos', got {self.kind!r}")
        if self.kind == "sin" and not any(freq):
            raise InvalidInput("a sin mode needs a nonzero frequency")
        object.__setattr__(self, "frequency", freq)
        object.__setattr__(self, "coefficient", coef)

    def to_dict(self) -> dict:
        return {"frequency": list(self.frequency), "coefficient": list(self.coefficient),
                "kind": self.kind}


def _real_eigenbases(L: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of the stable and unstable subspaces of L."""
    ev, vec = np.linalg.eig(L)
    cols_s, cols_u = [], []
    done = np.zeros(len(ev), bool)
    for i in np.argsort(np.abs(ev)):
        if done[i]:
            continue
        target = cols_s if abs(ev[i]) < 1 else cols_u
        v = vec[:, i]
        if abs(ev[i].imag) > tol * max(1.0, abs(ev[i])):
            target.extend([v.real, v.imag])
            j = np.argmin(np.abs(ev - np.conj(ev[i])) + done * 1e9 + (np.arange(len(ev)) == i) * 1e9)
            done[j] = True
        else:
            target.append(v.real)
        done[i] = True
    qs = np.linalg.qr(np.array(cols_s).T)[0]
    qu = np.linalg.qr(np.array(cols_u).T)[0]
    return qs, qu


@dataclass(frozen=True, eq=False)
class PerturbedMap:
    """Lift F(x) = L x + eps p(x) with p a real trigonometric polynomial."""

    linear: IntegerAutomorphism
    modes: tuple[FourierMode, ...] = ()
    epsilon: float = 0.0
    volume_preserving_projection: bool = False
    _freq: np.ndarray = field(init=False, repr=False)
    _coef: np.ndarray = field(init=False, repr=False)
    _phase: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        L = as_automorphism(self.linear)
        object.__setattr__(self, "linear", L)
        modes = tuple(m if isinstance(m, FourierMode) else FourierMode(**m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        d = L.dim
        if any(len(m.frequency) != d for m in modes):
            raise InvalidInput(f"every mode must have dimension {d}")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise InvalidInput("epsilon must be a finite nonnegative real")
        freq = np.array([m.frequency for m in modes], float).reshape(-1, d)
        coef = np.array([m.coefficient for m in modes], float).reshape(-1, d)
        phase = np.array([0.0 if m.kind == "sin" else np.pi / 2 for m in modes])
        if self.volume_preserving_projection and len(modes):
            coef = _divergence_free(L.array, freq, coef)
        object.__setattr__(self, "_freq", freq)
        object.__setattr__(self, "_coef", coef)
        object.__setattr__(self, "_phase", phase)
        if self.epsilon > self.epsilon_budget:
            log.warning("epsilon %.3g exceeds the C1-smallness budget %.3g", self.epsilon,
                        self.epsilon_budget)

    # ------------------------------------------------------------ construction
    @classmethod
    def linear_map(cls, matrix) -> PerturbedMap:
        return cls(as_automorphism(matrix))

    @classmethod
    def from_dict(cls, spec: dict) -> PerturbedMap:
        modes = tuple(FourierMode(tuple(m["frequency"]), tuple(m["coefficient"]),
                                  m.get("kind", "sin")) for m in spec.get("modes", []))
        return cls(IntegerAutomorphism.from_array(spec["matrix"]), modes,
                   float(spec.get("epsilon", 0.0)),
                   bool(spec.get("volume_preserving", False)))

    def to_dict(self) -> dict:
        return {"matrix": self.linear.to_list(), "modes": [m.to_dict() for m in self.modes],
                "epsilon": self.epsilon, "volume_preserving": self.volume_preserving_projection}

    def with_epsilon(self, epsilon: float) -> PerturbedMap:
        return PerturbedMap(self.linear, self.modes, epsilon, self.volume_preserving_projection)

    # ------------------------------------------------------------ linear data
    @property
    def dim(self) -> int:
        return self.linear.dim

    @cached_property
    def L(self) -> np.ndarray:
        return self.linear.array

    @cached_property
    def L_inv(self) -> np.ndarray:
        return np.round(np.linalg.inv(self.L))

    @cached_property
    def spectrum(self):
        return spectral_analysis(self.linear)

    @cached_property
    def linear_bases(self) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal bases (Q_s, Q_u) of the L-invariant subspaces."""
        return _real_eigenbases(self.L)

    @cached_property
    def adapted_basis(self) -> np.ndarray:
        """Columns [Q_s | Q_u]; its inverse gives (stable, unstable) coordinates."""
        qs, qu = self.linear_bases
        return np.hstack([qs, qu])

    @cached_property
    def adapted_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.adapted_basis)

    @property
    def dim_stable(self) -> int:
        return self.linear_bases[0].shape[1]

    @property
    def dim_unstable(self) -> int:
        return self.linear_bases[1].shape[1]

    @cached_property
    def dp_sup_bound(self) -> float:
        """Upper bound for sup ||Dp|| (operator 2-norm)."""
        if not len(self._freq):
            return 0.0
        return float(np.sum(TWO_PI * np.linalg.norm(self._coef, axis=1)
                            * np.linalg.norm(self._freq, axis=1)))

    @cached_property
    def epsilon_budget(self) -> float:
        """Heuristic C1-smallness budget for eps.

        Half the spectral gap, divided by ||Dp||, the conditioning of the
        splitting and ||L^-1||. Below this the inverse iteration contracts and
        the linear cone fields stay invariant.
        """
        sd = self.spectrum
        if not sd.hyperbolic:
            return 0.0
        gap = min(math.log(sd.moduli_unstable[0]), -math.log(sd.moduli_stable[-1]))
        D = self.dp_sup_bound
        if D == 0:
            return math.inf
        cond = np.linalg.cond(self.adapted_basis)
        return 0.5 * (1 - math.exp(-gap)) / (D * cond * np.linalg.norm(self.L_inv, 2))

    @property
    def within_budget(self) -> bool:
        return self.epsilon <= self.epsilon_budget

    @cached_property
    def measured_rates(self) -> RateBounds:
        """Empirical rates with default sampling; cached because tail bounds
        consult them constantly."""
        return estimate_rates(self)

    # ------------------------------------------------------------ evaluation
    def perturbation(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if not len(self._freq):
            return np.zeros_like(x)
        theta = TWO_PI * (x @ self._freq.T) + self._phase
        return np.sin(theta) @ self._coef

    def perturbation_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        d = self.dim
        if not len(self._freq):
            return np.zeros(x.shape[:-1] + (d, d))
        theta = TWO_PI * (x @ self._freq.T) + self._phase
        return np.einsum("...j,ja,jb->...ab", np.cos(theta), self._coef, TWO_PI * self._freq)

    def eval_lift(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        out = x @ self.L.T
        if self.epsilon:
            out = out + self.epsilon * self.perturbation(x)
        return out

    def eval(self, x) -> np.ndarray:
        return mod1(self.eval_lift(x))

    __call__ = eval

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if not self.epsilon:
            return np.broadcast_to(self.L, x.shape[:-1] + (self.dim, self.dim)).copy()
        return self.L + self.epsilon * self.perturbation_derivative(x)

    def inverse_lift(self, y, tol: float = 1e-14, max_iter: int = 60) -> np.ndarray:
        """Solve F(x) = y in the lift by Newton, started from L^-1 y."""
        y = np.asarray(y, float)
        x = y @ self.L_inv.T
        if not self.epsilon:
            return x
        scale = 1.0 + np.max(np.abs(y), initial=0.0)
        for _ in range(max_iter):
            r = self.eval_lift(x) - y
            err = np.max(np.abs(r), initial=0.0)
            if err <= tol * scale:
                return x
            x = x - np.linalg.solve(self.derivative(x), r[..., None])[..., 0]
        r = np.max(np.abs(self.eval_lift(x) - y), initial=0.0)
        if r <= 1e3 * tol * scale:
            return x
        raise NoConvergence(f"inverse iteration stalled at residual {r:.3e}")

    def inverse_eval(self, y, tol: float = 1e-14) -> np.ndarray:
        return mod1(self.inverse_lift(y, tol))

    def shift(self, x, y) -> np.ndarray:
        """Integer vector m with F(x) - m closest to y."""
        return np.round(self.eval_lift(x) - np.asarray(y, float))


def _divergence_free(L: np.ndarray, freq: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Project coefficients so that det(L + eps Dp) = det L identically.

    With u_j = L^-1 a_j orthogonal to every nonzero frequency, the matrix
    L^-1 Dp is a sum of rank-one terms u_j k_j^T that multiply to zero,
    hence nilpotent, and det(I + eps L^-1 Dp) = 1 for every x and eps.
    """
    nonconst = np.any(freq != 0, axis=1)
    if not nonconst.any():
        return coef
    K = freq[nonconst]
    # orthonormal basis of span(K)
    u_, s_, _ = np.linalg.svd(K.T, full_matrices=False)
    span = u_[:, s_ > 1e-12 * s_.max()]
    Linv = np.linalg.inv(L)
    out = coef.copy()
    for j in np.nonzero(nonconst)[0]:
        u = Linv @ coef[j]
        u = u - span @ (span.T @ u)
        out[j] = L @ u
    assert np.max(np.abs(K @ (Linv @ out[nonconst].T)), initial=0.0) < 1e-12
    return out


# ---------------------------------------------------------------- orbits

def forward_orbit(f: PerturbedMap, x, n: int) -> np.ndarray:
    """Points x, f(x), ..., f^n(x); the first point keeps its lift, the rest
    are reduced mod 1. Shape (..., n+1, d)."""
    x = np.asarray(x, float)
    pts = [x]
    for _ in range(n):
        pts.append(mod1(f.eval_lift(pts[-1])))
    return np.stack(pts, axis=-2)


def backward_orbit(f: PerturbedMap, x, n: int) -> np.ndarray:
    """Points f^-n(x), ..., f^-1(x), x in increasing time order."""
    x = np.asarray(x, float)
    pts = [x]
    for _ in range(n):
        pts.append(mod1(f.inverse_lift(pts[-1])))
    return np.stack(pts[::-1], axis=-2)


def _default_frame(d: int, k: int) -> np.ndarray:
    # fixed generic frame; irrational entries avoid invariant coordinate planes
    rng = np.random.default_rng(12345 + 31 * d + k)
    return np.linalg.qr(rng.normal(size=(d, k)))[0]


def gap_steps(f: PerturbedMap, digits: float = 16.0) -> int:
    """Power-iteration length for separating E^s and E^u to ~10^-digits."""
    sd = f.spectrum
    rate = math.log(sd.moduli_unstable[0]) - math.log(sd.moduli_stable[-1])
    return int(math.ceil(digits * math.log(10) / rate)) + 2


def push_frames(f: PerturbedMap, orbit: np.ndarray, frame: np.ndarray,
                backward: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Push an orthonormal frame along an orbit with QR renormalisation.

    ``orbit`` has shape (..., M+1, d) in increasing time. Forward mode starts
    at orbit[0] and returns the frame at every point together with the
    per-step triangular factors R_m with Df(z_m) Q_m = Q_{m+1} R_m. Backward
    mode starts at orbit[-1] and uses Df^-1, returning R_m with
    Df(z_m)^-1 Q_{m+1} = Q_m R_m.
    """
    orbit = np.asarray(orbit, float)
    M1 = orbit.shape[-2]
    lead = orbit.shape[:-2]
    d, k = frame.shape
    frames = np.empty(lead + (M1, d, k))
    Rs = np.empty(lead + (max(M1 - 1, 0), k, k))
    J = f.derivative(orbit[..., :-1, :])
    Q = np.broadcast_to(frame, lead + (d, k)).copy()
    if not backward:
        frames[..., 0, :, :] = Q
        for m in range(M1 - 1):
            Q, R = np.linalg.qr(J[..., m, :, :] @ Q)
            sgn = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
            sgn = np.where(sgn == 0, 1.0, sgn)
            Q = Q * sgn[..., None, :]
            R = R * sgn[..., :, None]
            frames[..., m + 1, :, :] = Q
            Rs[..., m, :, :] = R
    else:
        frames[..., M1 - 1, :, :] = Q
        for m in range(M1 - 2, -1, -1):
            Q, R = np.linalg.qr(np.linalg.solve(J[..., m, :, :], Q))
            sgn = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
            sgn = np.where(sgn == 0, 1.0, sgn)
            Q = Q * sgn[..., None, :]
            R = R * sgn[..., :, None]
            frames[..., m, :, :] = Q
            Rs[..., m, :, :] = R
    return frames, Rs


def unstable_frames_along(f: PerturbedMap, orbit: np.ndarray, K: int | None = None) -> np.ndarray:
    """Orthonormal E^u frames at every point of an orbit segment."""
    K = gap_steps(f) if K is None else K
    orbit = np.asarray(orbit, float)
    past = backward_orbit(f, orbit[..., 0, :], K)[..., :-1, :]
    full = np.concatenate([past, orbit], axis=-2)
    frames, _ = push_frames(f, full, _default_frame(f.dim, f.dim_unstable))
    return frames[..., K:, :, :]


def stable_frames_along(f: PerturbedMap, orbit: np.ndarray, K: int | None = None) -> np.ndarray:
    """Orthonormal E^s frames at every point of an orbit segment."""
    K = gap_steps(f) if K is None else K
    orbit = np.asarray(orbit, float)
    future = forward_orbit(f, orbit[..., -1, :], K)[..., 1:, :]
    full = np.concatenate([orbit, future], axis=-2)
    frames, _ = push_frames(f, full, _default_frame(f.dim, f.dim_stable), backward=True)
    return frames[..., : orbit.shape[-2], :, :]


def subspace_defect(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """sin of the largest principal angle between span(A) and span(Q).

    Q must be orthonormal; A is orthonormalised here.
    """
    Aq = np.linalg.qr(A)[0]
    resid = Aq - Q @ (np.swapaxes(Q, -1, -2) @ Aq)
    return np.linalg.norm(resid, ord=2, axis=(-2, -1)) if resid.ndim > 2 else np.linalg.norm(resid, 2)


@dataclass(frozen=True)
class SplittingFrame:
    point: np.ndarray
    stable_basis: np.ndarray
    unstable_basis: np.ndarray
    residual: float
    K: int


def splitting_frames(f: PerturbedMap, X, K: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched splitting: (Q_s, Q_u, residual) at points X of shape (..., d).

    The residual is the worse of the invariance defects of E^s and E^u over
    one step, measured at x against the frames computed at f(x).
    """
    X = np.asarray(X, float)
    K = gap_steps(f) if K is None else K
    seg = forward_orbit(f, X, 1)
    Qu = unstable_frames_along(f, seg, K)
    Qs = stable_frames_along(f, seg, K)
    J = f.derivative(X)
    du = subspace_defect(J @ Qu[..., 0, :, :], Qu[..., 1, :, :])
    ds = subspace_defect(J @ Qs[..., 0, :, :], Qs[..., 1, :, :])
    return Qs[..., 0, :, :], Qu[..., 0, :, :], np.maximum(du, ds)


def splitting_at(f: PerturbedMap, x, K: int | None = None, tol: float = 1e-8,
                 max_K: int = 2000) -> SplittingFrame:
    """E^s and E^u at one point, doubling K until the residual is below tol."""
    x = np.asarray(x, float)
    K = gap_steps(f) if K is None else K
    while True:
        Qs, Qu, res = splitting_frames(f, x, K)
        if res < tol:
            return SplittingFrame(x, Qs, Qu, float(res), K)
        if 2 * K > max_K:
            raise SplittingNotResolved(f"splitting residual {float(res):.2e} above {tol:.1e} at K={K}")
        K *= 2


def _sv_extremes(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.linalg.svd(P, compute_uv=False)
    return s[..., 0], s[..., -1]


def restricted_cocycles(f: PerturbedMap, X, n_steps: int, K: int | None = None):
    """Cumulative products of Df restricted to E^s and E^u along orbits.

    Returns (Ps, Pu) with shapes (..., n_steps+1, k, k): Df^n restricted to
    the invariant frames, expressed in the orthonormal frames at x and f^n x.
    """
    orbit = forward_orbit(f, X, n_steps)
    Qu = unstable_frames_along(f, orbit, K)
    Qs = stable_frames_along(f, orbit, K)
    J = f.derivative(orbit[..., :-1, :])
    QsT = np.swapaxes(Qs[..., 1:, :, :], -1, -2)
    QuT = np.swapaxes(Qu[..., 1:, :, :], -1, -2)
    Rs = QsT @ J @ Qs[..., :-1, :, :]
    Ru = QuT @ J @ Qu[..., :-1, :, :]

    def cumulate(R):
        out = np.empty(R.shape[:-3] + (n_steps + 1,) + R.shape[-2:])
        acc = np.broadcast_to(np.eye(R.shape[-1]), R.shape[:-3] + R.shape[-2:]).copy()
        out[..., 0, :, :] = acc
        for m in range(n_steps):
            acc = R[..., m, :, :] @ acc
            out[..., m + 1, :, :] = acc
        return out

    return cumulate(Rs), cumulate(Ru)


def estimate_rates(f: PerturbedMap, sample_size: int = 20, n_steps: int = 100,
                   seed: int = 0, safety: float = 1.1) -> RateBounds:
    """Empirical rates from sampled orbit windows of length n_steps.

    mu_-/mu_+ are the extreme n-th-root contraction factors on E^s and
    lambda_-/lambda_+ the expansion factors on E^u. C is the largest
    transient over all shorter windows, times ``safety``. Non-rigorous.
    """
    if not f.spectrum.hyperbolic:
        raise NotAnosovEvidence("the linear part is not hyperbolic")
    rng = np.random.default_rng(seed)
    X = rng.random((sample_size, f.dim))
    Ps, Pu = restricted_cocycles(f, X, n_steps)
    smax_s, smin_s = _sv_extremes(Ps)
    smax_u, smin_u = _sv_extremes(Pu)
    N = n_steps
    mu_minus = float(np.min(smax_s[:, N]) ** (-1.0 / N))
    mu_plus = float(np.max(smin_s[:, N]) ** (-1.0 / N))
    lam_minus = float(np.min(smin_u[:, N]) ** (1.0 / N))
    lam_plus = float(np.max(smax_u[:, N]) ** (1.0 / N))
    if min(mu_minus, lam_minus) <= 1.0:
        raise NotAnosovEvidence(f"measured rates mu_-={mu_minus:.4f}, lambda_-={lam_minus:.4f}")
    n = np.arange(N + 1)
    ratios = np.concatenate([
        smax_s * mu_minus ** n, mu_plus ** (-n) / smin_s,
        lam_minus ** n / smin_u, smax_u / lam_plus ** n], axis=-1)
    C = max(1.0, float(np.max(ratios))) * safety
    mu_plus, lam_plus = max(mu_plus, mu_minus), max(lam_plus, lam_minus)
    return RateBounds(mu_minus, mu_plus, lam_minus, lam_plus, C)


def coerce_points(x, d: int) -> np.ndarray:
    arr = np.asarray(x, float)
    if arr.shape[-1:] != (d,):
        raise InvalidInput(f"points must have trailing dimension {d}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("points must be finite")
    return arr


def mode_list(spec: Sequence[dict]) -> tuple[FourierMode, ...]:
    return tuple(FourierMode(tuple(m["frequency"]), tuple(m["coefficient"]), m.get("kind", "sin"))
                 for m in spec)
