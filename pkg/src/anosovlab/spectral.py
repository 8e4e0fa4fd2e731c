"""Linear algebra for integer automorphisms of the torus.

Exact integer arithmetic (determinant, characteristic polynomial,
factorisation over Q) is done with Python ints and Fractions. Eigenvalues
come from LAPACK via numpy. Rate and bunching arithmetic lives here too.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InvalidInput, InvalidRates, UnsupportedDimension, WrongSignature

MAX_FACTOR_DIM = 6


def _int_det(rows: Sequence[Sequence[int]]) -> int:
    """Exact determinant by fraction-free Bareiss elimination."""
    a = [list(map(int, r)) for r in rows]
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


@dataclass(frozen=True)
class IntegerAutomorphism:
    """A matrix in GL(d, Z) with d >= 2."""

    entries: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = self.entries
        try:
            rows = tuple(tuple(int(v) for v in r) for r in rows)
            ok = all(float(v) == float(w) for r, r0 in zip(rows, self.entries) for v, w in zip(r, r0))
        except (TypeError, ValueError) as exc:
            raise InvalidInput(f"matrix entries must be integers: {exc}") from None
        if not ok:
            raise InvalidInput("matrix entries must be integers")
        d = len(rows)
        if d < 2 or any(len(r) != d for r in rows):
            raise InvalidInput(f"expected a square matrix of size >= 2, got {d} rows")
        det = _int_det(rows)
        if abs(det) != 1:
            raise InvalidInput(f"matrix is not unimodular (det = {det})")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def from_array(cls, m) -> IntegerAutomorphism:
        arr = np.asarray(m)
        if arr.ndim != 2:
            raise InvalidInput("matrix must be two-dimensional")
        if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
            raise InvalidInput("matrix entries must be integers")
        return cls(tuple(tuple(int(v) for v in r) for r in np.round(arr).astype(np.int64)))

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    @property
    def det(self) -> int:
        return _int_det(self.entries)

    def inverse(self) -> IntegerAutomorphism:
        inv = np.linalg.inv(self.array)
        return IntegerAutomorphism.from_array(np.round(inv))

    def power(self, k: int) -> list[list[int]]:
        """Exact integer power L^k for k >= 0."""
        d = self.dim
        out = [[int(i == j) for j in range(d)] for i in range(d)]
        for _ in range(k):
            out = [[sum(out[i][t] * self.entries[t][j] for t in range(d)) for j in range(d)]
                   for i in range(d)]
        return out

    def to_list(self) -> list[list[int]]:
        return [list(r) for r in self.entries]


def as_automorphism(m) -> IntegerAutomorphism:
    return m if isinstance(m, IntegerAutomorphism) else IntegerAutomorphism.from_array(m)


# ---------------------------------------------------------------- polynomials

def charpoly(m) -> list[int]:
    """Characteristic polynomial det(xI - M), coefficients from x^d down.

    Faddeev-LeVerrier over the rationals; the result is integral.
    """
    M = as_automorphism(m)
    d = M.dim
    A = [[Fraction(v) for v in r] for r in M.entries]
    coeffs = [Fraction(1)]
    Mk = [[Fraction(0)] * d for _ in range(d)]
    for k in range(1, d + 1):
        # Mk <- A @ Mk + c_{k-1} I
        AM = [[sum(A[i][t] * Mk[t][j] for t in range(d)) for j in range(d)] for i in range(d)]
        for i in range(d):
            AM[i][i] += coeffs[-1]
        Mk = AM
        AMk = [[sum(A[i][t] * Mk[t][j] for t in range(d)) for j in range(d)] for i in range(d)]
        coeffs.append(-sum(AMk[i][i] for i in range(d)) / k)
    assert all(c.denominator == 1 for c in coeffs)
    return [int(c) for c in coeffs]


def _polydivmod(num: list[int], den: list[int]) -> tuple[list[int], list[int]]:
    """Division by a monic integer polynomial (highest degree first)."""
    num = list(num)
    q = []
    for i in range(len(num) - len(den) + 1):
        c = num[i]
        q.append(c)
        if c:
            for j in range(1, len(den)):
                num[i + j] -= c * den[j]
    rem = num[len(num) - len(den) + 1:]
    return q, rem


def _polyval(p: list[int], x: int) -> int:
    acc = 0
    for c in p:
        acc = acc * x + c
    return acc


def _divisors(n: int) -> list[int]:
    n = abs(n)
    ds = [k for k in range(1, n + 1) if n % k == 0]
    return ds + [-k for k in ds]


def _value_divides(gv: int, v: int) -> bool:
    # g | p forces g(x) | p(x) for every integer x
    if v == 0:
        return True
    return gv != 0 and v % gv == 0


def find_monic_factor(p: list[int]) -> list[int] | None:
    """Return a nontrivial monic integer factor of the monic polynomial p.

    Degree-1 factors come from the rational root test; higher degrees from an
    enumeration of candidates whose coefficients obey the Landau-Mignotte
    bound |c_j| <= binom(k, j) * ||p||_2, pruned by divisibility of values
    at +-1 and 2.
    """
    n = len(p) - 1
    if n < 2:
        return None
    if p[-1] == 0:
        return [1, 0]
    for r in _divisors(p[-1]):
        if _polyval(p, r) == 0:
            return [1, -r]
    bound = math.isqrt(sum(c * c for c in p)) + 1
    checks = [(x, _polyval(p, x)) for x in (1, -1, 2, -2)]
    for k in range(2, n // 2 + 1):
        ranges = [range(-math.comb(k, j) * bound, math.comb(k, j) * bound + 1) for j in range(1, k)]
        for c0 in _divisors(p[-1]):
            for mid in itertools.product(*ranges):
                g = [1, *mid, c0]
                if not all(_value_divides(_polyval(g, x), v) for x, v in checks):
                    continue
                _, rem = _polydivmod(p, g)
                if not any(rem):
                    return g
    return None


def is_irreducible(m) -> bool:
    """True iff the characteristic polynomial is irreducible over Q."""
    M = as_automorphism(m)
    if M.dim > MAX_FACTOR_DIM:
        raise UnsupportedDimension(f"irreducibility supported for d <= {MAX_FACTOR_DIM}, got {M.dim}")
    # Gauss: irreducible over Q iff no monic integer factor.
    return find_monic_factor(charpoly(M)) is None


# ---------------------------------------------------------------- spectra

@dataclass(frozen=True)
class SpectralData:
    eigenvalues: tuple[complex, ...]
    moduli_stable: tuple[float, ...]
    moduli_unstable: tuple[float, ...]
    mu: float | None
    hyperbolic: bool
    dim_stable: int
    dim_unstable: int

    @property
    def xi_min(self) -> float:
        return self.moduli_unstable[0]

    @property
    def xi_max(self) -> float:
        return self.moduli_unstable[-1]

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "moduli_stable": list(self.moduli_stable),
            "moduli_unstable": list(self.moduli_unstable),
            "mu": self.mu,
            "hyperbolic": self.hyperbolic,
            "dim_stable": self.dim_stable,
            "dim_unstable": self.dim_unstable,
        }


def _dedup(values: Sequence[float], rtol: float) -> list[float]:
    out: list[float] = []
    for v in sorted(values):
        if not out or abs(v - out[-1]) > rtol * max(abs(v), 1.0):
            out.append(v)
    return out


def spectral_analysis(m, tol: float = 1e-9) -> SpectralData:
    """Eigenvalues of M split at modulus 1.

    A modulus within ``tol`` of 1 marks the matrix as non-hyperbolic; such
    eigenvalues are left out of both the stable and unstable lists.
    """
    M = as_automorphism(m)
    ev = np.linalg.eigvals(M.array)
    ev = ev[np.lexsort((ev.imag, np.abs(ev)))]
    mods = np.abs(ev)
    stable = [float(r) for r in mods if r < 1 - tol]
    unstable = [float(r) for r in mods if r > 1 + tol]
    hyperbolic = len(stable) + len(unstable) == M.dim
    mu = 1.0 / max(stable) if stable else None
    return SpectralData(
        eigenvalues=tuple(complex(z) for z in ev),
        moduli_stable=tuple(sorted(stable)),
        moduli_unstable=tuple(_dedup(unstable, tol)),
        mu=mu,
        hyperbolic=hyperbolic,
        dim_stable=len(stable),
        dim_unstable=len(unstable),
    )


@dataclass(frozen=True)
class GenericityReport:
    hyperbolic: bool
    irreducible: bool
    no_three_equal_moduli: bool
    equal_moduli_only_conjugate_pairs: bool
    generic: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "generic", bool(
            self.hyperbolic and self.irreducible and self.no_three_equal_moduli
            and self.equal_moduli_only_conjugate_pairs))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("hyperbolic", "irreducible", "no_three_equal_moduli",
                 "equal_moduli_only_conjugate_pairs", "generic")}


def genericity_check(m, tol: float = 1e-9) -> GenericityReport:
    M = as_automorphism(m)
    sd = spectral_analysis(M, tol)
    ev = np.array(sd.eigenvalues)
    mods = np.abs(ev)
    groups: list[list[int]] = []
    for i in np.argsort(mods):
        if groups and abs(mods[i] - mods[groups[-1][0]]) <= tol * mods[i]:
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    no_three = all(len(g) <= 2 for g in groups)
    pairs_ok = True
    for g in groups:
        if len(g) == 2:
            z, w = ev[g[0]], ev[g[1]]
            scale = max(abs(z), 1.0)
            is_pair = abs(z.imag) > tol * scale and abs(z - np.conj(w)) <= 1e3 * tol * scale
            pairs_ok &= bool(is_pair)
    return GenericityReport(
        hyperbolic=sd.hyperbolic,
        irreducible=is_irreducible(M),
        no_three_equal_moduli=no_three,
        equal_moduli_only_conjugate_pairs=pairs_ok,
    )


# ---------------------------------------------------------------- rates

@dataclass(frozen=True)
class RateBounds:
    """Contraction rates on E^s (mu) and expansion rates on E^u (lambda)."""

    mu_minus: float
    mu_plus: float
    lambda_minus: float
    lambda_plus: float
    C: float = 1.0

    def __post_init__(self):
        rates = (self.mu_minus, self.mu_plus, self.lambda_minus, self.lambda_plus)
        if not all(np.isfinite(r) and r > 1 for r in rates):
            raise InvalidRates(f"all rates must exceed 1, got {rates}")
        tol = 1e-12
        if self.mu_minus > self.mu_plus * (1 + tol) or self.lambda_minus > self.lambda_plus * (1 + tol):
            raise InvalidRates("expected mu_minus <= mu_plus and lambda_minus <= lambda_plus")
        if not self.C >= 1:
            raise InvalidRates(f"C must be >= 1, got {self.C}")

    def to_dict(self) -> dict:
        return {"mu_minus": self.mu_minus, "mu_plus": self.mu_plus,
                "lambda_minus": self.lambda_minus, "lambda_plus": self.lambda_plus, "C": self.C}


def linear_rates(m, tol: float = 1e-9) -> RateBounds:
    """Exact rates of the linear model read off its spectrum."""
    sd = spectral_analysis(m, tol)
    if not sd.hyperbolic or not sd.dim_stable or not sd.dim_unstable:
        raise InvalidRates("matrix is not hyperbolic")
    return RateBounds(
        mu_minus=1.0 / sd.moduli_stable[-1], mu_plus=1.0 / sd.moduli_stable[0],
        lambda_minus=sd.moduli_unstable[0], lambda_plus=sd.moduli_unstable[-1])


@dataclass(frozen=True)
class BunchingParams:
    b_s: float
    b_u: float


def bunching_from_rates(r: RateBounds) -> BunchingParams:
    lm, lp = math.log(r.lambda_minus), math.log(r.lambda_plus)
    mm, mp = math.log(r.mu_minus), math.log(r.mu_plus)
    return BunchingParams(b_s=(lm + mm) / lp, b_u=(mm + lm) / mp)


@dataclass(frozen=True)
class RateConditionQuery:
    kappa: float
    rates: RateBounds
    bunching: BunchingParams | None = None
    eta: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise InvalidInput(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.bunching is None:
            object.__setattr__(self, "bunching", bunching_from_rates(self.rates))


def gmt_rate_condition(q: RateConditionQuery) -> bool:
    """mu_-^(-min{kappa, kappa b_u, b_s - 1}) * lambda_+ < 1, strictly.

    Compared in log form; values within a few ulps of the boundary count as
    equality, hence false.
    """
    b = q.bunching
    e = min(q.kappa, q.kappa * b.b_u, b.b_s - 1)
    lhs = -e * math.log(q.rates.mu_minus) + math.log(q.rates.lambda_plus)
    scale = abs(e * math.log(q.rates.mu_minus)) + abs(math.log(q.rates.lambda_plus))
    return lhs < -1e-12 * scale


def codim1_bunching_check(s: SpectralData) -> bool:
    """(log mu)^2 - (log xi_l)^2 > log mu (log xi_l - log xi_1)."""
    if s.dim_stable != 1:
        raise WrongSignature(f"needs a one-dimensional stable space, got {s.dim_stable}")
    lm = math.log(s.mu)
    l1, ll = math.log(s.xi_min), math.log(s.xi_max)
    lhs = lm * lm - ll * ll
    rhs = lm * (ll - l1)
    return lhs - rhs > 1e-12 * (lm * lm)


def matching_regularity_k(eta: float) -> dict:
    """k = (2 eta + 2)/(2 eta + 1), admissible iff k > eta iff 2 eta^2 - eta - 2 < 0."""
    if not eta > 0:
        raise InvalidInput("eta must be positive")
    k = (2 * eta + 2) / (2 * eta + 1)
    # Evaluate the quadratic in factored form about its positive root so the
    # sign is exact near the threshold.
    root = (1 + math.sqrt(17)) / 4
    admissible = eta < root
    return {"k": k, "admissible": admissible, "quadratic": 2 * eta * eta - eta - 2}


ETA_THRESHOLD = (1 + math.sqrt(17)) / 4


def brin_pinching_check(r: RateBounds) -> dict:
    lm, lp = math.log(r.lambda_minus), math.log(r.lambda_plus)
    mm, mp = math.log(r.mu_minus), math.log(r.mu_plus)
    tol = 1e-12
    first = (1 + lm / lp) - mp / mm > tol
    second = (1 + mm / mp) - lp / lm > tol
    return {"first": bool(first), "second": bool(second)}
