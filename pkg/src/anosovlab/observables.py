"""Real-valued observables on the torus.

Each observable evaluates on arrays of points, knows its gradient, and
offers a Lipschitz bound for tail estimates. Dynamical Jacobians can
also be evaluated along a whole orbit segment, which is far cheaper than
pointwise evaluation since the splitting is transported along the orbit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidInput
from .torus_maps import (TWO_PI, PerturbedMap, stable_frames_along,
                         unstable_frames_along)


@dataclass(frozen=True)
class ScalarMode:
    frequency: tuple[int, ...]
    amplitude: float
    kind: str = "sin"

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise InvalidInput(f"mode kind must be 'sin' or 'cos', got {self.kind!r}")
        object.__setattr__(self, "frequency", tuple(int(v) for v in self.frequency))
        object.__setattr__(self, "amplitude", float(self.amplitude))


class Observable:
    """Base class. Subclasses implement ``_values`` and ``gradient``."""

    name = "observable"
    fd_step = 1e-5

    def __call__(self, x) -> np.ndarray:
        return self._values(np.asarray(x, float))

    def along(self, orbit) -> np.ndarray:
        """Values at each point of an orbit segment (..., M+1, d)."""
        return self(orbit)

    def gradient(self, x) -> np.ndarray:
        return fd_gradient(self, x, self.fd_step)

    @property
    def lipschitz(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"type": self.name}


def fd_gradient(phi, x, h: float) -> np.ndarray:
    """Fourth-order central differences in the coordinate directions."""
    x = np.asarray(x, float)
    d = x.shape[-1]
    E = np.eye(d)
    pts = np.stack([x + s * h * E[i] for i in range(d) for s in (1, -1, 2, -2)], axis=-2)
    v = phi(pts).reshape(x.shape[:-1] + (d, 4))
    return (8 * (v[..., 0] - v[..., 1]) - (v[..., 2] - v[..., 3])) / (12 * h)


def empirical_lipschitz(phi: Observable, d: int, n: int = 48, seed: int = 7,
                        safety: float = 2.0) -> float:
    rng = np.random.default_rng(seed)
    g = phi.gradient(rng.random((n, d)))
    return safety * float(np.max(np.linalg.norm(g, axis=-1)))


class TrigPoly(Observable):
    """c + sum_j a_j sin/cos(2 pi k_j . x)."""

    name = "trig"

    def __init__(self, modes=(), constant: float = 0.0, dim: int | None = None):
        self.modes = tuple(m if isinstance(m, ScalarMode) else ScalarMode(**m) for m in modes)
        self.constant = float(constant)
        if dim is None:
            if not self.modes:
                raise InvalidInput("dim is required for a constant trig polynomial")
            dim = len(self.modes[0].frequency)
        if any(len(m.frequency) != dim for m in self.modes):
            raise InvalidInput("all modes must share the dimension")
        self.dim = dim
        self._K = np.array([m.frequency for m in self.modes], float).reshape(-1, dim)
        self._a = np.array([m.amplitude for m in self.modes], float)
        self._ph = np.array([0.0 if m.kind == "sin" else np.pi / 2 for m in self.modes])

    @classmethod
    def random(cls, dim: int, n_modes: int, rng: np.random.Generator, max_freq: int = 2,
               amplitude: float = 1.0, constant: float = 0.0) -> TrigPoly:
        modes = []
        while len(modes) < n_modes:
            k = tuple(int(v) for v in rng.integers(-max_freq, max_freq + 1, size=dim))
            if not any(k):
                continue
            modes.append(ScalarMode(k, amplitude * rng.normal() / len(k), str(rng.choice(["sin", "cos"]))))
        return cls(modes, constant, dim)

    def _theta(self, x):
        return TWO_PI * (x @ self._K.T) + self._ph

    def _values(self, x):
        if not len(self._a):
            return np.full(x.shape[:-1], self.constant)
        return self.constant + np.sin(self._theta(x)) @ self._a

    def gradient(self, x):
        x = np.asarray(x, float)
        if not len(self._a):
            return np.zeros_like(x)
        return (np.cos(self._theta(x)) * self._a) @ (TWO_PI * self._K)

    @property
    def lipschitz(self) -> float:
        return float(np.sum(np.abs(self._a) * TWO_PI * np.linalg.norm(self._K, axis=1)))

    def to_dict(self) -> dict:
        return {"type": self.name, "constant": self.constant,
                "modes": [{"frequency": list(m.frequency), "amplitude": m.amplitude, "kind": m.kind}
                          for m in self.modes]}


class _Dynamical(Observable):
    def __init__(self, f: PerturbedMap):
        self.f = f

    def _values(self, x):
        return self.along(x[..., None, :])[..., 0]

    @cached_property
    def _lip(self) -> float:
        if not self.f.epsilon:
            return 0.0
        return empirical_lipschitz(self, self.f.dim)

    @property
    def lipschitz(self) -> float:
        return self._lip

    def gradient(self, x):
        x = np.asarray(x, float)
        if not self.f.epsilon:
            return np.zeros_like(x)
        return fd_gradient(self, x, self.fd_step)


def _log_volume(J: np.ndarray, Q: np.ndarray) -> np.ndarray:
    A = J @ Q
    return 0.5 * np.log(np.linalg.det(np.swapaxes(A, -1, -2) @ A))


class LogJu(_Dynamical):
    """log J^u f: log of the volume expansion of Df on E^u."""

    name = "log_ju"

    def along(self, orbit):
        orbit = np.asarray(orbit, float)
        return _log_volume(self.f.derivative(orbit), unstable_frames_along(self.f, orbit))


class LogJs(_Dynamical):
    """log J^s f: log of the volume contraction of Df on E^s."""

    name = "log_js"

    def along(self, orbit):
        orbit = np.asarray(orbit, float)
        return _log_volume(self.f.derivative(orbit), stable_frames_along(self.f, orbit))


class LogJFull(_Dynamical):
    """log |det Df|."""

    name = "log_jfull"

    def along(self, orbit):
        return np.log(np.abs(np.linalg.det(self.f.derivative(np.asarray(orbit, float)))))

    _values = along


class CoboundaryOf(Observable):
    """u - u o f + c for a trigonometric polynomial u."""

    name = "coboundary"

    def __init__(self, u: TrigPoly, c: float, f: PerturbedMap):
        self.u, self.c, self.f = u, float(c), f

    def _values(self, x):
        return self.u(x) - self.u(self.f.eval_lift(x)) + self.c

    def gradient(self, x):
        x = np.asarray(x, float)
        gu = self.u.gradient(self.f.eval_lift(x))
        return self.u.gradient(x) - np.einsum("...ji,...j->...i", self.f.derivative(x), gu)

    @property
    def lipschitz(self) -> float:
        df = np.linalg.norm(self.f.L, 2) + self.f.epsilon * self.f.dp_sup_bound
        return self.u.lipschitz * (1.0 + df)

    def to_dict(self) -> dict:
        return {"type": self.name, "c": self.c, "u": self.u.to_dict()}


def observable_from_dict(spec: dict, f: PerturbedMap | None, dim: int) -> Observable:
    kind = spec.get("type")
    if kind == "trig":
        return TrigPoly([ScalarMode(tuple(m["frequency"]), m["amplitude"], m.get("kind", "sin"))
                         for m in spec.get("modes", [])], spec.get("constant", 0.0), dim)
    if kind == "log_ju":
        return LogJu(f)
    if kind == "log_js":
        return LogJs(f)
    if kind == "log_jfull":
        return LogJFull(f)
    if kind == "coboundary":
        return CoboundaryOf(observable_from_dict(spec["u"], f, dim), spec.get("c", 0.0), f)
    raise InvalidInput(f"unknown observable type {kind!r}")
