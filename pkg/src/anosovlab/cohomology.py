"""Livshits-type tests built from periodic data.

Verdicts are evidence, not proofs: every report prints the threshold it
used and the noise estimate that threshold was derived from.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, PairingIncomplete
from .observables import LogJu, Observable
from .periodic import Catalog, PeriodicOrbit, periodic_data
from .torus_maps import PerturbedMap

NOISE_PER_STEP = 1e-12


def birkhoff_sum(f: PerturbedMap, phi: Observable, orbit: PeriodicOrbit) -> float:
    """Sum of phi over one period of the orbit."""
    pts = orbit.points(f)
    return float(np.sum(phi.along(pts)))


def _orbit_label(o: PeriodicOrbit) -> dict:
    return {"period": o.period, "index": list(o.index), "lattice": list(o.lattice),
            "base": [float(v) for v in o.base]}


@dataclass
class LivshitsReport:
    candidate_c: float
    max_deviation: float
    orbits_used: int
    verdict: str
    witness: tuple
    threshold: float
    noise_estimate: float
    averages: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"candidate_c": self.candidate_c, "max_deviation": self.max_deviation,
                "orbits_used": self.orbits_used, "verdict": self.verdict,
                "witness": [_orbit_label(o) for o in self.witness],
                "threshold": self.threshold, "noise_estimate": self.noise_estimate,
                "averages": self.averages}


def default_threshold(catalog: Catalog) -> tuple[float, float]:
    """(threshold, noise): noise grows with the longest period used."""
    kmax = max((o.period for o in catalog.orbits), default=1)
    noise = NOISE_PER_STEP * kmax
    return 100 * noise, noise


def livshits_constant_test(f: PerturbedMap, phi: Observable, catalog: Catalog,
                           threshold: float | None = None) -> LivshitsReport:
    """Compare periodic averages of phi; equal averages are necessary for
    phi to be an almost coboundary."""
    if not catalog.orbits:
        raise InvalidInput("empty periodic catalog")
    thr_default, noise = default_threshold(catalog)
    thr = thr_default if threshold is None else float(threshold)
    avgs = np.array([birkhoff_sum(f, phi, o) / o.period for o in catalog.orbits])
    c = float(np.mean(avgs))
    dev = np.abs(avgs - c)
    i_max, i_min = int(np.argmax(avgs)), int(np.argmin(avgs))
    worst = int(np.argmax(dev))
    other = i_min if worst == i_max else i_max
    md = float(dev.max())
    return LivshitsReport(c, md, len(avgs), "obstructed" if md > thr else "coboundary-consistent",
                          (catalog.orbits[worst], catalog.orbits[other]), thr, noise,
                          [float(v) for v in avgs])


def srb_equals_mme_test(f: PerturbedMap, catalog: Catalog,
                        threshold: float | None = None) -> LivshitsReport:
    """Livshits test for log J^u f; 'obstructed' is evidence that SRB != MME."""
    return livshits_constant_test(f, LogJu(f), catalog, threshold)


@dataclass
class MatchReport:
    rows: list[dict]
    max_gap_s: float
    max_gap_u: float
    max_gap_full: float
    tol: float
    stable_match: bool
    unstable_match: bool
    full_match: bool
    witness: dict | None

    def to_dict(self) -> dict:
        return {"max_gap_s": self.max_gap_s, "max_gap_u": self.max_gap_u,
                "max_gap_full": self.max_gap_full, "tol": self.tol,
                "stable_match": self.stable_match, "unstable_match": self.unstable_match,
                "full_match": self.full_match, "witness": self.witness, "rows": self.rows}

    def csv(self) -> str:
        buf = io.StringIO()
        cols = ["period", "index", "lattice", "log_js_1", "log_js_2", "log_ju_1", "log_ju_2",
                "gap_s", "gap_u", "gap_full"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["period"], " ".join(map(str, r["index"])), " ".join(map(str, r["lattice"]))]
                       + [repr(r[c]) for c in cols[3:]])
        return buf.getvalue()


def jacobian_matching_test(f1: PerturbedMap, f2: PerturbedMap, catalogs: tuple[Catalog, Catalog],
                           tol: float = 1e-8) -> MatchReport:
    """Compare log J^s f^k and log J^u f^k on orbits paired by linear seed.

    Gaps are signed (f1 minus f2). Full matching means both the stable and
    the unstable data agree. The witness is the orbit with the largest
    absolute unstable gap (stable gap if the unstable data match).
    """
    c1, c2 = catalogs
    k1, k2 = c1.by_key(), c2.by_key()
    if set(k1) != set(k2):
        missing = sorted(set(k1) ^ set(k2))
        raise PairingIncomplete(f"unpaired orbits: {missing[:5]}")
    rows = []
    for key in sorted(k1):
        o1, o2 = k1[key], k2[key]
        p1, p2 = periodic_data(f1, o1), periodic_data(f2, o2)
        ls1, ls2 = p1.log_jac_s, p2.log_jac_s
        lu1, lu2 = p1.log_jac_u, p2.log_jac_u
        rows.append({"period": o1.period, "index": list(o1.index), "lattice": list(o1.lattice),
                     "base_1": [float(v) for v in o1.base], "base_2": [float(v) for v in o2.base],
                     "log_js_1": ls1, "log_js_2": ls2, "log_ju_1": lu1, "log_ju_2": lu2,
                     "gap_s": ls1 - ls2, "gap_u": lu1 - lu2, "gap_full": (ls1 + lu1) - (ls2 + lu2)})
    gs = max((abs(r["gap_s"]) for r in rows), default=0.0)
    gu = max((abs(r["gap_u"]) for r in rows), default=0.0)
    gf = max((abs(r["gap_full"]) for r in rows), default=0.0)
    witness = None
    key = "gap_u" if gu > tol else ("gap_s" if gs > tol else None)
    if key is not None:
        witness = max(rows, key=lambda r: abs(r[key]))
        witness = {"kind": "unstable" if key == "gap_u" else "stable", "period": witness["period"],
                   "index": witness["index"], "lattice": witness["lattice"],
                   "base": witness["base_1"], "gap": witness[key]}
    return MatchReport(rows, gs, gu, gf, tol, gs <= tol, gu <= tol, gs <= tol and gu <= tol, witness)
