"""Command line experiment runner.

    anosovlab <subcommand> --config cfg.json --out results/ [--workers N] [--seed S] [--verbose]

Each subcommand writes ``<subcommand>.json`` (and CSV tables where
relevant) into the output directory. Payloads are deterministic for a
fixed config and seed: keys are sorted and no timestamps are written.
Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cohomology import jacobian_matching_test, livshits_constant_test, srb_equals_mme_test
from .config import load_config
from .errors import AnosovLabError, Inconclusive, InvalidInput
from .manifolds import (chart_s, chart_u, holonomy, holonomy_bracket, holonomy_jacobian_fd,
                        holonomy_jacobian_series, srb_density, srb_holonomy_identity_check)
from .observables import observable_from_dict
from .pcf import (UsPath, loop_decompose, matching_kernel, pcf_legs, pcf_path, pcf_paths,
                  random_null_homologous_loop, simple_loop)
from .periodic import build_catalog, catalog_csv
from .shadowing import (ConjugacyMap, catalog_pairing_defect, conjugacy_defect, grid_points,
                        holder_exponent_estimate, sup_distance_to_identity)
from .spectral import (bunching_from_rates, brin_pinching_check, charpoly,
                       codim1_bunching_check, genericity_check, is_irreducible,
                       linear_rates, spectral_analysis)
from .torus_maps import PerturbedMap, estimate_rates

log = logging.getLogger("anosovlab")

TRIVIAL_VERDICT = "conjugacy = identity; all obstructions vanish"
OBSTRUCTION_VERDICT = "periodic data obstruction"
MATCHING_VERDICT = "periodic data match; smooth conjugacy evidence"


# ---------------------------------------------------------------- serialisation

def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(obj.real), to_jsonable(obj.imag)]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(payload: dict) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2) + "\n"


class Run:
    """Shared state of one subcommand invocation."""

    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.rng = np.random.default_rng(cfg["seed"])
        self.f1 = PerturbedMap.from_dict(cfg["map"])
        self.f2 = PerturbedMap.from_dict(cfg["map2"]) if cfg["map2"] is not None else None
        self._catalogs: dict = {}

    @property
    def same_maps(self) -> bool:
        return self.f2 is None or self.cfg["map2"] == self.cfg["map"]

    def partner(self) -> PerturbedMap:
        if self.same_maps:
            return self.f1
        return self.f2

    def phi(self, which: int = 1):
        f = self.f1 if which == 1 else self.partner()
        spec = self.cfg["observable"] if which == 1 or self.cfg["observable2"] is None \
            else self.cfg["observable2"]
        return observable_from_dict(spec, f, f.dim)

    def catalog(self, f: PerturbedMap, continue_all: bool = False):
        key = (id(f), continue_all)
        if key not in self._catalogs:
            self._catalogs[key] = build_catalog(f, self.cfg["k_max"], workers=self.cfg["workers"],
                                                continue_all=continue_all)
        return self._catalogs[key]

    def points(self):
        """(a, b, x) from the config, or random with b on W^s(a), x on W^u(a)."""
        f = self.f1
        p = self.cfg["points"]
        a = np.array(p["a"], float) if p["a"] is not None else self.rng.random(f.dim)
        if p["b"] is not None:
            b = np.array(p["b"], float)
        else:
            t = self.rng.uniform(-0.15, 0.15, size=(1, f.dim_stable))
            b = chart_s(f, a[None], t)[0]
        if p["x"] is not None:
            x = np.array(p["x"], float)
        else:
            v = self.rng.uniform(-0.15, 0.15, size=(1, f.dim_unstable))
            x = chart_u(f, a[None], v)[0]
        return a, b, x

    def write(self, name: str, payload: dict) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        payload = {"command": name, "config": self.cfg, "seed": self.cfg["seed"],
                   "version": __version__, **payload}
        path = self.out / f"{name}.json"
        path.write_text(dumps(payload))
        log.info("wrote %s", path)
        return path

    def write_csv(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / f"{name}.csv"
        path.write_text(text)
        log.info("wrote %s", path)
        return path


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _catalog_dict(cat) -> dict:
    return {"k_max": cat.k_max, "counts": cat.counts, "continued": cat.continued,
            "max_residual": cat.max_residual, "failures": cat.failures,
            "orbits": [{"period": o.period, "index": list(o.index), "lattice": list(o.lattice),
                        "base": o.base, "residual": o.residual} for o in cat.orbits]}


# ---------------------------------------------------------------- subcommands

def cmd_classify(run: Run) -> dict:
    L = run.f1.linear
    sd = spectral_analysis(L)
    out = {"charpoly": charpoly(L), "spectrum": sd, "genericity": genericity_check(L),
           "irreducible": is_irreducible(L)}
    if sd.hyperbolic:
        r = linear_rates(L)
        out["linear_rates"] = r
        out["bunching"] = vars(bunching_from_rates(r))
        out["brin_pinching"] = brin_pinching_check(r)
        if sd.dim_stable == 1:
            out["codim1_bunching"] = codim1_bunching_check(sd)
    run.write("classify", out)
    return out


def cmd_rates(run: Run) -> dict:
    f = run.f1
    measured = estimate_rates(f, seed=run.cfg["seed"])
    out = {"linear_rates": linear_rates(f.linear), "measured_rates": measured,
           "bunching": vars(bunching_from_rates(measured)),
           "brin_pinching": brin_pinching_check(measured),
           "epsilon": f.epsilon, "epsilon_budget": f.epsilon_budget,
           "within_budget": f.within_budget}
    run.write("rates", out)
    return out


def cmd_periodic(run: Run) -> dict:
    cat = run.catalog(run.f1, continue_all=True)
    out = {"catalog": _catalog_dict(cat)}
    run.write("periodic", out)
    run.write_csv("periodic", catalog_csv(run.f1, cat))
    return out


def cmd_conjugacy(run: Run) -> dict:
    f1 = run.f1
    f2 = run.f2 if run.f2 is not None else PerturbedMap.linear_map(f1.linear)
    g = run.cfg["grid_size"]
    q = ConjugacyMap(f1, f2)
    out = {"defect": conjugacy_defect(q, g), "sup_distance_to_identity": sup_distance_to_identity(q, g),
           "window": q.window_used}
    out["pairing"] = catalog_pairing_defect(q, run.catalog(f1), run.catalog(f2))
    rows = []
    for eps in run.cfg["epsilons"]:
        qe = ConjugacyMap(f1.with_epsilon(eps), f2)
        rows.append((eps, sup_distance_to_identity(qe, g)))
    out["sweep"] = [{"epsilon": e, "sup_distance_to_identity": s} for e, s in rows]
    out["sweep_ratios"] = [rows[i][1] / rows[i + 1][1] if rows[i + 1][1] else None
                           for i in range(len(rows) - 1)]
    base = run.points()[2]
    scales = np.logspace(-4, -1, 7)
    out["holder"] = {"base": base, "scales": scales}
    for direction in ("stable", "unstable"):
        try:
            out["holder"][direction] = holder_exponent_estimate(q, base, direction, scales)
        except Inconclusive as exc:
            out["holder"][direction] = None
            out["holder"][f"{direction}_note"] = str(exc)
    X = grid_points(f1.dim, g)
    Y = q(X)
    run.write("conjugacy", out)
    run.write_csv("conjugacy_sweep", _csv(["epsilon", "sup_distance_to_identity"], rows))
    d = f1.dim
    run.write_csv("conjugacy_images", _csv([f"x{i}" for i in range(d)] + [f"hx{i}" for i in range(d)],
                                           [tuple(r) for r in np.hstack([X, Y])]))
    return out


def cmd_holonomy(run: Run) -> dict:
    f = run.f1
    a, b, x = run.points()
    br = holonomy_bracket(f, b, x)
    series = holonomy_jacobian_series(f, a, b, x, run.cfg["tol"], br=br)
    out = {"a": a, "b": b, "x": x, "image": br.point[0], "log_jacobian": series[0],
           "jacobian": float(np.exp(series.value[0]))}
    if f.dim_stable == 1:
        out["image_root_finding"] = holonomy(f, a, b, x).image
        out["jacobian_fd"] = float(holonomy_jacobian_fd(f, a, b, x))
    run.write("holonomy", out)
    return out


def cmd_srb(run: Run) -> dict:
    f = run.f1
    a, b, x = run.points()
    dens = srb_density(f, a[None], x[None], run.cfg["tol"])
    out = {"a": a, "b": b, "x": x, "log_density": dens[0],
           "identity": srb_holonomy_identity_check(f, a, b, x, run.cfg["tol"])}
    run.write("srb", out)
    return out


def cmd_pcf(run: Run) -> dict:
    f = run.f1
    phi = run.phi(1)
    if run.cfg["path"] is not None:
        path = UsPath.from_dict(run.cfg["path"])
    else:
        a, b, x = run.points()
        path = simple_loop(f, a, b, x)
    legs = pcf_legs(f, phi, path.legs, run.cfg["tol"])
    total = pcf_path(f, phi, path, run.cfg["tol"])
    out = {"path": path, "legs": [legs[i] for i in range(len(path))], "pcf": total,
           "closed": path.is_closed(), "null_homologous": path.is_null_homologous()}
    run.write("pcf", out)
    return out


def cmd_decompose(run: Run) -> dict:
    f = run.f1
    phi = run.phi(1)
    lc = run.cfg["loops"]
    if run.cfg["path"] is not None:
        loops = [UsPath.from_dict(run.cfg["path"])]
    else:
        loops = [random_null_homologous_loop(f, run.rng.random(f.dim), lc["n_legs"], run.rng,
                                             lc["scale"]) for _ in range(lc["n_loops"])]
    results = []
    for loop in loops:
        pieces = loop_decompose(f, loop)
        whole = pcf_path(f, phi, loop, run.cfg["tol"])
        parts = pcf_paths(f, phi, pieces, run.cfg["tol"])
        total = float(sum(p.value for p in parts))
        results.append({"loop": loop, "pieces": pieces, "pcf": whole,
                        "piece_pcfs": parts, "piece_sum": total,
                        "gap": abs(total - whole.value)})
    out = {"results": results, "max_gap": max(r["gap"] for r in results)}
    run.write("decompose", out)
    return out


def _kernel_inputs(run: Run):
    f = run.f1
    if run.cfg["kernel_point"] is not None:
        x = np.array(run.cfg["kernel_point"], float)
    else:
        cat = run.catalog(f)
        fixed = [o for o in cat.orbits if o.period == 1]
        x = fixed[0].base if fixed else np.zeros(f.dim)
    if run.cfg["pairs"] is not None:
        pairs = [(np.array(a, float), np.array(b, float)) for a, b in run.cfg["pairs"]]
    else:
        pairs = []
        for _ in range(run.cfg["n_pairs"]):
            a = run.rng.random(f.dim)
            t = run.rng.uniform(-0.15, 0.15, size=(1, f.dim_stable))
            pairs.append((a, chart_s(f, a[None], t)[0]))
    return x, pairs


def cmd_matching_kernel(run: Run) -> dict:
    x, pairs = _kernel_inputs(run)
    f2 = run.partner()
    h = None if f2 is run.f1 else ConjugacyMap(run.f1, f2)
    rep = matching_kernel(run.f1, f2, h, x, pairs, run.phi(1), run.phi(2),
                          tol=run.cfg["kernel_tol"], step=run.cfg["step"])
    out = {"report": rep, "dim_unstable": run.f1.dim_unstable}
    run.write("matching_kernel", out)
    return out


def _livshits_csv(rep, cat) -> str:
    rows = [(o.period, " ".join(map(str, o.index)), avg) for o, avg in zip(cat.orbits, rep.averages)]
    return _csv(["period", "index", "average"], rows)


def cmd_livshits(run: Run) -> dict:
    cat = run.catalog(run.f1)
    rep = livshits_constant_test(run.f1, run.phi(1), cat, run.cfg["threshold"])
    out = {"report": rep}
    run.write("livshits", out)
    run.write_csv("livshits", _livshits_csv(rep, cat))
    return out


def cmd_match_test(run: Run) -> dict:
    f2 = run.partner()
    rep = jacobian_matching_test(run.f1, f2, (run.catalog(run.f1), run.catalog(f2)),
                                 run.cfg["match_tol"])
    out = {"report": rep}
    run.write("match_test", out)
    run.write_csv("match_test", rep.csv())
    return out


def cmd_srb_mme(run: Run) -> dict:
    cat = run.catalog(run.f1)
    rep = srb_equals_mme_test(run.f1, cat, run.cfg["threshold"])
    out = {"report": rep}
    run.write("srb_mme", out)
    run.write_csv("srb_mme", _livshits_csv(rep, cat))
    return out


def rigidity_verdict(match: dict, srb1: dict, srb2: dict, kernel: dict, identical: bool) -> dict:
    """Pure function of the chained module reports."""
    if identical and match["full_match"] and match["max_gap_s"] == 0 and match["max_gap_u"] == 0:
        verdict = TRIVIAL_VERDICT
        witness = None
    elif not (match["stable_match"] and match["unstable_match"]):
        verdict = OBSTRUCTION_VERDICT
        witness = match["witness"]
    else:
        verdict = MATCHING_VERDICT
        witness = None
    return {"verdict": verdict, "witness": witness,
            "kernel_dim": kernel["kernel_dim"], "kernel_trivial": kernel["kernel_dim"] == 0,
            "srb_equals_mme": {"map": srb1["verdict"], "map2": srb2["verdict"]}}


def cmd_rigidity_report(run: Run) -> dict:
    cls = cmd_classify(run)
    cmd_periodic(run)
    match = cmd_match_test(run)["report"].to_dict()
    f2 = run.partner()
    srb1 = cmd_srb_mme(run)["report"].to_dict()
    srb2 = srb1 if f2 is run.f1 else srb_equals_mme_test(f2, run.catalog(f2), run.cfg["threshold"]).to_dict()
    kernel = cmd_matching_kernel(run)["report"].to_dict()
    summary = rigidity_verdict(match, srb1, srb2, kernel, run.same_maps)
    out = {**summary, "generic": cls["genericity"].generic,
           "match_gaps": {"stable": match["max_gap_s"], "unstable": match["max_gap_u"]},
           "singular_values": kernel["singular_values"]}
    run.write("rigidity_report", out)
    return out


COMMANDS = {
    "classify": cmd_classify,
    "rates": cmd_rates,
    "periodic": cmd_periodic,
    "conjugacy": cmd_conjugacy,
    "holonomy": cmd_holonomy,
    "srb": cmd_srb,
    "pcf": cmd_pcf,
    "decompose": cmd_decompose,
    "matching-kernel": cmd_matching_kernel,
    "livshits": cmd_livshits,
    "match-test": cmd_match_test,
    "srb-mme": cmd_srb_mme,
    "rigidity-report": cmd_rigidity_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anosovlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--workers", type=int, default=None, help="worker threads (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    p.add_argument("--verbose", action="store_true")
    return p


def run(command: str, cfg: dict, out: Path) -> dict:
    return COMMANDS[command](Run(cfg, Path(out)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise InvalidInput("--workers must be positive")
            cfg["workers"] = args.workers
        if args.seed is not None:
            if args.seed < 0:
                raise InvalidInput("--seed must be non-negative")
            cfg["seed"] = args.seed
        run(args.command, cfg, out)
    except AnosovLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(dumps({"command": args.command, "error": type(exc).__name__,
                                                   "message": str(exc), "exit_code": exc.exit_code}))
        except OSError:
            pass
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
