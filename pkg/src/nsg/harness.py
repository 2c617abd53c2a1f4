"""Experiment runner: JSON configs in, JSON reports (and optional CSV
traces) out."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__, clarke, geometry, manifolds, mollify, sphere_maps
from .geometry import DomainError

logger = logging.getLogger(__name__)

TOOL = "nsg"


class ConfigError(ValueError):
    """Config failed validation; the message names the offending key."""


class CheckDomainError(RuntimeError):
    def __init__(self, check: str, cause: Exception):
        super().__init__(f"domain error in check {check!r}: {cause}")
        self.check = check


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("NSG_THREADS", "1")))
    except ValueError:
        raise ConfigError("NSG_THREADS must be an integer")


def parallel_map(fn, items):
    items = list(items)
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- records ------------------------------------------------------------------

@dataclass
class CheckRecord:
    name: str
    anchor: str
    satisfied: bool
    margin: float
    runtime_ms: float = 0.0
    detail: dict = field(default_factory=dict)


class Recorder:
    def __init__(self, seed: int):
        self.checks: List[CheckRecord] = []
        self.rows: List[tuple] = []
        self.seed = seed

    def run(self, name: str, anchor: str, fn: Callable[[], tuple]):
        """fn returns (satisfied, margin[, detail])."""
        start = time.perf_counter()
        try:
            out = fn()
        except DomainError as exc:
            raise CheckDomainError(name, exc) from exc
        satisfied, margin = out[0], out[1]
        detail = out[2] if len(out) > 2 else {}
        self.checks.append(CheckRecord(name, anchor, bool(satisfied), _clean(margin),
                                       (time.perf_counter() - start) * 1e3, _clean(detail)))

    def trace(self, t, quantity, value, geodesic_id):
        self.rows.append((float(t), quantity, float(value), int(geodesic_id), self.seed))


def _clean(obj):
    """Convert numpy scalars/arrays to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


# -- experiment parameter schemas ---------------------------------------------

@dataclass
class ClarkeParams:
    points: List[float] = field(default_factory=lambda: [-1.5, -1.0, 0.0, 2.0, 2.5])
    expected_critical: List[float] = field(default_factory=lambda: [-1.0])
    radii_scale: float = 0.01
    per_radius: int = 64
    hull_tolerance: float = 0.02
    hull_count: int = 10_000
    increasing_radius: float = 0.5
    increasing_pairs: int = 10_000


@dataclass
class MollifyParams:
    torus_eps: List[float] = field(default_factory=lambda: [0.05, 0.1])
    torus_grid: int = 128
    sphere_eps: float = 0.05
    band_halfwidth: float = 0.2
    band_points: int = 24
    obtuse_excess: float = 0.5
    embedding_eps: float = 0.05
    embedding_eta: float = 0.01
    immersion_eps: float = 0.05
    immersion_radius: float = 0.5


@dataclass
class SigmaParams:
    family: str = "identity"
    dim: int = 3
    amplitude: float = 0.0
    profile: str = "linear"
    geodesic_count: int = 256
    pairs: int = 100_000
    steps: int = 512
    csv_geodesics: int = 2


@dataclass
class ExtensionParams:
    families: List[dict] = field(default_factory=lambda: [{"family": "identity"}])
    dim: int = 3
    sample_count: int = 256
    hull_count: int = 1000
    pairs: int = 100_000


@dataclass
class TwistedParams:
    manifold: str = "round-sphere"
    n: int = 2
    p: List[float] = field(default_factory=lambda: [0.0, 0.0, 1.0])
    q: List[float] = field(default_factory=lambda: [0.0, 0.0, -1.0])
    grid: int = 128
    bisector_tol: float = 1e-9
    crit_tol: float = 1e-2


@dataclass
class GramParams:
    eps: List[float] = field(default_factory=lambda: [0.5, 0.1])
    hyperplane_pairs: int = 100
    hyperplane_dims: List[int] = field(default_factory=lambda: [2, 3, 4, 5])
    hyperplane_grid: int = 1001


# -- experiments ----------------------------------------------------------------

def run_clarke(p: ClarkeParams, rec: Recorder):
    f = clarke.max_of_square_and_affine()
    radii = tuple(r * p.radii_scale for r in clarke.DEFAULT_RADII)
    expected_hulls = {-1.0: (-2.0, 1.0), 2.0: (1.0, 4.0)}
    for x in p.points:
        def check(x=x):
            gg = clarke.sample_generalized_gradient(f, [x], radii, p.per_radius, rec.seed)
            crit = clarke.is_critical(gg)
            want = any(abs(x - y) < 1e-12 for y in p.expected_critical)
            detail = {"hull": [gg.samples.min(), gg.samples.max()], "critical": crit.critical}
            ok = crit.critical == want
            if x in expected_hulls:
                lo, hi = expected_hulls[x]
                err = max(abs(gg.samples.min() - lo), abs(gg.samples.max() - hi))
                detail["endpoint_error"] = err
                ok = ok and err <= p.hull_tolerance
            return ok, crit.margin, detail
        rec.run(f"max-function-criticality x={x:g}", "max of a square and an affine function", check)

    F = clarke.abs_mixing_map()
    gd = clarke.sample_generalized_differential(F, [0.0, 0.0], None, p.per_radius, rec.seed)

    def nonsing():
        m = clarke.nonsingularity_margin(gd, p.hull_count, rec.seed)
        return m > 0, m, {"vertices": len(gd.distinct())}
    rec.run("abs-mixing-nonsingular", "generalized Jacobian of (|x|+y, 2x+|y|)", nonsing)

    def cone():
        c = clarke.cone_certificate(gd, [1.0, 0.0])
        return c.delta > 0, c.delta, {"direction": c.direction}
    rec.run("abs-mixing-cone-certificate", "cone certificate for u=(1,0)", cone)

    def increasing():
        th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
        delta = min(clarke.cone_certificate(gd, u).delta for u in np.column_stack([np.cos(th), np.sin(th)]))
        r = clarke.increasing_check(F, [0.0, 0.0], p.increasing_radius, delta, p.increasing_pairs, rec.seed)
        return r.holds, r.worst_ratio - delta / 2, {"worst_ratio": r.worst_ratio, "delta": delta}
    rec.run("abs-mixing-increasing", "local expansion near a non-singular point", increasing)


def _band(halfwidth, count):
    lat = np.linspace(-halfwidth, halfwidth, 9)
    lon = 2 * np.pi * np.arange(count) / count
    L, P = np.meshgrid(lat, lon)
    return np.stack([np.cos(L) * np.cos(P), np.cos(L) * np.sin(P), np.sin(L)], -1).reshape(-1, 3)


def run_mollify(p: MollifyParams, rec: Recorder):
    torus = manifolds.FlatTorus(2)
    f = mollify.distance_function(torus, [0.0, 0.0])
    cover = mollify.standard_cover(torus)
    grid = torus.uniform_grid(p.torus_grid)
    errors = {}
    for eps in p.torus_eps:
        def sup(eps=eps):
            r = mollify.sup_error_report(mollify.smooth_function(f, cover, eps), f, grid)
            errors[eps] = r.max_abs_err
            return r.holds, r.bound - r.max_abs_err, {"max_abs_err": r.max_abs_err, "bound": r.bound}
        rec.run(f"torus-sup-error eps={eps:g}", "sup |f_eps - f| <= eps Lip(f)", sup)

    def monotone():
        eps = sorted(errors)
        gaps = [errors[b] + 1e-9 - errors[a] for a, b in zip(eps, eps[1:])]
        return all(g >= 0 for g in gaps), min(gaps, default=0.0)
    rec.run("torus-sup-error-monotone", "error shrinks with eps", monotone)

    sphere = manifolds.RoundSphere(2)

    def obtuse():
        N = np.array([0.0, 0.0, 1.0])
        r = mollify.obtuse_gradient_report(sphere, N, -N, _band(p.band_halfwidth, p.band_points), p.sphere_eps)
        need = np.pi / 2 + p.obtuse_excess
        return r.min_angle > need, r.min_angle - need, {"min_angle": r.min_angle}
    rec.run("sphere-obtuse-gradients", "smoothed distance gradients stay obtuse", obtuse)

    def embedding():
        sf = mollify.smooth_function(mollify.torus_flat_embedding(), cover, p.embedding_eps)
        r = mollify.lipschitz_report(sf, torus.uniform_grid(16), 1.0, p.embedding_eta)
        return r.holds, r.bound - r.sup_derivative, {"sup_derivative": r.sup_derivative}
    rec.run("torus-embedding-lipschitz", "smoothing keeps the Lipschitz constant", embedding)

    def immersion():
        F = clarke.abs_mixing_map()
        gd = clarke.sample_generalized_differential(F, [0.0, 0.0], seed=rec.seed)
        plane = manifolds.Euclidean(2)
        sf = mollify.smooth_function(mollify.euclidean_map(F, 2, 2), mollify.standard_cover(plane),
                                     p.immersion_eps)
        r = mollify.immersion_margin(sf, gd, p.immersion_radius)
        return r.holds, r.margin - r.delta / 3, {"margin": r.margin, "delta": r.delta}
    rec.run("abs-mixing-smoothed-immersion", "smoothed map stays an immersion", immersion)


def run_sigma(p: SigmaParams, rec: Recorder):
    sigma = sphere_maps.make_sphere_map(p.family, p.dim, p.amplitude, p.profile, rec.seed)
    h = math.pi / p.steps
    holder = {}

    def report():
        if "r" not in holder:
            holder["r"] = sphere_maps.check_conditions(sigma, p.dim, p.geodesic_count, rec.seed, h,
                                                       pairs=p.pairs)
        return holder["r"]

    anchors = {
        "bilip-lower": "near-isometry: Lip^b^-2 >= 1 - K^2",
        "curvature": "near-isometry: |c''|^2 <= Lip^b^-2 + K^2",
        "bilip-dimension": "dimension bound on Lip^b^2",
        "comparison-angle": "image curves stay within pi/2 of comparison circles",
        "curvature-identity": "|c''+c|^2 = |c''|^2 - 2|c'|^2 + 1",
        "alpha-implication": "near-isometry implies the alpha-condition",
    }
    for name, anchor in anchors.items():
        def check(name=name):
            r = report()
            e = r.entries[name]
            return e.satisfied, e.margin, {"worst_geodesic": e.worst_geodesic, "lip_b": r.lip_b,
                                           **e.detail}
        rec.run(name, anchor, check)
    mode = "analytic" if sigma.analytic else "fd"
    for gid in range(p.csv_geodesics):
        s = sphere_maps.curve_samples(sigma, sphere_maps.sample_geodesic(p.dim, rec.seed, gid), h, mode)
        ang = sphere_maps.comparison_angle(s)
        dev = np.linalg.norm(s.cddot + s.c, axis=1)
        for t, a, d in zip(s.t, ang, dev):
            rec.trace(t, "comparison-angle", a, gid)
            rec.trace(t, "curvature-deviation", d, gid)


def run_extension(p: ExtensionParams, rec: Recorder):
    for fam in p.families:
        unknown = set(fam) - {"family", "amplitude", "profile"}
        if unknown or "family" not in fam:
            raise ConfigError(f"params.families entry has bad key(s): {sorted(unknown) or ['family']}")
        sigma = sphere_maps.make_sphere_map(fam["family"], p.dim, fam.get("amplitude", 0.0),
                                            fam.get("profile", "linear"), rec.seed)
        label = fam["family"] + (f" a={fam['amplitude']:g}" if "amplitude" in fam else "")
        state = {}

        def alpha(sigma=sigma, state=state):
            ok, worst = sphere_maps.alpha_condition(sigma, p.sample_count, rec.seed)
            state["alpha"] = ok
            return True, sphere_maps.ALPHA_THRESHOLD - worst, {"alpha_condition": ok, "alpha_max": worst}
        rec.run(f"alpha-condition {label}", "alpha-condition (informational)", alpha)

        def margin(sigma=sigma, state=state):
            m = sphere_maps.extension_nonsingularity_margin(sigma, p.sample_count, p.hull_count, rec.seed)
            return (m > 0) or not state["alpha"], m, {"alpha_condition": state["alpha"]}
        rec.run(f"extension-nonsingular {label}", "alpha-condition implies A_v non-singular", margin)

        def bilip(sigma=sigma):
            r = sphere_maps.extension_bilip_check(sigma, p.pairs, rec.seed)
            slack = min(r.lip_b - r.max_ratio, r.min_ratio - 1 / r.lip_b)
            return r.holds, slack, {"lip_b": r.lip_b, "violations": r.violations}
        rec.run(f"extension-bilipschitz {label}", "radial extension keeps Lip^b", bilip)


def run_twisted(p: TwistedParams, rec: Recorder):
    man = manifolds.model_manifold(p.manifold, p.n)
    if isinstance(man, manifolds.RoundSphere):
        grid = man.polar_grid(p.p, p.grid + 1)
    else:
        grid = man.uniform_grid(p.grid)
    holder = {}

    def result():
        if "r" not in holder:
            holder["r"] = manifolds.twisted_conditions_check(man, p.p, p.q, grid, p.bisector_tol, p.crit_tol)
        return holder["r"]

    def no_extra():
        r = result()
        w = [x for x in r.witnesses if x["condition"] == "no-extra-critical"]
        return r.cond_18, float(-len(w)), {"witnesses": w}
    rec.run("no-extra-critical-points", "D(p) meets Crit(p) only in p, likewise for q", no_extra)

    def obtuse():
        r = result()
        w = [x for x in r.witnesses if x["condition"] == "obtuse-bisector"]
        return r.cond_19, r.worst_angle - math.pi / 2, {"worst_angle": r.worst_angle, "witnesses": w}
    rec.run("obtuse-bisector", "minimal directions to p and q are obtuse on the bisector", obtuse)


def run_gram(p: GramParams, rec: Recorder):
    for eps in p.eps:
        def check(eps=eps):
            v = geometry.near_orthonormal_dependent(eps)
            dev, rank = geometry.gram_deviation(v), geometry.numerical_rank(v)
            ok = dev < eps and rank == len(v) - 1
            return ok, eps - dev, {"vectors": len(v), "rank": rank, "gram_deviation": dev}
        rec.run(f"near-orthonormal-dependent eps={eps:g}", "eps-orthonormal yet dependent vectors", check)

    def hyperplane():
        rng = np.random.default_rng(rec.seed)
        worst = np.inf
        for i in range(p.hyperplane_pairs):
            n = p.hyperplane_dims[i % len(p.hyperplane_dims)]
            A, B = random_hyperplane_pair(n, rng)
            worst = min(worst, geometry.hyperplane_convex_rank_margin(A, B, p.hyperplane_grid))
        return worst > 0, worst
    rec.run("hyperplane-convex-rank", "convex combinations fixing a hyperplane stay invertible", hyperplane)


def random_hyperplane_pair(n: int, rng: np.random.Generator):
    """Two matrices that are the identity on {x_n = 0} and keep e_n on the
    positive side."""
    mats = []
    for _ in range(2):
        M = np.eye(n)
        M[: n - 1, n - 1] = rng.uniform(-3, 3, n - 1)
        M[n - 1, n - 1] = rng.uniform(0.05, 3)
        mats.append(M)
    return mats


@dataclass
class Experiment:
    name: str
    anchor: str
    params: type
    run: Callable


EXPERIMENTS: Dict[str, Experiment] = {e.name: e for e in [
    Experiment("clarke-examples", "generalized gradients and Jacobians of the worked examples",
               ClarkeParams, run_clarke),
    Experiment("mollify-bounds", "sup-error, Lipschitz, immersion and obtuse-gradient bounds",
               MollifyParams, run_mollify),
    Experiment("sigma-conditions", "near-isometry, dimension and comparison-angle checks",
               SigmaParams, run_sigma),
    Experiment("extension-certificates", "alpha-condition and radial-extension certificates",
               ExtensionParams, run_extension),
    Experiment("twisted-hypotheses", "critical-point and obtuse-bisector hypotheses",
               TwistedParams, run_twisted),
    Experiment("gram-dependence", "near-orthonormal dependent vectors and hyperplane rank margins",
               GramParams, run_gram),
]}

TOP_LEVEL_KEYS = {"experiment", "seed", "params", "description"}


def _coerce(name, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"params.{name} has the wrong type")
    return value


def validate_config(cfg: dict):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for key in cfg:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown key {key!r}")
    if "experiment" not in cfg:
        raise ConfigError("missing key 'experiment'")
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r} (key 'experiment')")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("key 'seed' must be a non-negative integer")
    exp = EXPERIMENTS[cfg["experiment"]]
    raw = cfg.get("params", {})
    if not isinstance(raw, dict):
        raise ConfigError("key 'params' must be an object")
    defaults = exp.params()
    names = {f.name for f in dataclasses.fields(exp.params)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown key 'params.{key}'")
    values = {k: _coerce(k, v, getattr(defaults, k)) for k, v in raw.items()}
    return exp, seed, exp.params(**values)


def run_config(cfg: dict, timing: bool = True):
    """Validate and run a config; returns (report dict, csv rows)."""
    exp, seed, params = validate_config(cfg)
    rec = Recorder(seed)
    try:
        exp.run(params, rec)
    except (DomainError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise CheckDomainError(exp.name, exc) from exc
    checks = [dataclasses.asdict(c) for c in rec.checks]
    if not timing:
        for c in checks:
            c["runtime_ms"] = 0.0
    report = {
        "tool": TOOL,
        "version": __version__,
        "platform": f"python {platform.python_version()}, numpy {np.__version__}",
        "config": cfg,
        "experiment": exp.name,
        "satisfied": all(c["satisfied"] for c in checks),
        "checks": checks,
    }
    return report, rec.rows


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "quantity", "value", "geodesic_id", "seed"])
        for r in rows:
            w.writerow([repr(r[0]), r[1], repr(r[2]), r[3], r[4]])


def bundled_configs() -> List[str]:
    here = os.path.join(os.path.dirname(__file__), "configs")
    return sorted(os.path.join(here, f) for f in os.listdir(here) if f.endswith(".json"))
