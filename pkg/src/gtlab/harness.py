"""Experiment runner: repeated seeded runs, stepsize tuning, CSV output and the verification suite.

A run is fully described by a :class:`RunConfig`.  Repetition ``r`` draws its
samples from ``default_rng(seed + r)``; repetitions are simulated in
vectorized groups of ``batch`` (optionally spread over ``workers`` threads),
and because every group keeps its own per-repetition streams the result does
not depend on either knob.
"""

from __future__ import annotations

import io
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import analysis
from .algorithms import (ALGORITHMS, SampleStream, advance, gt_init, gt_pd_init, gt_pd_step, gt_step,
                         init_state, stacked_iterate)
from .errors import ConfigError, GTLabError, ModeError, TuningFailedError
from .problems import make_linreg, make_logreg, make_quadratic
from .report import Report
from .topology import CombinationMatrix, build_topology, certify_assumption1, combination_matrix

CSV_HEADER = "k,run_id,algo,graph,n,alpha,rel_error,consensus_error,f_gap"
PLOT_HEADER = ("k,rel_error_mean,rel_error_std,consensus_error_mean,consensus_error_std,"
               "f_gap_mean,f_gap_std")
PROBLEMS = ("linreg", "logreg", "quadratic")
GRAPHS = ("ring", "exponential", "complete")
DIVERGED = 1e50


@dataclass(frozen=True)
class RunConfig:
    algo: str = "gt"
    graph: str = "ring"
    n: int = 30
    problem: str = "linreg"
    d: int = 5
    sigma_v2: float = 1.0
    sigma_n2: float = 0.01
    seed: int = 0
    alpha: float | str = 0.01  # number, "auto" (theory rule) or "tune"
    target: float | None = None  # target relative error for alpha="tune"
    iters: int = 1000
    reps: int = 1
    deterministic: bool = False
    rule: str = "uniform"
    every: int = 1  # record every this many iterations (the last one is always kept)
    batch: int = 32
    workers: int = 1
    mu: float = 0.5  # quadratic only
    L: float = 2.0  # quadratic only
    noise_var: float = 1.0  # quadratic only
    out: str | None = None

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; expected one of {ALGORITHMS}")
        if self.graph not in GRAPHS:
            raise ConfigError(f"unknown graph {self.graph!r}; expected one of {GRAPHS}")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.reps < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.iters < 1:
            raise ConfigError("iterations must be >= 1")
        if self.n < 1 or self.d < 1:
            raise ConfigError("n and d must be >= 1")
        if self.every < 1 or self.batch < 1 or self.workers < 1:
            raise ConfigError("every, batch and workers must be >= 1")
        if self.algo == "csgd" and self.rule != "uniform":
            raise ConfigError("csgd does not use a network; weight rules do not apply")
        if isinstance(self.alpha, str):
            if self.alpha not in ("auto", "tune"):
                raise ConfigError(f"alpha must be a number, 'auto' or 'tune', got {self.alpha!r}")
            if self.alpha == "tune" and self.target is None:
                raise ConfigError("alpha='tune' needs a target relative error")
        elif not self.alpha > 0:
            raise ConfigError("stepsize must be positive")

    @property
    def graph_label(self) -> str:
        return "central" if self.algo == "csgd" else self.graph


def build_problem(cfg: RunConfig):
    if cfg.problem == "linreg":
        p = make_linreg(cfg.n, cfg.d, sigma_v2=cfg.sigma_v2, sigma_n2=cfg.sigma_n2, seed=cfg.seed)
    elif cfg.problem == "logreg":
        p = make_logreg(cfg.n, cfg.d, sigma_v2=cfg.sigma_v2, seed=cfg.seed)
    else:
        p = make_quadratic(cfg.n, cfg.d, mu=cfg.mu, L=cfg.L, sigma_v2=cfg.sigma_v2,
                           noise_var=cfg.noise_var, seed=cfg.seed)
    return p.noiseless() if cfg.deterministic else p


def build_weights(cfg: RunConfig) -> CombinationMatrix:
    return combination_matrix(build_topology(cfg.graph, cfg.n), cfg.rule)


@dataclass
class RunTrace:
    config: RunConfig
    alpha: float
    k: np.ndarray  # (T,)
    seeds: list[int]
    rel_error: np.ndarray  # (reps, T)
    consensus_error: np.ndarray
    f_gap: np.ndarray
    wall_time: float = 0.0
    tuning: "TuneResult | None" = None

    def mean(self, metric: str = "rel_error") -> np.ndarray:
        return getattr(self, metric).mean(axis=0)

    def std(self, metric: str = "rel_error") -> np.ndarray:
        return getattr(self, metric).std(axis=0)

    def final_error(self, window: float = 0.1) -> float:
        """Repetition mean of the relative error averaged over the last ``window`` of the run."""
        T = self.k.size
        tail = max(1, int(math.ceil(window * T)))
        return float(np.mean(self.rel_error[:, T - tail:]))

    def iterations_to(self, target: float) -> int | None:
        hit = np.nonzero(self.mean() <= target)[0]
        return int(self.k[hit[0]]) if hit.size else None

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        c = self.config
        head = f"{c.algo},{c.graph_label},{c.n},{self.alpha!r}"
        for r in range(len(self.seeds)):
            for j, k in enumerate(self.k):
                buf.write(f"{k},{r},{head},{float(self.rel_error[r, j])!r},"
                          f"{float(self.consensus_error[r, j])!r},{float(self.f_gap[r, j])!r}\n")
        return buf.getvalue()

    def plot_text(self) -> str:
        cols = []
        for m in ("rel_error", "consensus_error", "f_gap"):
            cols += [self.mean(m), self.std(m)]
        lines = [PLOT_HEADER]
        for j, k in enumerate(self.k):
            lines.append(",".join([str(int(k))] + [repr(float(c[j])) for c in cols]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())

    def write_plot_data(self, path) -> None:
        Path(path).write_text(self.plot_text())


def read_csv(path) -> dict[str, np.ndarray]:
    """Load a trace CSV into per-run arrays of shape ``(reps, T)`` keyed by metric."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    runs = np.unique(data["run_id"])
    out = {"k": data["k"][data["run_id"] == runs[0]]}
    for m in ("rel_error", "consensus_error", "f_gap"):
        out[m] = np.stack([data[m][data["run_id"] == r] for r in runs])
    return out


def _record_steps(iters: int, every: int) -> np.ndarray:
    ks = list(range(0, iters + 1, every))
    if ks[-1] != iters:
        ks.append(iters)
    return np.asarray(ks)


def _metrics(x, p, xs2):
    """Relative error, consensus error and optimality gap for stacked iterates ``(R, n, d)``."""
    x_bar = x.mean(axis=-2)
    rel = np.mean(np.sum((x - p.x_star) ** 2, axis=-1), axis=-1) / xs2
    cons = np.sum((x - x_bar[..., None, :]) ** 2, axis=(-2, -1))
    gap = p.value(x_bar) - p.f_star
    return rel, cons, gap


def _simulate(cfg: RunConfig, p, W, alpha, seeds, ks):
    R = len(seeds)
    T = ks.size
    rel = np.full((R, T), np.inf)
    cons = np.full((R, T), np.inf)
    gap = np.full((R, T), np.inf)
    xs2 = float(np.sum(p.x_star**2)) or 1.0
    stream = SampleStream(p, list(seeds)) if p.stochastic else None
    x0 = np.zeros((R, p.n, p.d))
    with np.errstate(over="ignore", invalid="ignore"):
        state = init_state(cfg.algo, x0, W, p, alpha, stream)
        j = 0
        for k in range(cfg.iters + 1):
            if k > 0:
                state = advance(cfg.algo, state, W, p, alpha, stream)
            if k == ks[j]:
                x = stacked_iterate(state, p)
                rel[:, j], cons[:, j], gap[:, j] = _metrics(x, p, xs2)
                j += 1
                if not np.all(np.abs(rel[:, j - 1]) < DIVERGED):
                    break  # diverged: the remaining records stay at inf
    return rel, cons, gap


def resolve_alpha(cfg: RunConfig, p, W) -> float:
    """Numeric stepsize for ``cfg``; ``"auto"`` applies the theory-selected rule."""
    if not isinstance(cfg.alpha, str):
        return float(cfg.alpha)
    if cfg.alpha == "tune":
        return tune_stepsize(cfg, cfg.target).alpha
    dec = analysis.decompose(W)
    if p.mu > 0:
        tc = analysis.sc_constants(p, W, dec)
        return analysis.sc_stepsize(tc, cfg.iters)
    tc = analysis.convex_constants(p, W, dec)
    return analysis.convex_stepsize(tc, cfg.iters, float(np.sum(p.x_star**2)))


def run(cfg: RunConfig, problem=None, weights: CombinationMatrix | None = None) -> RunTrace:
    """Run ``cfg.reps`` seeded repetitions and collect per-iteration metrics."""
    t0 = time.perf_counter()
    p = problem if problem is not None else build_problem(cfg)
    W = weights if weights is not None else build_weights(cfg)
    if cfg.algo != "csgd" and not W.is_psd():
        warnings.warn("combination matrix is not positive semidefinite; the theory assumes it is",
                      stacklevel=2)
    tuning = None
    if cfg.alpha == "tune":
        tuning = tune_stepsize(cfg, cfg.target, problem=p, weights=W)
        alpha = tuning.alpha
    else:
        alpha = resolve_alpha(cfg, p, W)
    ks = _record_steps(cfg.iters, cfg.every)
    seeds = [cfg.seed + r for r in range(cfg.reps)]
    groups = [seeds[i:i + cfg.batch] for i in range(0, len(seeds), cfg.batch)]
    task = lambda g: _simulate(cfg, p, W, alpha, g, ks)
    if cfg.workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(task, groups))  # map keeps repetition order
    else:
        parts = [task(g) for g in groups]
    rel, cons, gap = (np.concatenate(a, axis=0) for a in zip(*parts))
    trace = RunTrace(cfg, float(alpha), ks, seeds, rel, cons, gap,
                     wall_time=time.perf_counter() - t0, tuning=tuning)
    if cfg.out:
        trace.write_csv(cfg.out)
    return trace


# ---------------------------------------------------------------------------
# stepsize tuning


@dataclass
class Candidate:
    alpha: float
    final_error: float
    iterations_to_target: int | None
    feasible: bool


@dataclass
class TuneResult:
    alpha: float
    target: float
    candidates: list[Candidate] = field(default_factory=list)
    trace: RunTrace | None = None

    @property
    def iterations_to_target(self) -> int | None:
        return next(c.iterations_to_target for c in self.candidates if c.alpha == self.alpha)

    def table(self) -> str:
        lines = ["alpha,final_error,iterations_to_target,feasible"]
        for c in self.candidates:
            it = "" if c.iterations_to_target is None else str(c.iterations_to_target)
            lines.append(f"{c.alpha!r},{c.final_error!r},{it},{int(c.feasible)}")
        return "\n".join(lines)


def alpha_grid(L: float, lo: float = 1e-4, factor: float = 2.0) -> list[float]:
    """Descending logarithmic grid ``1/L, 1/(2L), ...`` down to ``lo``."""
    grid = []
    a = 1.0 / L
    while a >= lo * (1 - 1e-12):
        grid.append(a)
        a /= factor
    return grid


def tune_stepsize(cfg: RunConfig, target: float, grid=None, exhaustive: bool = False,
                  window: float = 0.1, problem=None, weights=None) -> TuneResult:
    """Largest grid stepsize whose final relative error is at most ``target``.

    The grid is searched from the largest stepsize down and stops at the first
    feasible candidate unless ``exhaustive`` is set.  A candidate is feasible
    when the repetition-mean relative error, averaged over the last
    ``window`` fraction of the run, is finite and at most ``target``.
    """
    if not target > 0:
        raise ConfigError("target relative error must be positive")
    p = problem if problem is not None else build_problem(cfg)
    W = weights if weights is not None else build_weights(cfg)
    grid = alpha_grid(p.L) if grid is None else sorted(grid, reverse=True)
    result = TuneResult(alpha=float("nan"), target=target)
    best = None
    for a in grid:
        tr = run(replace(cfg, alpha=float(a), target=None, out=None), problem=p, weights=W)
        fe = tr.final_error(window)
        ok = bool(np.isfinite(fe) and fe <= target)
        result.candidates.append(Candidate(float(a), fe, tr.iterations_to(target), ok))
        if ok and best is None:
            best = (float(a), tr)
            if not exhaustive:
                break
    if best is None:
        raise TuningFailedError(
            f"no stepsize in [{grid[-1]:.3g}, {grid[0]:.3g}] reaches relative error {target:g}",
            result.candidates)
    result.alpha, result.trace = best
    return result


# ---------------------------------------------------------------------------
# verification suite

SCOPES = ("all", "lemma1", "assumption1", "fixed_point", "decomposition", "lemma3", "spectral")


def _verify_lemma1(rep: Report, seeds=range(3), iters=100, tol=1e-10):
    for kind, n in (("ring", 10), ("exponential", 16)):
        W = combination_matrix(build_topology(kind, n))
        worst = 0.0
        for s in seeds:
            p = make_linreg(n, 3, seed=s, sigma2_draws=0)
            alpha = 0.05
            sg, sp = SampleStream(p, 1000 + s), SampleStream(p, 1000 + s)
            g = gt_init(np.zeros((n, 3)), p, sg)
            g = gt_step(g, W, p, alpha, sg)
            q = gt_pd_init(np.zeros((n, 3)), W, p, alpha, sp)
            worst = max(worst, float(np.max(np.abs(g.x - q.x))))
            for _ in range(iters - 1):
                g = gt_step(g, W, p, alpha, sg)
                q = gt_pd_step(q, W, p, alpha, sp)
                worst = max(worst, float(np.max(np.abs(g.x - q.x))))
        rep.add(f"lemma1.{kind}{n}", worst <= tol, worst, tol)


def _verify_assumption1(rep: Report, W=None):
    mats = {"override": W} if W is not None else {
        f"{k}30": combination_matrix(build_topology(k, 30)) for k in ("ring", "exponential")}
    for name, M in mats.items():
        rep.extend(certify_assumption1(M), prefix=f"assumption1.{name}.")


def _verify_fixed_point(rep: Report, tol=1e-8):
    p = make_linreg(30, 5, seed=0, sigma2_draws=0)
    W = combination_matrix(build_topology("ring", 30))
    for a in (1e-3, 1e-2):
        fp = analysis.solve_fixed_point(p, W, a)
        worst = max(fp.residual_primal, fp.residual_dual)
        rep.add(f"fixed_point.alpha={a:g}", worst <= tol, worst, tol)


def _verify_decomposition(rep: Report, W=None, count=20, seed=0):
    specs = {}
    if isinstance(W, CombinationMatrix):
        specs["override"] = W.lambdas
    else:
        for k in ("ring", "exponential"):
            specs[f"{k}30"] = combination_matrix(build_topology(k, 30)).lambdas
    rng = np.random.default_rng(seed)
    for i in range(count):
        specs[f"random{i}"] = rng.uniform(-0.99, 0.99, size=rng.integers(1, 40))
    for name, lam in specs.items():
        d = analysis.decompose_G(lam)
        sub = analysis.decomposition_report(d)
        for c in sub.checks:
            if c.required:
                rep.add(f"decomposition.{name}.{c.name}", c.passed, c.value, c.bound, c.detail)


def _verify_lemma3(rep: Report, alpha=None, seeds=range(3), iters=200):
    for s in seeds:
        p = make_quadratic(10, 3, seed=s)
        W = combination_matrix(build_topology("ring", 10))
        a = 1 / (8 * p.L) if alpha is None else alpha
        name = f"lemma3.seed{s}"
        try:
            if not a < 1 / (4 * p.L):
                raise ModeError(f"alpha={a:g} violates alpha < 1/(4L) = {1 / (4 * p.L):g}")
            dec = analysis.decompose(W)
            st = gt_pd_init(np.zeros((10, 3)), W, p, a)
            trace = [st]
            for _ in range(iters):
                st = gt_pd_step(st, W, p, a)
                trace.append(st)
            res = analysis.check_coupled_inequalities(trace, p, W, dec, a)
        except ModeError as e:
            rep.add(f"{name}.precondition", False, a, 1 / (4 * p.L), detail=str(e))
            continue
        rep.extend(res.report(), prefix=f"{name}.")


def _verify_spectral(rep: Report, seeds=range(3), count=5):
    for s in seeds:
        p = make_quadratic(10, 3, seed=s, noise_var=1.0)
        W = combination_matrix(build_topology("exponential", 10))
        tc = analysis.sc_constants(p, W, analysis.decompose(W))
        top = analysis.sc_stepsize_condition(tc)
        for a in np.geomspace(top / 100, top, count):
            sub = analysis.spectral_check(tc, float(a))
            rep.add(f"spectral.seed{s}.alpha={a:.3g}", sub.ok, float(a), top,
                    detail="; ".join(c.name for c in sub.failures()))


def verify_all(scope: str = "all", W=None, alpha: float | None = None) -> Report:
    """Run the verification checks in ``scope``; ``report.ok`` is the suite verdict.

    ``W`` overrides the matrix certified in the assumption scope (and the
    spectrum decomposed, when it is a valid :class:`CombinationMatrix`);
    ``alpha`` overrides the stepsize of the coupled-inequality scope.
    """
    if scope not in SCOPES:
        raise ConfigError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    rep = Report(f"verification suite ({scope})")
    want = lambda s: scope in ("all", s)
    steps = [
        ("lemma1", lambda: _verify_lemma1(rep)),
        ("assumption1", lambda: _verify_assumption1(rep, W)),
        ("fixed_point", lambda: _verify_fixed_point(rep)),
        ("decomposition", lambda: _verify_decomposition(rep, W)),
        ("lemma3", lambda: _verify_lemma3(rep, alpha)),
        ("spectral", lambda: _verify_spectral(rep)),
    ]
    for name, fn in steps:
        if want(name):
            try:
                fn()
            except GTLabError as e:
                rep.add(f"{name}.error", False, detail=f"{type(e).__name__}: {e}")
    return rep


# ---------------------------------------------------------------------------
# config files

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    if value.lower() in ("none", ""):
        return None
    if key == "alpha":
        return value if value in ("auto", "tune") else float(value)
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    if kind.startswith("bool"):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    return value


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; keys use the CLI flag names (dashes allowed)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        key = {"iters": "iters", "reps": "reps", "tune_to": "target"}.get(key, key)
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return out


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


__all__ = [
    "CSV_HEADER", "PLOT_HEADER", "RunConfig", "RunTrace", "Candidate", "TuneResult", "build_problem",
    "build_weights", "run", "resolve_alpha", "alpha_grid", "tune_stepsize", "verify_all", "SCOPES",
    "read_csv", "parse_config_text", "load_config",
]
