"""Error coordinates, fixed points and the transient-analysis machinery.

The error dynamics of the primal-dual GT form are split into the average
error ``e_bar = x_bar - x_star`` and a ``2(n-1)``-dimensional disagreement
part ``[U_hat^T x_tilde; U_hat^T z_tilde]`` driven by the block matrix

    G = [[2 Lambda - I, -(I - Lambda)],
         [I - Lambda,    I           ]].

Each ``2 x 2`` block of ``G`` has a double eigenvalue ``lambda_i`` and is
brought to an upper-triangular ``Gamma_i`` by an explicit similarity
``V_i``; the checks below evaluate the coupled inequalities and stepsize
rules that follow from that decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .algorithms import GTState, PDState, gt_dual
from .errors import (
    AnalysisError,
    InvalidHorizonError,
    InvalidSpectrumError,
    ModeError,
    SingularSystemError,
    WrongRegimeError,
)
from .report import Report
from .topology import CombinationMatrix

# reference caps ||V||^2 <= 3 and ||V^-1||^2 <= 9; reported, never required
C1_CAP = math.sqrt(3.0)
C2_CAP = 3.0


# ---------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True)
class Decomposition:
    lambdas: np.ndarray
    lam: float
    G: np.ndarray
    V_hat: np.ndarray
    V_hat_inv: np.ndarray
    Gamma: np.ndarray
    gamma: float
    c1: float
    c2: float

    @property
    def m(self) -> int:
        return self.lambdas.size

    @property
    def V_left_inv(self) -> np.ndarray:
        """Left ``2m x m`` block of ``V_hat^{-1}`` (acts on the primal part)."""
        return self.V_hat_inv[:, : self.m]


def decompose_G(Lambda_sub, lam: float | None = None) -> Decomposition:
    """Similarity ``G = V_hat Gamma V_hat^{-1}`` for the spectrum ``Lambda_sub``.

    ``Lambda_sub`` is the diagonal matrix (or vector) of eigenvalues of W on
    the mean-zero subspace.  Per eigenvalue ``a`` the transform is

        V = [[1, -k/2], [-1, -k/2]],   Gamma = [[a, (1-|a|)/2], [0, a]],

    with ``k = (1-|a|) / (2(1-a))``, so ``||Gamma_i|| <= (1+|a|)/2``.
    """
    lambdas = np.asarray(Lambda_sub, dtype=float)
    if lambdas.ndim == 2:
        lambdas = np.diag(lambdas).copy()
    if lambdas.size and np.max(np.abs(lambdas)) >= 1.0:
        raise InvalidSpectrumError("all eigenvalues must lie strictly inside (-1, 1)")
    if lam is None:
        lam = float(np.max(np.abs(lambdas), initial=0.0))
    m = lambdas.size
    a = lambdas
    s = 0.5 * (1.0 + lam)
    off = np.minimum(0.5 * (1.0 - a), (s * s - a * a) / s) if m else a
    kappa = off / (1.0 - a)
    D = np.diag
    G = np.block([[D(2 * a - 1), D(-(1 - a))], [D(1 - a), np.eye(m)]])
    V = np.block([[np.eye(m), D(-kappa / 2)], [-np.eye(m), D(-kappa / 2)]])
    V_inv = np.block([[0.5 * np.eye(m), -0.5 * np.eye(m)], [D(-1 / kappa), D(-1 / kappa)]])
    Gamma = np.block([[D(a), D(off)], [np.zeros((m, m)), D(a)]])
    if m:
        # the spectral norm of a permuted block diagonal is the max block norm
        blocks = lambda M: np.stack(
            [[np.diag(M[:m, :m]), np.diag(M[:m, m:])], [np.diag(M[m:, :m]), np.diag(M[m:, m:])]]
        ).transpose(2, 0, 1)
        norm = lambda M: float(np.max(np.linalg.norm(blocks(M), ord=2, axis=(-2, -1))))
        gamma, c1, c2 = norm(Gamma), norm(V), norm(V_inv)
    else:
        gamma = c1 = c2 = 0.0
    return Decomposition(lambdas=a, lam=float(lam), G=G, V_hat=V, V_hat_inv=V_inv, Gamma=Gamma,
                         gamma=gamma, c1=c1, c2=c2)


def decompose(W: CombinationMatrix) -> Decomposition:
    return decompose_G(W.lambdas, W.lam)


def decomposition_report(dec: Decomposition, tol: float = 1e-10) -> Report:
    rep = Report("block decomposition")
    m = dec.m
    if m:
        recon = float(np.max(np.abs(dec.G - dec.V_hat @ dec.Gamma @ dec.V_hat_inv)))
        inv = float(np.max(np.abs(dec.V_hat @ dec.V_hat_inv - np.eye(2 * m))))
    else:
        recon = inv = 0.0
    rep.add("reconstruction", recon <= tol, recon, tol)
    rep.add("inverse", inv <= tol, inv, tol)
    rep.add("gamma_bound", dec.gamma <= (1 + dec.lam) / 2 + 1e-12, dec.gamma, (1 + dec.lam) / 2)
    rep.add("c1_sq_vs_cap", dec.c1**2 <= C1_CAP**2 + 1e-12, dec.c1**2, C1_CAP**2,
            required=False, detail="informational")
    rep.add("c2_sq_vs_cap", dec.c2**2 <= C2_CAP**2 + 1e-12, dec.c2**2, C2_CAP**2,
            required=False, detail="informational")
    return rep


# ---------------------------------------------------------------------------
# fixed point and error coordinates


@dataclass(frozen=True)
class FixedPoint:
    x_star: np.ndarray  # stacked (n, d)
    z_star: np.ndarray  # stacked (n, d), mean zero
    alpha: float
    residual_primal: float  # ||(I - W) x_star||
    residual_dual: float  # ||alpha W^2 grad f(x_star) + (I - W) z_star||


def solve_fixed_point(p, W: CombinationMatrix, alpha: float) -> FixedPoint:
    """Stationary pair of the primal-dual recursion, computed in the eigenbasis of W.

    ``U_hat^T z_star = -alpha (I - Lambda)^{-1} Lambda^2 U_hat^T grad f(x_star)``.
    """
    if W.lam >= 1.0 - 1e-12:
        raise SingularSystemError("mixing rate is 1: I - W is singular on the mean-zero subspace")
    Wm = W.W
    x_star = np.broadcast_to(p.x_star, (p.n, p.d)).copy()
    g_star = p.grad(x_star)
    coef = W.U_hat.T @ g_star
    scale = (W.lambdas**2 / (1.0 - W.lambdas))[:, None]
    z_star = W.U_hat @ (-alpha * scale * coef)
    res_x = float(np.linalg.norm(x_star - Wm @ x_star))
    res_z = float(np.linalg.norm(alpha * Wm @ (Wm @ g_star) + z_star - Wm @ z_star))
    return FixedPoint(x_star, z_star, float(alpha), res_x, res_z)


@dataclass(frozen=True)
class ErrorCoords:
    x_bar: np.ndarray
    e_bar: np.ndarray
    consensus_err: float  # ||x - 1 x_bar||^2
    x_hat: np.ndarray  # (2(n-1), d)
    x_hat_norm2: float
    f_gap: float
    rel_error: float  # (1/n) sum_i ||x_i - x_star||^2 / ||x_star||^2

    @property
    def e_bar_norm2(self) -> float:
        return float(np.sum(self.e_bar**2))


def error_coords(x, z, p, W: CombinationMatrix, dec: Decomposition, fp: FixedPoint | None) -> ErrorCoords:
    if fp is None:
        raise AnalysisError("error coordinates need the fixed point (x_star, z_star)")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    x_bar = x.mean(axis=0)
    e_bar = x_bar - p.x_star
    X = W.U_hat.T @ (x - fp.x_star)
    Z = W.U_hat.T @ (z - fp.z_star)
    x_hat = dec.V_hat_inv @ np.vstack([X, Z])
    xs2 = float(np.sum(p.x_star**2))
    rel = float(np.mean(np.sum((x - p.x_star) ** 2, axis=-1)) / xs2) if xs2 > 0 else float("nan")
    return ErrorCoords(
        x_bar=x_bar,
        e_bar=e_bar,
        consensus_err=float(np.sum((x - x_bar) ** 2)),
        x_hat=x_hat,
        x_hat_norm2=float(np.sum(x_hat**2)),
        f_gap=float(p.value(x_bar) - p.f_star),
        rel_error=rel,
    )


def _pd_pairs(trace, W, alpha):
    out = []
    for s in trace:
        if isinstance(s, PDState):
            out.append((s.k, s.x, s.z, s.stochastic))
        elif isinstance(s, GTState):
            out.append((s.k, s.x, gt_dual(s, W, alpha), s.stochastic))
        else:
            out.append((s[0], np.asarray(s[1]), np.asarray(s[2]), False))
    return out


# ---------------------------------------------------------------------------
# pathwise checks (noiseless runs)


@dataclass
class InequalityTrace:
    k: np.ndarray
    lhs_avg: np.ndarray
    rhs_avg: np.ndarray
    lhs_cons: np.ndarray
    rhs_cons: np.ndarray
    slack: float

    @property
    def violations(self) -> list[tuple[int, str, float]]:
        bad = []
        for k, l, r in zip(self.k, self.lhs_avg, self.rhs_avg):
            if l > r + self.slack:
                bad.append((int(k), "average", float(l - r)))
        for k, l, r in zip(self.k, self.lhs_cons, self.rhs_cons):
            if l > r + self.slack:
                bad.append((int(k), "consensus", float(l - r)))
        return bad

    @property
    def ok(self) -> bool:
        return not self.violations

    def report(self) -> Report:
        rep = Report("coupled error inequalities")
        for name, l, r in (("average", self.lhs_avg, self.rhs_avg),
                           ("consensus", self.lhs_cons, self.rhs_cons)):
            worst = float(np.max(l - r, initial=-np.inf))
            count = int(np.sum(l > r + self.slack))
            rep.add(f"{name}_ineq", count == 0, worst, self.slack,
                    detail=f"{count} violations over {len(l)} steps")
        return rep


def _require_noiseless(pairs, what):
    if any(stoch for *_, stoch in pairs):
        raise ModeError(f"{what} is pathwise only for noiseless (sigma = 0) runs")


def check_coupled_inequalities(trace, p, W: CombinationMatrix, dec: Decomposition, alpha: float,
                               fp: FixedPoint | None = None, slack: float = 1e-9) -> InequalityTrace:
    """Evaluate both sides of the coupled average/disagreement inequalities along a noiseless run.

    ``trace`` is a sequence of consecutive primal-dual (or GT, k >= 1)
    states.  With ``sigma = 0`` the expectations are pathwise, so every step
    must satisfy both inequalities up to ``slack``.
    """
    if not alpha < 1.0 / (4.0 * p.L):
        raise ModeError(f"inequalities need alpha < 1/(4L) = {1 / (4 * p.L):.4g}, got {alpha:.4g}")
    pairs = _pd_pairs(trace, W, alpha)
    _require_noiseless(pairs, "the coupled inequality check")
    fp = fp or solve_fixed_point(p, W, alpha)
    g_star = p.grad(fp.x_star)
    coords = [error_coords(x, z, p, W, dec, fp) for _, x, z, _ in pairs]
    lam4 = W.lam**4
    ks, la, ra, lc, rc = [], [], [], [], []
    for (k, x, _, _), cur, nxt in zip(pairs, coords, coords[1:]):
        grad_dev = float(np.sum((p.grad(x) - g_star) ** 2))
        ks.append(k)
        la.append(nxt.e_bar_norm2)
        ra.append((1 - p.mu * alpha) * cur.e_bar_norm2 - alpha * cur.f_gap
                  + 1.5 * alpha * dec.c1**2 * p.L / p.n * cur.x_hat_norm2)
        lc.append(nxt.x_hat_norm2)
        rc.append(dec.gamma * cur.x_hat_norm2
                  + alpha**2 * dec.c2**2 * lam4 / (1 - dec.gamma) * grad_dev)
    arr = lambda v: np.asarray(v, dtype=float)
    return InequalityTrace(np.asarray(ks, dtype=int), arr(la), arr(ra), arr(lc), arr(rc), slack)


def check_transformed_recursion(trace, p, W: CombinationMatrix, dec: Decomposition, alpha: float,
                                fp: FixedPoint | None = None) -> float:
    """Largest deviation between consecutive error coordinates and their one-step prediction."""
    pairs = _pd_pairs(trace, W, alpha)
    _require_noiseless(pairs, "the transformed recursion check")
    fp = fp or solve_fixed_point(p, W, alpha)
    g_star = p.grad(fp.x_star)
    Lam2 = (W.lambdas**2)[:, None]
    worst = 0.0
    coords = [error_coords(x, z, p, W, dec, fp) for _, x, z, _ in pairs]
    for (_, x, _, _), cur, nxt in zip(pairs, coords, coords[1:]):
        gx = p.grad(x)
        e_pred = cur.e_bar - alpha * gx.mean(axis=0)
        h_pred = dec.Gamma @ cur.x_hat - alpha * dec.V_left_inv @ (Lam2 * (W.U_hat.T @ (gx - g_star)))
        worst = max(worst, float(np.max(np.abs(e_pred - nxt.e_bar))),
                    float(np.max(np.abs(h_pred - nxt.x_hat), initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# theory constants and stepsize rules


@dataclass(frozen=True)
class TheoryConstants:
    regime: str  # "convex" or "strongly_convex"
    n: int
    L: float
    mu: float
    sigma2: float
    lam: float
    gamma: float
    c1: float
    c2: float
    grad_star_norm2: float  # ||U_hat^T grad f(x_star)||^2
    a_star: float
    a1: float
    a2: float
    alpha_cap: float  # 1 / underline-alpha
    a0: float = 0.0
    a3: float = 0.0
    K: int | None = None
    alpha: float | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    @property
    def alpha_underline(self) -> float:
        return 1.0 / self.alpha_cap

    def at(self, alpha: float, K: int | None = None) -> "TheoryConstants":
        A, b = recursion_matrix(self, alpha) if self.regime == "strongly_convex" else (None, None)
        return replace(self, alpha=float(alpha), K=K, A=A, b=b)


def _safe_div(num, den):
    return math.inf if den == 0 else num / den


def _c12(dec, c1, c2):
    return (dec.c1 if c1 is None else c1), (dec.c2 if c2 is None else c2)


def _sigma2(p, sigma2):
    if sigma2 is not None:
        return float(sigma2)
    return p.sigma2 if p.stochastic else 0.0


def _grad_star_norm2(p, W):
    g = p.grad_at_star()
    return float(np.sum((W.U_hat.T @ g) ** 2))


def convex_constants(p, W: CombinationMatrix, dec: Decomposition, c1=None, c2=None,
                     sigma2=None) -> TheoryConstants:
    """Constants of the convex rate; ``c1``/``c2`` default to the measured ones."""
    c1, c2 = _c12(dec, c1, c2)
    s2 = _sigma2(p, sigma2)
    lam, L, n = W.lam, p.L, p.n
    gn2 = _grad_star_norm2(p, W)
    cc = c1**2 * c2**2
    a_star = 18 * cc * L * lam**4 * gn2 / ((1 - lam) ** 3 * n)
    a1 = s2 / n
    a2 = 12 * cc * L * lam**4 * s2 / (1 - lam)
    cap = min(1 / (4 * L), _safe_div(1 - lam, 4 * math.sqrt(6) * c1 * c2 * L * lam**2))
    return TheoryConstants("convex", n, L, p.mu, s2, lam, dec.gamma, c1, c2, gn2,
                           a_star, a1, a2, cap)


def convex_stepsize(tc: TheoryConstants, K: int, e0_norm2: float) -> float:
    """``min{(e0/(a1 K))^(1/2), (e0/(a2 K))^(1/3), alpha_cap}``."""
    if K < 1:
        raise InvalidHorizonError(f"horizon must be >= 1, got {K}")
    if e0_norm2 <= 0:
        raise ValueError("initial average error must be positive")
    return min(_safe_div(e0_norm2, tc.a1 * K) ** 0.5,
               _safe_div(e0_norm2, tc.a2 * K) ** (1 / 3),
               tc.alpha_cap)


def convex_psi(tc: TheoryConstants, alpha: float, K: int, e0_norm2: float) -> float:
    return e0_norm2 / (alpha * K) + tc.a1 * alpha + tc.a2 * alpha**2


def convex_case_bound(tc: TheoryConstants, K: int, e0_norm2: float) -> float:
    """Upper bound on ``psi_K`` at the selected stepsize, valid in all three cases."""
    r = e0_norm2 / K
    return 2 * math.sqrt(tc.a1 * r) + 2 * tc.a2 ** (1 / 3) * r ** (2 / 3) + tc.alpha_underline * r


def convex_rate_bound(tc: TheoryConstants, K: int, e0_norm2: float) -> float:
    """Bound on the averaged optimality-plus-disagreement measure after ``K`` steps."""
    return convex_case_bound(tc, K, e0_norm2) + tc.a_star * tc.alpha_cap**2 / K


def theorem1_rhs(p, W: CombinationMatrix, K: int, e0_norm2: float, C: float = 1.0,
                 sigma2=None) -> float:
    """Order-level convex rate with absolute constant ``C``."""
    s2 = _sigma2(p, sigma2)
    lam, L, n = W.lam, p.L, p.n
    gap = 1 - lam
    return (math.sqrt(s2 * e0_norm2 / (n * K))
            + (L * lam**4 * s2 / gap) ** (1 / 3) * (e0_norm2 / K) ** (2 / 3)
            + (L * lam**2 / gap * e0_norm2 + p.varsigma_star2 / (L * gap)) * C / K)


def sc_constants(p, W: CombinationMatrix, dec: Decomposition, a0: float | None = None, c1=None,
                 c2=None, sigma2=None) -> TheoryConstants:
    """Constants of the strongly convex rate. ``a0`` defaults to a zero start."""
    if p.mu <= 0:
        raise WrongRegimeError("strongly convex constants need mu > 0")
    c1, c2 = _c12(dec, c1, c2)
    s2 = _sigma2(p, sigma2)
    lam, L, n, mu, gamma = W.lam, p.L, p.n, p.mu, dec.gamma
    if a0 is None:
        a0 = float(np.sum(p.x_star**2))
    gn2 = _grad_star_norm2(p, W)
    cc = c1**2 * c2**2
    a_star = cc * lam**4 * gn2 / ((1 - lam) ** 2 * n)
    a1 = 2 * s2 / (mu * n)
    a2 = 10 * cc * L * lam**4 * s2 / (mu * (1 - gamma))
    a3 = 8 * cc * L**2 * lam**4 * s2 / (mu * n * (1 - gamma) ** 2)
    cap = min((1 - lam) / (8 * L),
              _safe_div(mu * (1 - lam), 8 * cc * L**2 * lam**4),
              _safe_div(math.sqrt(mu) * (1 - lam), 4 * math.sqrt(3) * c1 * c2 * L**1.5 * lam**2))
    return TheoryConstants("strongly_convex", n, L, mu, s2, lam, gamma, c1, c2, gn2,
                           a_star, a1, a2, cap, a0=float(a0), a3=a3)


def sc_stepsize(tc: TheoryConstants, K: int) -> float:
    """Logarithmic stepsize rule, capped at ``alpha_cap``."""
    if tc.regime != "strongly_convex":
        raise WrongRegimeError("sc_stepsize needs strongly convex constants")
    if K < 1:
        raise InvalidHorizonError(f"horizon must be >= 1, got {K}")
    drive = tc.mu**2 * (tc.a0 + tc.a_star * tc.alpha_cap**2) * K
    arg = max(2.0, _safe_div(drive, tc.a1))
    return min(math.log(arg) / (tc.mu * K), tc.alpha_cap)


def sc_stepsize_condition(tc: TheoryConstants) -> float:
    """Largest stepsize for which ``||A||_1 <= 1 - mu alpha / 2``."""
    cc = tc.c1**2 * tc.c2**2
    return min(_safe_div(tc.mu * (1 - tc.gamma), 4 * cc * tc.L**2 * tc.lam**4),
               (1 - tc.gamma) / (3 * tc.L + tc.mu))


def recursion_matrix(tc: TheoryConstants, alpha: float):
    """2x2 matrix ``A`` and drive ``b`` of the linear bound on (avg error, scaled disagreement)."""
    cc = tc.c1**2 * tc.c2**2
    lam4 = tc.lam**4
    A = np.array([
        [1 - tc.mu * alpha, 1.5 * alpha * tc.L],
        [2 * alpha**2 * cc * tc.L**2 * lam4 / (1 - tc.gamma), (1 + tc.gamma) / 2],
    ])
    b = np.array([alpha**2 * tc.sigma2 / tc.n, alpha**2 * cc * lam4 * tc.sigma2])
    return A, b


def spectral_check(tc: TheoryConstants, alpha: float, tol: float = 1e-12) -> Report:
    A, _ = recursion_matrix(tc, alpha)
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    norm1 = float(np.linalg.norm(A, 1))
    target = 1 - tc.mu * alpha / 2
    cond = sc_stepsize_condition(tc)
    rep = Report(f"recursion matrix at alpha={alpha:.6g}")
    rep.add("stepsize_condition", alpha <= cond, alpha, cond)
    rep.add("rho_le_norm1", rho <= norm1 + tol, rho, norm1)
    rep.add("norm1_contraction", norm1 <= target + tol, norm1, target)
    rep.add("rho_contraction", rho <= target + tol, rho, target)
    return rep


def theorem2_rhs(tc: TheoryConstants, alpha: float, K: int) -> float:
    """Non-asymptotic strongly convex bound at stepsize ``alpha`` and horizon ``K``."""
    return (math.exp(-alpha * tc.mu * K / 2) * (tc.a0 + alpha**2 * tc.a_star)
            + tc.a1 * alpha + tc.a2 * alpha**2 + tc.a3 * alpha**3)


def theorem2_order(p, W: CombinationMatrix, K: int, a0: float, sigma2=None) -> float:
    """Order-level strongly convex rate with unit constants (log factors dropped)."""
    s2 = _sigma2(p, sigma2)
    gap = 1 - W.lam
    n = p.n
    return (s2 / (n * K) + s2 / (gap * K**2) + s2 / (gap**2 * n * K**3)
            + (a0 + p.varsigma_star2) * math.exp(-gap * K))
