"""Synthetic decentralized problems with stochastic gradient oracles.

Every problem holds ``n`` local objectives ``f_i`` on ``R^d`` and works on
stacked iterates of shape ``(..., n, d)``; leading axes are carried through
so several independent repetitions can be advanced in one array.

A data sample ``xi`` for one iteration covers all agents.  Samples are
drawn by :meth:`ProblemSet.draw` and turned into gradients by
:meth:`ProblemSet.sample_grad`, which keeps the randomness (owned by the
caller's stream) separate from the gradient arithmetic.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np
import scipy.optimize
from scipy.special import expit

from .errors import DimensionError, OracleConstructionError

SNAPSHOT_FORMAT = "gtlab-problem/1"


@dataclass(frozen=True)
class GradientSample:
    agent: int
    value: np.ndarray
    is_stochastic: bool


class ProblemSet:
    """Common interface; see the ``make_*`` constructors."""

    kind = "abstract"

    def __init__(self, n, d, *, L, mu, x_star, sigma2, params, sigma_v2=0.0, sigma_n2=0.0,
                 stochastic=True):
        self.n = int(n)
        self.d = int(d)
        self.L = float(L)
        self.mu = float(mu)
        self.x_star = np.asarray(x_star, dtype=float)
        self.sigma2 = float(sigma2)
        self.sigma_v2 = float(sigma_v2)
        self.sigma_n2 = float(sigma_n2)
        self.params = dict(params)
        self.stochastic = bool(stochastic)
        self.f_star = float(self.value(self.x_star))
        self.varsigma_star2 = float(np.mean(np.sum(self.grad_at_star() ** 2, axis=-1)))

    # -- exact oracle ---------------------------------------------------------
    def grad(self, x):
        """Exact local gradients for stacked ``x`` of shape ``(..., n, d)``."""
        raise NotImplementedError

    def value(self, x):
        """Global objective ``f(x) = mean_i f_i(x)`` at points ``x`` of shape ``(..., d)``."""
        raise NotImplementedError

    def local_grad(self, i, x):
        x = np.asarray(x, dtype=float)
        stacked = np.broadcast_to(x, (self.n, self.d))
        return self.grad(stacked)[i]

    def grad_at_star(self):
        return self.grad(np.broadcast_to(self.x_star, (self.n, self.d)))

    # -- stochastic oracle -----------------------------------------------------
    def draw(self, rng, count):
        """Data samples for ``count`` iterations, leading axis = iteration."""
        raise NotImplementedError

    def sample_grad(self, x, xi):
        """Stochastic gradients of all agents at ``x`` for samples ``xi``."""
        raise NotImplementedError

    def noisy_grad(self, x, xi):
        """``sample_grad`` when stochastic and ``xi`` given, else exact."""
        if xi is None or not self.stochastic:
            return self.grad(x)
        return self.sample_grad(x, xi)

    def noiseless(self):
        """Copy whose oracle always returns exact gradients (sigma^2 = 0)."""
        p = copy.copy(self)
        p.stochastic = False
        p.sigma2 = 0.0
        return p

    def check_shape(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-2:] != (self.n, self.d):
            raise DimensionError(f"expected trailing shape {(self.n, self.d)}, got {x.shape}")
        return x

    def __repr__(self):
        return (f"{type(self).__name__}(n={self.n}, d={self.d}, L={self.L:.4g}, "
                f"mu={self.mu:.4g}, sigma2={self.sigma2:.4g}, "
                f"varsigma_star2={self.varsigma_star2:.4g})")


class LinRegProblem(ProblemSet):
    """``f_i(x) = 1/2 E (a^T x - b)^2`` with ``a ~ N(0, I)``, ``b = a^T x_i + noise``.

    Exactly ``f_i(x) = 1/2 ||x - x_i||^2 + sigma_n2 / 2``, so ``L = mu = 1``.
    """

    kind = "linreg"

    def __init__(self, x_local, sigma_n2, *, sigma2, params, sigma_v2, x_center):
        self.x_local = np.asarray(x_local, dtype=float)
        self.x_center = np.asarray(x_center, dtype=float)
        n, d = self.x_local.shape
        super().__init__(n, d, L=1.0, mu=1.0, x_star=self.x_local.mean(axis=0), sigma2=sigma2,
                         params=params, sigma_v2=sigma_v2, sigma_n2=sigma_n2)

    def grad(self, x):
        return self.check_shape(x) - self.x_local

    def value(self, x):
        diff = np.asarray(x, dtype=float)[..., None, :] - self.x_local
        return 0.5 * np.mean(np.sum(diff**2, axis=-1), axis=-1) + 0.5 * self.sigma_n2

    def draw(self, rng, count):
        # columns 0..d-1: regressor a; column d: standard normal label noise
        return rng.standard_normal((count, self.n, self.d + 1))

    def sample_grad(self, x, xi):
        a = xi[..., : self.d]
        resid = np.sum(a * (x - self.x_local), axis=-1) - np.sqrt(self.sigma_n2) * xi[..., self.d]
        return a * resid[..., None]

    def noise_variance(self, x):
        """Closed-form ``E||grad F_i - grad f_i||^2`` per agent at stacked ``x``."""
        e2 = np.sum((x - self.x_local) ** 2, axis=-1)
        return (self.d + 1) * e2 + self.d * self.sigma_n2


class QuadraticProblem(ProblemSet):
    """``f_i(x) = 1/2 (x - x_i)^T Q_i (x - x_i)`` with optional additive gradient noise."""

    kind = "quadratic"

    def __init__(self, Q, x_local, noise_var, *, params, sigma_v2):
        self.Q = np.asarray(Q, dtype=float)
        self.x_local = np.asarray(x_local, dtype=float)
        self.noise_var = float(noise_var)
        self.b = np.einsum("nij,nj->ni", self.Q, self.x_local)
        eig = np.linalg.eigvalsh(self.Q)
        x_star = np.linalg.solve(self.Q.sum(axis=0), self.b.sum(axis=0))
        super().__init__(self.x_local.shape[0], self.x_local.shape[1], L=eig.max(), mu=eig.min(),
                         x_star=x_star, sigma2=self.noise_var, params=params, sigma_v2=sigma_v2,
                         stochastic=self.noise_var > 0)

    def grad(self, x):
        x = self.check_shape(x)
        return np.einsum("nij,...nj->...ni", self.Q, x - self.x_local)

    def value(self, x):
        diff = np.asarray(x, dtype=float)[..., None, :] - self.x_local
        quad = np.einsum("...ni,nij,...nj->...n", diff, self.Q, diff)
        return 0.5 * np.mean(quad, axis=-1)

    def draw(self, rng, count):
        return rng.standard_normal((count, self.n, self.d))

    def sample_grad(self, x, xi):
        return self.grad(x) + np.sqrt(self.noise_var / self.d) * xi


class LogRegProblem(ProblemSet):
    """``f_i(x) = mean_j log(1 + exp(-y_ij h_ij^T x))`` over a finite per-agent pool.

    A stochastic gradient uses one pool sample drawn uniformly with
    replacement, so ``f_i``, ``x_star`` and ``sigma2`` are exact.
    """

    kind = "logreg"

    def __init__(self, H, y, *, params, sigma_v2, x_local, x_center, tol=1e-10):
        self.H = np.asarray(H, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.x_local = np.asarray(x_local, dtype=float)
        self.x_center = np.asarray(x_center, dtype=float)
        n, m, d = self.H.shape
        self.m = m
        self.n, self.d = n, d
        L = 0.25 * float(np.max(np.mean(np.sum(self.H**2, axis=-1), axis=-1)))
        x_star = self._solve(tol)
        sigma2 = self._pool_variance(x_star)
        super().__init__(n, d, L=L, mu=0.0, x_star=x_star, sigma2=sigma2, params=params,
                         sigma_v2=sigma_v2)

    def _margins(self, x):
        # x: (..., d) -> (..., n, m)
        return np.einsum("nmd,...d->...nm", self.H, x) * self.y

    def _solve(self, tol):
        Hf = self.H.reshape(-1, self.d)
        yf = self.y.reshape(-1)
        N = Hf.shape[0]

        def fun(x):
            return np.mean(np.logaddexp(0.0, -yf * (Hf @ x)))

        def jac(x):
            return -(Hf.T @ (yf * expit(-yf * (Hf @ x)))) / N

        def hess(x):
            s = expit(yf * (Hf @ x))
            w = s * (1.0 - s)
            return (Hf.T * w) @ Hf / N

        res = scipy.optimize.minimize(fun, np.zeros(self.d), jac=jac, hess=hess,
                                      method="trust-exact", options={"gtol": tol * 1e-2})
        x = res.x
        for _ in range(20):  # Newton polish
            g = jac(x)
            if np.linalg.norm(g) <= tol:
                return x
            x = x - np.linalg.solve(hess(x), g)
        if np.linalg.norm(jac(x)) > tol:
            raise OracleConstructionError(
                f"logistic optimum not found: |grad f| = {np.linalg.norm(jac(x)):.3g}")
        return x

    def _pool_grads(self, x):
        # per-sample gradients at a common point x (d,) -> (n, m, d)
        coef = -self.y * expit(-self._margins(x))
        return coef[..., None] * self.H

    def _pool_variance(self, x):
        g = self._pool_grads(x)
        dev = g - g.mean(axis=1, keepdims=True)
        return float(np.max(np.mean(np.sum(dev**2, axis=-1), axis=-1)))

    def grad(self, x):
        x = self.check_shape(x)
        margins = np.einsum("nmd,...nd->...nm", self.H, x) * self.y
        coef = -self.y * expit(-margins)
        return np.einsum("...nm,nmd->...nd", coef, self.H) / self.m

    def value(self, x):
        return np.mean(np.logaddexp(0.0, -self._margins(np.asarray(x, dtype=float))),
                       axis=(-2, -1))

    def draw(self, rng, count):
        return rng.integers(0, self.m, size=(count, self.n))

    def sample_grad(self, x, xi):
        agents = np.arange(self.n)
        h = self.H[agents, xi]
        y = self.y[agents, xi]
        coef = -y * expit(-y * np.sum(h * x, axis=-1))
        return coef[..., None] * h


def _seed_streams(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def make_linreg(n, d, sigma_v2=1.0, sigma_n2=0.01, seed=0, sigma2_draws=100_000):
    """Heterogeneous linear regression with local solutions ``x_i = x_c + v_i``.

    ``sigma2`` is the largest per-agent gradient-noise variance at the
    optimum, estimated from ``sigma2_draws`` samples per agent.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if sigma_v2 < 0 or sigma_n2 < 0:
        raise ValueError("variances must be nonnegative")
    data_rng, est_rng = _seed_streams(seed, 2)
    x_center = data_rng.standard_normal(d)
    x_local = x_center + np.sqrt(sigma_v2) * data_rng.standard_normal((n, d))
    params = dict(n=n, d=d, sigma_v2=sigma_v2, sigma_n2=sigma_n2, seed=seed,
                  sigma2_draws=sigma2_draws)
    p = LinRegProblem(x_local, sigma_n2, sigma2=0.0, params=params, sigma_v2=sigma_v2,
                      x_center=x_center)
    p.sigma2 = _estimate_sigma2(p, est_rng, sigma2_draws)
    return p


def _estimate_sigma2(p, rng, draws, chunk=10_000):
    if draws <= 0:
        return float(np.max(p.noise_variance(np.broadcast_to(p.x_star, (p.n, p.d)))))
    x = np.broadcast_to(p.x_star, (p.n, p.d))
    exact = p.grad(x)
    total = np.zeros(p.n)
    done = 0
    while done < draws:
        c = min(chunk, draws - done)
        g = p.sample_grad(x, p.draw(rng, c))
        total += np.sum((g - exact) ** 2, axis=(0, 2))
        done += c
    return float(np.max(total / draws))


def make_logreg(n, d, sigma_v2=1.0, samples_per_agent=2000, seed=0):
    """Heterogeneous logistic regression with labels from the sigmoid model at ``x_i``."""
    if n < 1 or d < 1 or samples_per_agent < 1:
        raise ValueError("n, d and samples_per_agent must be positive")
    (rng,) = _seed_streams(seed, 1)
    x_center = rng.standard_normal(d)
    x_local = x_center + np.sqrt(sigma_v2) * rng.standard_normal((n, d))
    H = rng.standard_normal((n, samples_per_agent, d))
    z = rng.uniform(size=(n, samples_per_agent))
    prob_pos = expit(np.einsum("nmd,nd->nm", H, x_local))
    y = np.where(z <= prob_pos, 1.0, -1.0)
    params = dict(n=n, d=d, sigma_v2=sigma_v2, samples_per_agent=samples_per_agent, seed=seed)
    return LogRegProblem(H, y, params=params, sigma_v2=sigma_v2, x_local=x_local,
                         x_center=x_center)


def make_quadratic(n, d, mu=0.5, L=2.0, sigma_v2=1.0, noise_var=0.0, seed=0):
    """Random strongly convex quadratics with Hessian spectra inside ``[mu, L]``.

    Agent 0's Hessian attains both ends so the problem constants equal
    ``mu`` and ``L`` exactly.  ``noise_var > 0`` adds isotropic Gaussian
    gradient noise of total variance ``noise_var``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")
    (rng,) = _seed_streams(seed, 1)
    Q = np.empty((n, d, d))
    for i in range(n):
        R, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eig = rng.uniform(mu, L, size=d)
        if i == 0:
            eig[0] = mu
            eig[-1] = L
        Q[i] = (R * eig) @ R.T
        Q[i] = 0.5 * (Q[i] + Q[i].T)
    x_center = rng.standard_normal(d)
    x_local = x_center + np.sqrt(sigma_v2) * rng.standard_normal((n, d))
    params = dict(n=n, d=d, mu=mu, L=L, sigma_v2=sigma_v2, noise_var=noise_var, seed=seed)
    return QuadraticProblem(Q, x_local, noise_var, params=params, sigma_v2=sigma_v2)


MAKERS = {"linreg": make_linreg, "logreg": make_logreg, "quadratic": make_quadratic}


def make_problem(kind, **kwargs):
    try:
        maker = MAKERS[kind]
    except KeyError:
        raise ValueError(f"unknown problem kind {kind!r}; expected one of {sorted(MAKERS)}")
    return maker(**kwargs)


def stochastic_gradient(p: ProblemSet, i: int, x, rng=None) -> GradientSample:
    """One agent's gradient sample at ``x``; exact when ``rng`` is None or ``p`` is noiseless."""
    if not 0 <= i < p.n:
        raise IndexError(f"agent {i} out of range for n={p.n}")
    x = np.asarray(x, dtype=float)
    if rng is None or not p.stochastic:
        return GradientSample(i, p.local_grad(i, x), False)
    stacked = np.broadcast_to(x, (p.n, p.d))
    xi = p.draw(rng, 1)[0]
    return GradientSample(i, p.sample_grad(stacked, xi)[i], True)


def full_gradient(p: ProblemSet, i: int, x):
    return p.local_grad(i, x)


def heterogeneity(p: ProblemSet) -> float:
    """``(1/n) sum_i ||grad f_i(x_star)||^2``."""
    return p.varsigma_star2


def to_snapshot(p: ProblemSet) -> str:
    """Self-describing JSON text; floats of ``x_star`` are stored as hex for bit-exact replay."""
    doc = {
        "format": SNAPSHOT_FORMAT,
        "kind": p.kind,
        "params": p.params,
        "stochastic": p.stochastic,
        "constants": {"L": p.L, "mu": p.mu, "sigma2": p.sigma2,
                      "varsigma_star2": p.varsigma_star2, "f_star": p.f_star},
        "x_star": [float(v).hex() for v in p.x_star],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def from_snapshot(text: str) -> ProblemSet:
    doc = json.loads(text)
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"not a gtlab problem snapshot: format={doc.get('format')!r}")
    p = make_problem(doc["kind"], **doc["params"])
    expected = np.array([float.fromhex(h) for h in doc["x_star"]])
    if not np.array_equal(expected, p.x_star):
        raise ValueError("rebuilt problem does not reproduce the recorded optimum bit-exactly")
    if not doc.get("stochastic", True):
        p = p.noiseless()
    return p
