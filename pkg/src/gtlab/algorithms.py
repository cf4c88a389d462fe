"""Steppers for ATC gradient tracking, its primal-dual form, DSGD and CSGD.

Every stepper is a pure transition ``(state, inputs) -> new state``.  Data
samples come from a :class:`SampleStream`; at iteration ``k`` every
algorithm evaluates its gradient with the ``k``-th sample, so methods fed
streams with the same seed see identical data.  Passing ``stream=None``
(or a noiseless problem) gives exact gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, StateError
from .topology import CombinationMatrix

DEFAULT_CHUNK = 256


class SampleStream:
    """Sequential per-run source of data samples.

    ``seeds`` is one seed (unbatched) or a sequence of seeds, one per
    repetition, in which case each draw stacks the repetitions on a leading
    axis.  Draws are buffered in fixed-size chunks per repetition, so a
    repetition's samples depend only on its own seed.
    """

    def __init__(self, problem, seeds, chunk: int = DEFAULT_CHUNK):
        self.problem = problem
        self.batched = not isinstance(seeds, (int, np.integer, np.random.SeedSequence))
        seed_list = list(seeds) if self.batched else [seeds]
        self._rngs = [np.random.default_rng(s) for s in seed_list]
        self.chunk = int(chunk)
        self._buf = None
        self._pos = 0
        self.draws = 0

    @property
    def reps(self) -> int:
        return len(self._rngs)

    def next(self):
        if self._buf is None or self._pos == self.chunk:
            blocks = [self.problem.draw(rng, self.chunk) for rng in self._rngs]
            self._buf = np.stack(blocks, axis=1) if self.batched else blocks[0]
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        self.draws += 1
        return out


def _draw(stream, p):
    if stream is None or not p.stochastic:
        return None
    return stream.next()


def _matrix(W):
    return W.W if isinstance(W, CombinationMatrix) else np.asarray(W, dtype=float)


def _check(W, x, p):
    if x.shape[-2:] != (p.n, p.d) or W.shape != (p.n, p.n):
        raise DimensionError(
            f"iterate {x.shape} / weights {W.shape} do not match n={p.n}, d={p.d}")


@dataclass(frozen=True)
class GTState:
    x: np.ndarray
    g: np.ndarray
    k: int
    last_grad: np.ndarray  # sample gradient at x^k, reused by the next tracker update
    stochastic: bool = False


@dataclass(frozen=True)
class PDState:
    x: np.ndarray
    z: np.ndarray
    k: int
    stochastic: bool = False

    @classmethod
    def initial(cls, x0):
        x0 = np.asarray(x0, dtype=float)
        return cls(x=x0, z=np.zeros_like(x0), k=0)


@dataclass(frozen=True)
class BaselineState:
    x: np.ndarray  # (..., n, d) for DSGD, (..., d) for CSGD
    k: int
    stochastic: bool = False


def gt_init(x0, p, stream=None) -> GTState:
    x0 = p.check_shape(x0)
    xi = _draw(stream, p)
    G0 = p.noisy_grad(x0, xi)
    return GTState(x=x0, g=G0, k=0, last_grad=G0, stochastic=xi is not None)


def gt_step(s: GTState, W, p, alpha: float, stream=None) -> GTState:
    """One ATC-GT iteration: combine after a tracked gradient step."""
    W = _matrix(W)
    _check(W, s.x, p)
    if alpha <= 0:
        raise ValueError("stepsize must be positive")
    x_new = W @ (s.x - alpha * s.g)
    xi = _draw(stream, p)
    G_new = p.noisy_grad(x_new, xi)
    g_new = W @ (s.g + G_new - s.last_grad)
    return GTState(x=x_new, g=g_new, k=s.k + 1, last_grad=G_new,
                   stochastic=s.stochastic or xi is not None)


def gt_pd_init(x0, W, p, alpha: float, stream=None) -> PDState:
    """First primal-dual state ``(x^1, z^1)`` reproducing the GT iterates.

    ``x^1 = W(x^0 - alpha grad F(x^0))`` and ``z^1 = -(x^1 - 1 xbar^1)``:
    the primal-dual recursion matches GT from ``k = 1`` on exactly when
    ``(I - W) z^1 = -(I - W) x^1``, and this is the mean-zero solution.
    """
    W = _matrix(W)
    x0 = p.check_shape(x0)
    _check(W, x0, p)
    xi = _draw(stream, p)
    G0 = p.noisy_grad(x0, xi)
    x1 = W @ (x0 - alpha * G0)
    z1 = -(x1 - x1.mean(axis=-2, keepdims=True))
    return PDState(x=x1, z=z1, k=1, stochastic=xi is not None)


def gt_pd_step(s: PDState, W, p, alpha: float, stream=None) -> PDState:
    """Primal-dual form of GT, valid from ``k = 1`` on."""
    if s.k < 1:
        raise StateError("primal-dual GT must start from gt_pd_init (k >= 1)")
    W = _matrix(W)
    _check(W, s.x, p)
    if alpha <= 0:
        raise ValueError("stepsize must be positive")
    xi = _draw(stream, p)
    G = p.noisy_grad(s.x, xi)
    Wx = W @ s.x
    x_new = 2.0 * Wx - s.x - alpha * (W @ (W @ G)) - (s.z - W @ s.z)
    z_new = s.z + s.x - Wx
    return PDState(x=x_new, z=z_new, k=s.k + 1, stochastic=s.stochastic or xi is not None)


def gt_dual(s: GTState, W: CombinationMatrix, alpha: float):
    """Dual variable of the primal-dual form matching a GT state (``k >= 1``).

    Solves ``(I - W) z = -(I - W) x + alpha W (g - W grad F(x))`` on the
    mean-zero subspace.
    """
    if s.k < 1:
        raise StateError("the dual variable is only defined from k = 1 on")
    Wm = W.W
    rhs = -(s.x - Wm @ s.x) + alpha * (Wm @ (s.g - Wm @ s.last_grad))
    return W.solve_B(rhs)


def dsgd_init(x0, p) -> BaselineState:
    return BaselineState(x=p.check_shape(x0), k=0)


def dsgd_step(s: BaselineState, W, p, alpha: float, stream=None) -> BaselineState:
    """Adapt-then-combine DSGD: ``x^{k+1} = W (x^k - alpha grad F(x^k))``."""
    W = _matrix(W)
    _check(W, s.x, p)
    xi = _draw(stream, p)
    x_new = W @ (s.x - alpha * p.noisy_grad(s.x, xi))
    return BaselineState(x=x_new, k=s.k + 1, stochastic=s.stochastic or xi is not None)


def csgd_init(x0, p) -> BaselineState:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != p.d:
        raise DimensionError(f"expected trailing dimension {p.d}, got {x0.shape}")
    return BaselineState(x=x0, k=0)


def csgd_step(s: BaselineState, p, alpha: float, stream=None) -> BaselineState:
    """Centralized SGD averaging one fresh sample gradient per agent."""
    if s.x.shape[-1] != p.d:
        raise DimensionError(f"expected trailing dimension {p.d}, got {s.x.shape}")
    stacked = np.broadcast_to(s.x[..., None, :], s.x.shape[:-1] + (p.n, p.d))
    xi = _draw(stream, p)
    G = p.noisy_grad(stacked, xi)
    x_new = s.x - alpha * G.mean(axis=-2)
    return BaselineState(x=x_new, k=s.k + 1, stochastic=s.stochastic or xi is not None)


def stacked_iterate(state, p):
    """Agent-stacked iterate ``(..., n, d)`` of any state (CSGD is replicated)."""
    x = state.x
    if x.shape[-2:] == (p.n, p.d):
        return x
    return np.broadcast_to(x[..., None, :], x.shape[:-1] + (p.n, p.d))


ALGORITHMS = ("gt", "gt_pd", "dsgd", "csgd")


def init_state(algo, x0, W, p, alpha, stream=None):
    """Initial state for ``algo`` from a stacked start ``x0`` of shape ``(..., n, d)``."""
    if algo == "gt":
        return gt_init(x0, p, stream)
    if algo == "gt_pd":
        return PDState.initial(x0)
    if algo == "dsgd":
        return dsgd_init(x0, p)
    if algo == "csgd":
        x0 = np.asarray(x0, dtype=float)
        return csgd_init(x0.mean(axis=-2), p)
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")


def advance(algo, state, W, p, alpha, stream=None):
    """Apply one iteration of ``algo``; the primal-dual form bootstraps itself at ``k = 0``."""
    if algo == "gt":
        return gt_step(state, W, p, alpha, stream)
    if algo == "gt_pd":
        if state.k == 0:
            return gt_pd_init(state.x, W, p, alpha, stream)
        return gt_pd_step(state, W, p, alpha, stream)
    if algo == "dsgd":
        return dsgd_step(state, W, p, alpha, stream)
    if algo == "csgd":
        return csgd_step(state, p, alpha, stream)
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
