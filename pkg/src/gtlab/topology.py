"""Static network graphs, combination matrices and their spectral data.

Weight matrices act on stacked agent arrays of shape ``(..., n, d)`` by
plain left multiplication ``W @ x``; the Kronecker lift ``W (x) I_d`` is
never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .errors import DimensionError, InvalidSizeError, NotPrimitiveError
from .report import Report

KINDS = ("ring", "exponential", "complete", "custom")
RULES = ("uniform", "metropolis")

_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Topology:
    """Undirected graph on ``n`` agents with self-loops.

    ``offsets`` is set for the circulant kinds (ring, exponential, complete)
    and lists the hop distances each agent sends to; ``adjacency`` is always
    the symmetric closure of those hops.
    """

    n: int
    kind: str
    adjacency: np.ndarray = field(repr=False)
    offsets: tuple[int, ...] | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.shape != (self.n, self.n):
            raise DimensionError(f"adjacency must be {self.n}x{self.n}, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if not a.diagonal().all():
            raise ValueError("every agent must be its own neighbour")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    def neighbors(self, i: int) -> set[int]:
        return set(np.flatnonzero(self.adjacency[i]).tolist())

    def out_neighbors(self, i: int) -> set[int]:
        """Closed out-neighbourhood along the generating hops."""
        if self.offsets is None:
            return self.neighbors(i)
        return {(i + o) % self.n for o in (0, *self.offsets)}

    @property
    def degrees(self) -> np.ndarray:
        """Closed-neighbourhood sizes (self included)."""
        return self.adjacency.sum(axis=1)

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        ncomp, _ = connected_components(self.adjacency, directed=False)
        return ncomp == 1


def _circulant(n: int, kind: str, offsets) -> Topology:
    offsets = tuple(int(o) for o in offsets)
    adj = np.eye(n, dtype=bool)
    for i in range(n):
        for o in offsets:
            j = (i + o) % n
            adj[i, j] = adj[j, i] = True
    return Topology(n=n, kind=kind, adjacency=adj, offsets=offsets)


def exponential_hops(n: int) -> list[int]:
    hops, h = [], 1
    while h < n:
        hops.append(h)
        h *= 2
    return hops


def build_topology(kind: str, n: int) -> Topology:
    """Build a ring, exponential or complete graph on ``n`` agents.

    The exponential graph links agent ``i`` to ``i + 2**j (mod n)`` for every
    power of two below ``n``.
    """
    if n < 1:
        raise InvalidSizeError(f"need at least one agent, got n={n}")
    if kind == "ring":
        return _circulant(n, kind, (1, -1) if n > 1 else ())
    if kind == "exponential":
        return _circulant(n, kind, exponential_hops(n))
    if kind == "complete":
        return _circulant(n, kind, range(1, n))
    if kind == "custom":
        raise ValueError("custom topologies come from from_edges() or read_edge_list()")
    raise ValueError(f"unknown graph kind {kind!r}; expected one of {KINDS}")


def from_edges(n: int, edges) -> Topology:
    if n < 1:
        raise InvalidSizeError(f"need at least one agent, got n={n}")
    adj = np.eye(n, dtype=bool)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise DimensionError(f"edge ({i}, {j}) out of range for n={n}")
        adj[i, j] = adj[j, i] = True
    return Topology(n=n, kind="custom", adjacency=adj)


def parse_edge_list(text: str, n: int | None = None) -> Topology:
    """Parse ``"i j"`` lines (0-indexed, undirected). ``#`` starts a comment."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'i j', got {raw!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if n is None:
        n = 1 + max((max(e) for e in edges), default=0)
    return from_edges(n, edges)


def read_edge_list(path, n: int | None = None) -> Topology:
    return parse_edge_list(Path(path).read_text(), n=n)


def write_edge_list(topology: Topology, path) -> None:
    iu, ju = np.nonzero(np.triu(topology.adjacency, k=1))
    lines = [f"{i} {j}" for i, j in zip(iu.tolist(), ju.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# combination matrices


def _spectral_data(W: np.ndarray):
    """Eigen-data on the mean-zero subspace.

    Returns ``(lambdas, U_hat)`` with ``lambdas`` sorted descending and
    ``U_hat`` an ``n x (n-1)`` orthonormal basis orthogonal to the ones
    vector.  Eigenvector signs are fixed so the first nonzero entry is
    positive; ties are ordered lexicographically.
    """
    n = W.shape[0]
    if n == 1:
        return np.zeros(0), np.zeros((1, 0))
    Q = scipy.linalg.helmert(n).T  # n x (n-1), orthonormal, Q^T 1 = 0
    M = Q.T @ W @ Q
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    U = Q @ vecs
    for c in range(U.shape[1]):
        col = U[:, c]
        nz = np.flatnonzero(np.abs(col) > 1e-10)
        if nz.size and col[nz[0]] < 0:
            U[:, c] = -col
    # descending eigenvalues; within numerically tied groups, lexicographic
    # order of the eigenvectors
    order = sorted(
        range(len(vals)),
        key=lambda c: (-np.round(vals[c] / _TIE_TOL) * _TIE_TOL, tuple(np.round(U[:, c], 12))),
    )
    return vals[order], U[:, order]


@dataclass(frozen=True)
class CombinationMatrix:
    """Symmetric doubly stochastic weight matrix with its spectral objects.

    ``eigvals`` holds all eigenvalues (``eigvals[0] == 1``), ``lambdas`` the
    ones on the mean-zero subspace, ``U_hat`` the matching orthonormal
    eigenvectors and ``lam`` the mixing rate ``max_{i>=2} |lambda_i|``.
    """

    W: np.ndarray = field(repr=False)
    lam: float
    eigvals: np.ndarray = field(repr=False)
    U_hat: np.ndarray = field(repr=False)
    rule: str = "custom"

    @classmethod
    def from_matrix(cls, W, rule: str = "custom") -> "CombinationMatrix":
        W = np.array(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionError(f"combination matrix must be square, got {W.shape}")
        if np.max(np.abs(W - W.T), initial=0.0) > 1e-12:
            raise ValueError("combination matrix must be symmetric")
        if np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("combination matrix must be doubly stochastic")
        lambdas, U_hat = _spectral_data(W)
        lam = float(np.max(np.abs(lambdas), initial=0.0))
        eigvals = np.concatenate([[1.0], lambdas])
        for a in (W, eigvals, U_hat):
            a.setflags(write=False)
        return cls(W=W, lam=lam, eigvals=eigvals, U_hat=U_hat, rule=rule)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def lambdas(self) -> np.ndarray:
        return self.eigvals[1:]

    @property
    def Lambda_sub(self) -> np.ndarray:
        return np.diag(self.lambdas)

    @property
    def gap(self) -> float:
        return 1.0 - self.lam

    @property
    def B(self) -> np.ndarray:
        return np.eye(self.n) - self.W

    def is_psd(self, tol: float = 1e-12) -> bool:
        return bool(self.eigvals.min() >= -tol)

    def solve_B(self, r: np.ndarray) -> np.ndarray:
        """Minimum-norm ``z`` with ``(I - W) z = r`` for mean-zero ``r``."""
        if self.lam >= 1.0:
            raise NotPrimitiveError("I - W is singular on the mean-zero subspace")
        coef = self.U_hat.T @ r
        scale = 1.0 - self.lambdas
        return self.U_hat @ (coef / (scale if coef.ndim == 1 else scale[:, None]))


def _uniform_weights(t: Topology) -> np.ndarray:
    n = t.n
    if t.offsets is not None:
        # each agent averages over its closed out-hop set; symmetrising keeps
        # the matrix doubly stochastic (circulant) and makes it symmetric
        Wd = np.zeros((n, n))
        for i in range(n):
            hood = t.out_neighbors(i)
            for j in hood:
                Wd[i, j] += 1.0 / len(hood)
        return 0.5 * (Wd + Wd.T)
    deg = t.degrees
    if not np.all(deg == deg[0]):
        raise ValueError(
            "uniform weights need a regular graph; use rule='metropolis' for irregular graphs"
        )
    return t.adjacency / float(deg[0])


def _metropolis_weights(t: Topology) -> np.ndarray:
    deg = t.degrees - 1  # exclude self-loop
    n = t.n
    W = np.zeros((n, n))
    iu, ju = np.nonzero(np.triu(t.adjacency, k=1))
    w = 1.0 / (1.0 + np.maximum(deg[iu], deg[ju]))
    W[iu, ju] = w
    W[ju, iu] = w
    W[np.arange(n), np.arange(n)] = 1.0 - W.sum(axis=1)
    return W


def combination_matrix(t: Topology, rule: str = "uniform", lazy: bool = False) -> CombinationMatrix:
    """Weight matrix for ``t``.

    ``rule`` is ``"uniform"``, ``"metropolis"`` or either prefixed with
    ``"lazy-"``; the lazy form ``(I + W)/2`` is positive semidefinite.
    """
    if rule.startswith("lazy-"):
        rule, lazy = rule[len("lazy-"):], True
    if rule not in RULES:
        raise ValueError(f"unknown weight rule {rule!r}; expected one of {RULES}")
    if not t.is_connected():
        raise NotPrimitiveError(f"{t.kind} topology on {t.n} agents is disconnected")
    W = _uniform_weights(t) if rule == "uniform" else _metropolis_weights(t)
    if lazy:
        W = 0.5 * (np.eye(t.n) + W)
    W = 0.5 * (W + W.T)
    return CombinationMatrix.from_matrix(W, rule=("lazy-" if lazy else "") + rule)


def mixing_rate(W) -> float:
    """Spectral norm of ``W - 11^T/n``."""
    W = W.W if isinstance(W, CombinationMatrix) else np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"mixing rate needs a square matrix, got shape {W.shape}")
    n = W.shape[0]
    return float(np.linalg.norm(W - np.full((n, n), 1.0 / n), 2))


def certify_assumption1(W, require_psd: bool = False, tol: float = 1e-12) -> Report:
    """Check double stochasticity, symmetry, primitivity and PSD-ness.

    Never raises on a bad matrix; every property gets a line in the report.
    PSD only counts towards ``report.ok`` when ``require_psd`` is set.
    """
    M = W.W if isinstance(W, CombinationMatrix) else np.asarray(W, dtype=float)
    rep = Report("weight matrix certification")
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        rep.add("square", False, detail=f"shape {M.shape}")
        return rep
    n = M.shape[0]
    sums = max(np.max(np.abs(M.sum(axis=1) - 1.0)), np.max(np.abs(M.sum(axis=0) - 1.0)))
    neg = max(0.0, -float(M.min()))
    rep.add("doubly_stochastic", sums <= tol and neg <= tol, sums, tol,
            detail=f"most negative entry {-neg:.3g}")
    asym = float(np.max(np.abs(M - M.T)))
    rep.add("symmetric", asym <= tol, asym, tol)
    lam = mixing_rate(M)
    support = np.abs(M) > 0
    support = support | support.T
    connected = n == 1 or connected_components(support, directed=False)[0] == 1
    rep.add("primitive", lam < 1.0 - tol and connected, lam, 1.0,
            detail="connected" if connected else "disconnected support")
    min_eig = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    rep.add("psd", min_eig >= -tol, min_eig, -tol, required=require_psd,
            detail="" if require_psd else "informational")
    return rep
