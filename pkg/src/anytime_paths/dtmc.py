"""Random walk over T coupled subnetworks and its stationary distribution.

The T adjacency matrices sit on the block diagonal of an NT x NT matrix and
every pair of copies is coupled by ``lam * I``.  Rows are normalized after
mixing in a uniform teleport term of weight ``kappa``; the teleport term is
never stored, only applied inside products.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .graph import SubnetworkMask, SupernetGraph, adjacency_matrix

log = logging.getLogger(__name__)

DEFAULT_KAPPA = 1e-5
DEFAULT_LAMBDA = 1.0
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class HyperAdjacency:
    T: int
    N: int
    lam: float
    matrix: sparse.csr_matrix

    def block(self, i: int, j: int) -> np.ndarray:
        n = self.N
        return self.matrix[i * n : (i + 1) * n, j * n : (j + 1) * n].toarray()


def hyper_adjacency_from_blocks(blocks: Sequence, lam: float = DEFAULT_LAMBDA) -> HyperAdjacency:
    """Stack square adjacency blocks with ``lam * I`` coupling between every pair."""
    if not blocks:
        raise ChainError("need at least one subnetwork")
    if not 0.0 < lam <= 1.0:
        raise ChainError(f"coupling lambda must lie in (0, 1], got {lam}")
    mats = [sparse.csr_matrix(b, dtype=float) for b in blocks]
    n = mats[0].shape[0]
    if any(m.shape != (n, n) for m in mats):
        raise ChainError("all blocks must be square with the same size")
    t = len(mats)
    diag = sparse.block_diag(mats, format="csr")
    if t > 1:
        couple = sparse.kron(sparse.csr_matrix(np.ones((t, t)) - np.eye(t)), sparse.identity(n), format="csr")
        diag = (diag + lam * couple).tocsr()
    diag.sort_indices()
    return HyperAdjacency(T=t, N=n, lam=float(lam), matrix=diag)


def hyper_adjacency(masks: Sequence[SubnetworkMask], graph: SupernetGraph, lam: float = DEFAULT_LAMBDA) -> HyperAdjacency:
    if not masks:
        raise ChainError("need at least one subnetwork mask")
    return hyper_adjacency_from_blocks([adjacency_matrix(graph, m, as_sparse=True) for m in masks], lam)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic ``P = diag(1/s) ((1 - kappa) H + kappa U)``.

    ``H`` is kept sparse; ``s`` holds the row masses so every row sums to 1.
    """

    H: sparse.csr_matrix
    row_mass: np.ndarray
    kappa: float

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """Return ``x @ P`` for a row vector ``x``."""
        w = x / self.row_mass
        return (1.0 - self.kappa) * (self.H.T @ w) + self.kappa * w.sum()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Return ``P @ x``."""
        return ((1.0 - self.kappa) * (self.H @ x) + self.kappa * x.sum()) / self.row_mass

    def row(self, m: int) -> np.ndarray:
        r = np.full(self.size, self.kappa, dtype=float)
        lo, hi = self.H.indptr[m], self.H.indptr[m + 1]
        r[self.H.indices[lo:hi]] += (1.0 - self.kappa) * self.H.data[lo:hi]
        return r / self.row_mass[m]

    def toarray(self) -> np.ndarray:
        return ((1.0 - self.kappa) * self.H.toarray() + self.kappa) / self.row_mass[:, None]


def transition_matrix(H: HyperAdjacency | sparse.spmatrix | np.ndarray, kappa: float = DEFAULT_KAPPA) -> TransitionMatrix:
    if not 0.0 <= kappa < 1.0:
        raise ChainError(f"teleport weight kappa must lie in [0, 1), got {kappa}")
    mat = H.matrix if isinstance(H, HyperAdjacency) else sparse.csr_matrix(H, dtype=float)
    if mat.shape[0] != mat.shape[1]:
        raise ChainError("transition source must be square")
    if mat.nnz and mat.data.min() < 0:
        raise ChainError("negative weights")
    rows = np.asarray(mat.sum(axis=1)).ravel()
    mass = (1.0 - kappa) * rows + kappa * mat.shape[0]
    if np.any(mass <= 0):
        raise ChainError("a row has no outgoing mass; use kappa > 0 or a connected graph")
    return TransitionMatrix(H=mat.tocsr(), row_mass=mass, kappa=float(kappa))


@dataclass(frozen=True)
class StationaryDistribution:
    pi: np.ndarray
    residual: float
    iterations: int
    converged: bool = True


def stationary(P: TransitionMatrix, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> StationaryDistribution:
    """Solve ``pi P = pi`` by power iteration from the uniform vector.

    The iteration runs on the lazy chain ``(I + P) / 2``, which has the same
    stationary vector but cannot oscillate on periodic chains.  ``residual``
    is ``||pi P - pi||_1`` of the returned vector.  If ``max_iter`` runs out
    the last iterate is returned with ``converged=False``, unless ``kappa > 0``:
    then the teleport makes ``pi`` the solution of a nonsingular sparse system,
    which is solved directly as a fallback for nearly reducible chains.
    """
    n = P.size
    x = np.full(n, 1.0 / n)
    residual = np.inf
    for it in range(max_iter + 1):
        y = P.rmatvec(x)
        residual = float(np.abs(y - x).sum())
        if residual <= tol:
            return StationaryDistribution(x, residual, it, True)
        x = 0.5 * (x + y)
        x /= x.sum()
    if P.kappa > 0:
        z = _direct_solve(P)
        res_z = float(np.abs(P.rmatvec(z) - z).sum())
        if res_z <= tol:
            log.info("power iteration stalled at %.3e; direct solve reached %.3e", residual, res_z)
            return StationaryDistribution(z, res_z, max_iter, True)
    log.warning("power iteration stopped at residual %.3e after %d iterations", residual, max_iter)
    return StationaryDistribution(x, residual, max_iter, False)


def _direct_solve(P: TransitionMatrix) -> np.ndarray:
    # with w = pi / s the fixed point reads (diag(s) - (1-k) H^T) w = k sum(w) 1
    A = (sparse.diags(P.row_mass) - (1 - P.kappa) * P.H.T).tocsc()
    w = spsolve(A, np.ones(P.size))
    z = np.clip(w * P.row_mass, 0.0, None)
    return z / z.sum()


def simulate_walk(
    P: TransitionMatrix,
    steps: int,
    rng: np.random.Generator,
    start: int = 0,
    burn_in: int | None = None,
) -> np.ndarray:
    """Empirical visit frequencies of a walk of ``steps`` transitions.

    States ``X_burn_in .. X_steps`` are counted, so ``steps=0`` puts all mass
    on ``start``.  ``burn_in`` defaults to ``steps // 100``.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    n = P.size
    burn = steps // 100 if burn_in is None else min(burn_in, steps)
    H = P.H
    # Per-row cumulative weights of the sparse part, and the teleport chance.
    cols = [H.indices[H.indptr[m] : H.indptr[m + 1]].tolist() for m in range(n)]
    cums = [np.cumsum(H.data[H.indptr[m] : H.indptr[m + 1]]).tolist() for m in range(n)]
    teleport = (P.kappa * n / P.row_mass).tolist()
    u_jump = rng.random(steps).tolist()
    u_pick = rng.random(steps).tolist()
    u_tele = rng.integers(0, n, size=steps).tolist()
    counts = [0] * n
    state = start
    if burn == 0:
        counts[state] += 1
    for t in range(steps):
        if u_jump[t] < teleport[state]:
            state = u_tele[t]
        else:
            c = cums[state]
            state = cols[state][bisect.bisect_right(c, u_pick[t] * c[-1])]
        if t + 1 >= burn:
            counts[state] += 1
    freq = np.asarray(counts, dtype=float)
    return freq / freq.sum()


def stationary_rows(pi: StationaryDistribution, graph: SupernetGraph, T: int) -> list[tuple[int, int, str, float]]:
    """Rows ``(state_index, subnetwork_index, node_id, pi)`` for CSV export."""
    n = graph.node_count
    return [(s, s // n, graph.nodes[s % n], float(p)) for s, p in enumerate(pi.pi[: n * T])]
