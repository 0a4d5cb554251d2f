"""Two-point error-correlation estimates p_ij between detection nodes.

Each pair of nodes is modelled by three independent flip processes: node i
alone (p_i), node j alone (p_j) and both together (p_ij). Inverting that
model on the measured <x_i>, <x_j>, <x_i x_j> gives p_ij.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detection import DetectionBatch

ORDERS = ("time-first", "space-first")


def g_fold(p, q):
    """Probability of an odd number of flips from two independent flip processes."""
    return p + q - 2.0 * p * q


def forward_moments(p_i, p_j, p_ij):
    """<x_i>, <x_j>, <x_i x_j> of the three-process model."""
    xi = p_i * (1 - p_ij) + (1 - p_i) * p_ij
    xj = p_j * (1 - p_ij) + (1 - p_j) * p_ij
    xij = p_ij * (1 - p_i) * (1 - p_j) + (1 - p_ij) * p_i * p_j
    return xi, xj, xij


def invert_moments(xi, xj, xij):
    """Exact inversion of :func:`forward_moments`.

    Returns
    -------
    p_ij, p_i, p_j : ndarray
    flagged : ndarray of bool
        True where the radicand was negative (clamped to zero) or the
        denominator was not positive.
    """
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    xij = np.asarray(xij, dtype=np.float64)
    cov = xij - xi * xj
    den = 1.0 - 2.0 * xi - 2.0 * xj + 4.0 * xij
    bad_den = den <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rad = 1.0 - 4.0 * cov / np.where(bad_den, 1.0, den)
    flagged = bad_den | (rad < 0)
    p = 0.5 - 0.5 * np.sqrt(np.clip(rad, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        p_i = (xi - p) / (1.0 - 2.0 * p)
        p_j = (xj - p) / (1.0 - 2.0 * p)
    return p, p_i, p_j, flagged


def approx_from_moments(xi, xj, xij):
    """Covariance-based estimate, slightly above the exact inversion for positive correlation."""
    return (xij - xi * xj) / ((1.0 - 2.0 * xi) * (1.0 - 2.0 * xj))


def noise_floor(x_i, x_j, p_ij, n_expt):
    """Standard deviation of a p_ij estimate from ``n_expt`` shots.

    Neglects the (1 - p) binomial factors, so it slightly overstates the
    spread.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    var = np.clip(p_ij, 0.0, None) + x_i * x_j / ((1 - 2 * x_i) ** 2 * (1 - 2 * x_j) ** 2)
    return np.sqrt(var) / np.sqrt(n_expt)


class CorrelationAccumulator:
    """Streaming first and second moments of node events; partial sums merge by ``+``."""

    def __init__(self, n_rounds: int, n_measure: int, order: str = "time-first",
                 mask: np.ndarray | None = None):
        if order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        self.n_rounds = n_rounds
        self.n_measure = n_measure
        self.order = order
        self.mask = np.ones((n_rounds + 1, n_measure), bool) if mask is None else np.asarray(mask, bool)
        n = (n_rounds + 1) * n_measure
        self.n = 0
        self.s1 = np.zeros(n, dtype=np.float64)
        self.s2 = np.zeros((n, n), dtype=np.float64)

    def add(self, batch: DetectionBatch, chunk: int = 20000) -> "CorrelationAccumulator":
        flat = batch.flat(self.order)
        for a in range(0, flat.shape[0], chunk):
            x = flat[a:a + chunk].astype(np.float32)
            self.s1 += x.sum(0, dtype=np.float64)
            # float32 products of 0/1 are exact; sums stay exact below 2**24 per chunk
            self.s2 += (x.T @ x).astype(np.float64)
            self.n += x.shape[0]
        return self

    def __add__(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        if (self.n_rounds, self.n_measure, self.order) != (other.n_rounds, other.n_measure, other.order):
            raise ValueError("cannot merge accumulators of different shapes or orders")
        out = CorrelationAccumulator(self.n_rounds, self.n_measure, self.order, self.mask)
        out.n = self.n + other.n
        out.s1 = self.s1 + other.s1
        out.s2 = self.s2 + other.s2
        return out

    def finalize(self, method: str = "exact") -> "CorrelationMatrix":
        if self.n < 2:
            raise ValueError("need at least 2 shots to estimate correlations")
        mean = self.s1 / self.n
        joint = self.s2 / self.n
        xi, xj = mean[:, None], mean[None, :]
        if method == "exact":
            p, _, _, flagged = invert_moments(xi, xj, joint)
        elif method == "approx":
            with np.errstate(divide="ignore", invalid="ignore"):
                p = approx_from_moments(xi, xj, joint)
            flagged = ~np.isfinite(p)
            p = np.where(flagged, 0.0, p)
        else:
            raise ValueError(f"unknown method {method!r}")
        flagged = flagged | (xi >= 0.5) | (xj >= 0.5)
        # exact symmetry regardless of floating-point accumulation order
        p = np.triu(p, 1)
        p = p + p.T
        np.fill_diagonal(p, mean)
        fl = np.triu(flagged, 1)
        fl = fl | fl.T
        return CorrelationMatrix(p, mean, joint, self.n, self.n_rounds, self.n_measure,
                                 self.order, self.mask, fl, method)


@dataclass
class CorrelationMatrix:
    """Symmetric p_ij over detection nodes; the diagonal holds <x_i>."""

    values: np.ndarray
    mean: np.ndarray
    joint: np.ndarray
    n_shots: int
    n_rounds: int
    n_measure: int
    order: str = "time-first"
    mask: np.ndarray = None
    flagged: np.ndarray = None
    method: str = "exact"

    @property
    def n_nodes(self) -> int:
        return int(self.values.shape[0])

    def index(self, s: int, t: int) -> int:
        if self.order == "time-first":
            return t + (self.n_rounds + 1) * s
        return s + self.n_measure * t

    def coords(self, i: int) -> tuple[int, int]:
        if self.order == "time-first":
            return divmod(i, self.n_rounds + 1)
        t, s = divmod(i, self.n_measure)
        return s, t

    def p(self, a: tuple[int, int], b: tuple[int, int]) -> float:
        return float(self.values[self.index(*a), self.index(*b)])

    def defs(self) -> np.ndarray:
        """<x_i> on the (rounds + 1, n_measure) grid."""
        out = np.zeros((self.n_rounds + 1, self.n_measure))
        for s in range(self.n_measure):
            for t in range(self.n_rounds + 1):
                out[t, s] = self.mean[self.index(s, t)]
        return out

    def grid(self) -> np.ndarray:
        """p values as a 4-d array indexed [t1, s1, t2, s2]."""
        T, S = self.n_rounds + 1, self.n_measure
        idx = np.array([[self.index(s, t) for s in range(S)] for t in range(T)])
        return self.values[np.ix_(idx.reshape(-1), idx.reshape(-1))].reshape(T, S, T, S)

    def rendered(self) -> np.ndarray:
        """Copy with the diagonal set to zero for display."""
        out = self.values.copy()
        np.fill_diagonal(out, 0.0)
        return out

    def individual(self) -> np.ndarray:
        """Per-pair single-node flip probabilities p_i implied by the inversion."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.mean[:, None] - self.values) / (1.0 - 2.0 * self.values)

    def sigma(self) -> np.ndarray:
        return noise_floor(self.mean[:, None], self.mean[None, :], self.values, self.n_shots)

    def to_csv(self, path, upper_only: bool = True) -> None:
        sig = self.sigma()
        vals = self.rendered()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "p_ij", "sigma"])
            for i in range(self.n_nodes):
                for j in range(i + 1 if upper_only else 0, self.n_nodes):
                    w.writerow([i, j, repr(float(vals[i, j])), repr(float(sig[i, j]))])


def _matrix(batch: DetectionBatch, order: str, method: str) -> CorrelationMatrix:
    acc = CorrelationAccumulator(batch.n_rounds, batch.n_measure, order, batch.mask)
    return acc.add(batch).finalize(method)


def pij_exact(batch: DetectionBatch, order: str = "time-first") -> CorrelationMatrix:
    return _matrix(batch, order, "exact")


def pij_approx(batch: DetectionBatch, order: str = "time-first") -> CorrelationMatrix:
    return _matrix(batch, order, "approx")


# -- edge taxonomy -------------------------------------------------------------

def node_neighbors(n_rounds: int, n_measure: int, s: int, t: int) -> list[tuple[int, int]]:
    """Nodes joined to (s, t) by S, T or ST edges of the repetition-code graph."""
    out = []
    for ds, dt in ((-1, 0), (1, 0), (0, -1), (0, 1), (1, 1), (-1, -1)):
        s2, t2 = s + ds, t + dt
        if 0 <= s2 < n_measure and 0 <= t2 <= n_rounds:
            out.append((s2, t2))
    return out


def boundary_edge_probs(matrix: CorrelationMatrix, neighbors=None):
    """Missing single-node flip probability of each node after its known edges.

    ``p_sigma`` folds the probabilities of all edges connected to the node
    (negative estimates count as 0); the boundary probability is then
    ``(<x_i> - p_sigma) / (1 - 2 p_sigma)``. Only nodes next to a spatial
    boundary have a real boundary edge, but the value is returned for every
    node since at interior nodes it measures how well the edges explain the
    node's detection rate.

    Returns
    -------
    p_boundary, p_sigma : ndarray, shape (rounds + 1, n_measure)
    negative : ndarray of bool
        True where p_sigma exceeds <x_i>.
    """
    neighbors = neighbors or node_neighbors
    T, S = matrix.n_rounds + 1, matrix.n_measure
    p_sig = np.zeros((T, S))
    xs = np.zeros((T, S))
    for s in range(S):
        for t in range(T):
            i = matrix.index(s, t)
            acc = 0.0
            for s2, t2 in neighbors(matrix.n_rounds, S, s, t):
                acc = g_fold(max(matrix.values[i, matrix.index(s2, t2)], 0.0), acc)
            p_sig[t, s] = acc
            xs[t, s] = matrix.mean[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        pb = (xs - p_sig) / (1.0 - 2.0 * p_sig)
    return pb, p_sig, pb < 0


EDGE_CLASSES = ("S", "T", "ST", "ST'", "2T", "3T", "4T", "5T", "boundary", "crosstalk")


def edge_class(ds: int, dt: int) -> str | None:
    """Class of a node pair from (s2 - s1, t2 - t1) with dt >= 0."""
    if dt == 0:
        if abs(ds) == 1:
            return "S"
        if abs(ds) >= 2:
            return "crosstalk"
        return None
    if ds == 0:
        return "T" if dt == 1 else (f"{dt}T" if dt <= 5 else None)
    if dt == 1 and ds == 1:
        return "ST"
    if dt == 1 and ds == -1:
        return "ST'"
    return None


@dataclass
class EdgeReport:
    edges: dict = field(default_factory=dict)      # class -> list of (node_a, node_b, p)
    medians: dict = field(default_factory=dict)
    crosstalk: np.ndarray = None                   # (S, S) round-averaged same-round p
    crosstalk_sigma: np.ndarray = None             # noise floor of each average
    crosstalk_exceeds: np.ndarray = None

    def to_json(self) -> dict:
        return {
            "medians": {k: (None if v is None else float(v)) for k, v in self.medians.items()},
            "counts": {k: len(v) for k, v in self.edges.items()},
            "edges": {k: [[list(a), None if b is None else list(b), float(p)] for a, b, p in v]
                      for k, v in self.edges.items()},
            "crosstalk": None if self.crosstalk is None else self.crosstalk.tolist(),
            "crosstalk_sigma": None if self.crosstalk_sigma is None else self.crosstalk_sigma.tolist(),
            "crosstalk_exceeds": None if self.crosstalk_exceeds is None else self.crosstalk_exceeds.tolist(),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def classify_edges(matrix: CorrelationMatrix, n_sigma: float = 3.0) -> EdgeReport:
    """Bin every valid node pair by its space/time offset.

    The crosstalk table averages same-round pairs of non-adjacent measure
    qubits over the rounds in which both nodes are defined and compares the
    average to its noise floor.
    """
    T, S = matrix.n_rounds + 1, matrix.n_measure
    valid = matrix.mask if matrix.mask is not None else np.ones((T, S), bool)
    edges: dict[str, list] = {k: [] for k in EDGE_CLASSES}
    for s1 in range(S):
        for t1 in range(T):
            if not valid[t1, s1]:
                continue
            i = matrix.index(s1, t1)
            for s2 in range(S):
                for t2 in range(t1, T):
                    if not valid[t2, s2] or (t2 == t1 and s2 <= s1):
                        continue
                    cls = edge_class(s2 - s1, t2 - t1)
                    if cls is None:
                        continue
                    edges[cls].append(((s1, t1), (s2, t2), float(matrix.values[i, matrix.index(s2, t2)])))
    pb, _, _ = boundary_edge_probs(matrix)
    for t in range(T):
        for s in {0, S - 1}:
            if valid[t, s]:
                edges["boundary"].append(((s, t), None, float(pb[t, s])))
    medians = {k: (float(np.median([e[2] for e in v])) if v else None) for k, v in edges.items()}
    xt = np.zeros((S, S))
    xsig = np.zeros((S, S))
    sig = matrix.sigma()
    for s1 in range(S):
        for s2 in range(s1 + 2, S):
            vals, sigs = [], []
            for t in range(matrix.n_rounds):
                if valid[t, s1] and valid[t, s2]:
                    i, j = matrix.index(s1, t), matrix.index(s2, t)
                    vals.append(matrix.values[i, j])
                    sigs.append(sig[i, j])
            if vals:
                xt[s1, s2] = xt[s2, s1] = float(np.mean(vals))
                xsig[s1, s2] = xsig[s2, s1] = float(np.sqrt(np.sum(np.square(sigs)))) / len(sigs)
    exceeds = xt > n_sigma * np.where(xsig > 0, xsig, np.inf)
    return EdgeReport(edges, medians, xt, xsig, exceeds)
