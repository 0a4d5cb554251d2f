"""Matching-graph decoding of repetition-code detection events.

Edge probabilities are kept per class and per spatial position (uniform in
time), so a graph trained on one round count can be rebuilt for any other.
Weights are ``W = -ln p``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .codes import CodeSpec, SubsampleMap, build, expected_final
from .correlation import boundary_edge_probs, pij_exact
from .detection import DetectionBatch

try:
    import pymatching
except ImportError:  # pragma: no cover - optional dependency
    pymatching = None

P_FLOOR = 1e-6
P_UNIFORM = 0.05
WEIGHTINGS = ("uniform", "bootstrap", "pij", "first-principles")


class DecoderError(RuntimeError):
    pass


@dataclass
class EdgeModel:
    """Per-class edge probabilities for a chain with ``n_measure`` checks.

    ``S`` and ``ST`` have one entry per neighbouring measure pair ``(s, s+1)``,
    ``T`` one per measure qubit, ``B`` the left and right boundary edges.
    """

    n_measure: int
    S: np.ndarray
    T: np.ndarray
    ST: np.ndarray
    B: np.ndarray
    family: str = "rep-phase"

    @classmethod
    def constant(cls, n_measure: int, p: float = P_UNIFORM, family: str = "rep-phase") -> "EdgeModel":
        return cls(n_measure, np.full(n_measure - 1, p), np.full(n_measure, p),
                   np.full(n_measure - 1, p), np.full(2, p), family)

    def clipped(self) -> "EdgeModel":
        f = lambda a: np.clip(np.nan_to_num(np.asarray(a, float), nan=P_FLOOR), P_FLOOR, 0.5)  # noqa: E731
        return EdgeModel(self.n_measure, f(self.S), f(self.T), f(self.ST), f(self.B), self.family)

    def class_medians(self) -> dict:
        return {k: float(np.median(getattr(self, k))) for k in ("S", "T", "ST", "B")}

    def to_json(self) -> dict:
        return {"n_measure": self.n_measure, "family": self.family,
                **{k: getattr(self, k).tolist() for k in ("S", "T", "ST", "B")}}


@dataclass
class MatchingGraph:
    """Detection nodes ``t * n_measure + s`` plus one boundary node.

    Edge arrays list both endpoints (``v = -1`` for the boundary), the
    probability, the weight and the data qubit flipped (``-1`` for none).
    """

    n_rounds: int
    n_measure: int
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    weight: np.ndarray
    data: np.ndarray
    kind: np.ndarray
    family: str = "rep-phase"
    model: EdgeModel | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return (self.n_rounds + 1) * self.n_measure

    @property
    def n_data(self) -> int:
        return self.n_measure + 1

    def node(self, s: int, t: int) -> int:
        return t * self.n_measure + s

    @classmethod
    def from_model(cls, model: EdgeModel, n_rounds: int) -> "MatchingGraph":
        m = model.clipped()
        S = m.n_measure
        rows = []
        for t in range(n_rounds + 1):
            for s in range(S - 1):
                rows.append((t * S + s, t * S + s + 1, m.S[s], s + 1, "S"))
            rows.append((t * S, -1, m.B[0], 0, "B"))
            rows.append((t * S + S - 1, -1, m.B[1], S, "B"))
            if t < n_rounds:
                for s in range(S):
                    rows.append((t * S + s, (t + 1) * S + s, m.T[s], -1, "T"))
                for s in range(S - 1):
                    rows.append((t * S + s, (t + 1) * S + s + 1, m.ST[s], s + 1, "ST"))
        u, v, p, d, k = zip(*rows)
        p = np.array(p, dtype=np.float64)
        return cls(n_rounds, S, np.array(u), np.array(v), p, -np.log(p), np.array(d),
                   np.array(k), m.family, m)

    # -- shortest paths for the exact matcher --------------------------------

    def _paths(self):
        if "paths" in self._cache:
            return self._cache["paths"]
        n = self.n_nodes + 1
        b = self.n_nodes
        v = np.where(self.v < 0, b, self.v)
        # keep the lightest of any parallel edges
        best: dict[tuple[int, int], int] = {}
        for e in range(self.u.size):
            key = (min(self.u[e], v[e]), max(self.u[e], v[e]))
            if key not in best or self.weight[e] < self.weight[best[key]]:
                best[key] = e
        es = np.array(sorted(best.values()))
        a, c = self.u[es], v[es]
        w = self.weight[es]
        mat = csr_matrix((np.r_[w, w], (np.r_[a, c], np.r_[c, a])), shape=(n, n))
        dist, pred = dijkstra(mat, directed=False, return_predecessors=True)
        emap = {}
        for e in es:
            emap[(int(self.u[e]), int(v[e]))] = e
            emap[(int(v[e]), int(self.u[e]))] = e
        # data-flip bitmask along each shortest path
        corr = np.zeros((n, n), dtype=np.int64)
        for src in range(n):
            order = np.argsort(dist[src], kind="stable")
            for j in order:
                pj = pred[src, j]
                if pj < 0:
                    continue
                e = emap[(int(pj), int(j))]
                bit = (1 << int(self.data[e])) if self.data[e] >= 0 else 0
                corr[src, j] = corr[src, pj] ^ bit
        self._cache["paths"] = (dist, pred, corr, emap)
        return self._cache["paths"]

    def path_edges(self, a: int, b: int) -> list[int]:
        dist, pred, _, emap = self._paths()
        out = []
        j = b
        while j != a:
            pj = pred[a, j]
            if pj < 0:
                raise DecoderError(f"no path between nodes {a} and {b}")
            out.append(emap[(int(pj), int(j))])
            j = pj
        return out

    def _pymatching(self):
        if "pm" not in self._cache:
            m = pymatching.Matching()
            for e in range(self.u.size):
                fid = {int(self.data[e])} if self.data[e] >= 0 else set()
                if self.v[e] < 0:
                    m.add_boundary_edge(int(self.u[e]), fault_ids=fid, weight=float(self.weight[e]),
                                        error_probability=float(self.p[e]), merge_strategy="smallest-weight")
                else:
                    m.add_edge(int(self.u[e]), int(self.v[e]), fault_ids=fid, weight=float(self.weight[e]),
                               error_probability=float(self.p[e]), merge_strategy="smallest-weight")
            self._cache["pm"] = m
        return self._cache["pm"]

    def edge_lookup(self) -> dict:
        """(min node, max node) -> edge index, with the boundary as -1."""
        if "lookup" not in self._cache:
            lk = {}
            for e in range(self.u.size):
                a, b = int(self.u[e]), int(self.v[e])
                lk[(min(a, b), max(a, b)) if b >= 0 else (-1, a)] = e
            self._cache["lookup"] = lk
        return self._cache["lookup"]


@dataclass
class DecodeResult:
    correction: np.ndarray       # (n, n_data) uint8
    logical_error: np.ndarray    # (n,) bool
    weight: np.ndarray           # (n,) matched weight
    n_events: np.ndarray         # (n,)
    pairs: list | None = None    # per shot list of matched (node, node|-1), exact backend only

    def __len__(self) -> int:
        return int(self.logical_error.shape[0])


def _syndromes(batch: DetectionBatch, graph: MatchingGraph) -> np.ndarray:
    if (batch.n_rounds, batch.n_measure) != (graph.n_rounds, graph.n_measure):
        raise DecoderError(f"detections have shape {(batch.n_rounds, batch.n_measure)}, "
                           f"graph expects {(graph.n_rounds, graph.n_measure)}")
    return batch.events.reshape(len(batch), -1)


def match_exact(events: np.ndarray, graph: MatchingGraph):
    """Exact minimum-weight perfect matching of one shot's event nodes.

    Every event gets a private boundary image joined to it at its shortest
    boundary distance; images are joined to each other at zero cost so any
    number of events can pair with the boundary.

    Returns
    -------
    pairs : list of (node, node or -1)
    weight : float
    correction : int
        Data-flip bitmask.
    """
    import networkx as nx

    ev = [int(i) for i in np.flatnonzero(events)]
    if not ev:
        return [], 0.0, 0
    dist, _, corr, _ = graph._paths()
    b = graph.n_nodes
    g = nx.Graph()
    k = len(ev)
    for x, y in itertools.combinations(range(k), 2):
        g.add_edge(x, y, weight=float(dist[ev[x], ev[y]]))
    for x in range(k):
        g.add_edge(x, k + x, weight=float(dist[ev[x], b]))
    for x, y in itertools.combinations(range(k), 2):
        g.add_edge(k + x, k + y, weight=0.0)
    m = nx.min_weight_matching(g)
    pairs, w, c = [], 0.0, 0
    for x, y in sorted(tuple(sorted(e)) for e in m):
        if x >= k:
            continue
        if y >= k:
            pairs.append((ev[x], -1))
            w += dist[ev[x], b]
            c ^= int(corr[ev[x], b])
        else:
            pairs.append((ev[x], ev[y]))
            w += dist[ev[x], ev[y]]
            c ^= int(corr[ev[x], ev[y]])
    return pairs, float(w), c


def _check_closure(batch: DetectionBatch, graph: MatchingGraph, corrected: np.ndarray, expected: np.ndarray):
    # corrected readout must carry the initial stabilizer parities
    diff = corrected ^ expected
    bad = (diff[:, 1:] ^ diff[:, :-1]).any(axis=1)
    if bad.any():
        raise DecoderError(f"correction leaves stabilizer parity inconsistent in {int(bad.sum())} shot(s)")


def mwpm_decode(batch: DetectionBatch, graph: MatchingGraph, backend: str | None = None,
                return_pairs: bool = False) -> DecodeResult:
    """Decode every shot and adjudicate logical errors.

    ``backend`` is ``"pymatching"`` (default when installed) or ``"exact"``
    (blossom matching via networkx on shortest-path distances).
    """
    syn = _syndromes(batch, graph)
    n = syn.shape[0]
    if backend is None:
        backend = "pymatching" if pymatching is not None and not return_pairs else "exact"
    n_data = graph.n_data
    pairs = None
    if backend == "pymatching":
        if pymatching is None:
            raise DecoderError("pymatching is not installed")
        pm = graph._pymatching()
        if n:
            pred, weights = pm.decode_batch(syn, return_weights=True)
            corr = np.zeros((n, n_data), dtype=np.uint8)
            corr[:, :pred.shape[1]] = pred[:, :n_data]
        else:
            corr = np.zeros((0, n_data), dtype=np.uint8)
            weights = np.zeros(0)
    elif backend == "exact":
        corr = np.zeros((n, n_data), dtype=np.uint8)
        weights = np.zeros(n)
        pairs = []
        bits = 1 << np.arange(n_data)
        for j in range(n):
            pr, w, c = match_exact(syn[j], graph)
            corr[j] = (c & bits) > 0
            weights[j] = w
            pairs.append(pr)
    else:
        raise DecoderError(f"unknown decoder backend {backend!r}")
    spec = CodeSpec(graph.family, n_data, max(graph.n_rounds, 1))
    expected = expected_final(spec, batch.init_bits)
    corrected = batch.final_bits ^ corr
    _check_closure(batch, graph, corrected, expected)
    logical = ((corrected ^ expected).sum(axis=1) % 2).astype(bool)
    return DecodeResult(corr, logical, np.asarray(weights, dtype=float), syn.sum(axis=1),
                        pairs if return_pairs else None)


def logical_error_rate(batch: DetectionBatch, graph: MatchingGraph, backend: str | None = None):
    """Fraction of shots with a logical error and its binomial standard error."""
    if len(batch) == 0:
        raise ValueError("need at least one shot")
    res = mwpm_decode(batch, graph, backend)
    p = float(res.logical_error.mean())
    return p, float(np.sqrt(p * (1 - p) / len(res)))


# -- weighting strategies ------------------------------------------------------

def weights_uniform(spec: CodeSpec | int, p: float = P_UNIFORM) -> EdgeModel:
    if isinstance(spec, CodeSpec):
        return EdgeModel.constant(spec.n_measure, p, spec.family)
    return EdgeModel.constant(int(spec), p)


def _model_from_grid(S_g, T_g, ST_g, B_g, family) -> EdgeModel:
    """Average per-round probabilities over time (NaN entries ignored)."""
    f = lambda a: np.nanmean(np.asarray(a, float), axis=0) if np.size(a) else np.zeros(0)  # noqa: E731
    return EdgeModel(len(f(T_g)), f(S_g), f(T_g), f(ST_g), f(B_g), family).clipped()


def weights_bootstrap(train: DetectionBatch, family: str = "rep-phase",
                      backend: str | None = None) -> EdgeModel:
    """Edge probabilities from how often each edge is used when the training
    set is decoded with uniform weights."""
    S = train.n_measure
    graph = MatchingGraph.from_model(EdgeModel.constant(S, P_UNIFORM, family), train.n_rounds)
    counts = edge_usage(train, graph, backend)
    return model_from_edge_values(graph, counts / max(len(train), 1), family)


def model_from_edge_values(graph: MatchingGraph, values: np.ndarray, family: str) -> EdgeModel:
    S, T = graph.n_measure, graph.n_rounds + 1
    S_g = np.full((T, S - 1), np.nan)
    T_g = np.full((T - 1, S), np.nan)
    ST_g = np.full((T - 1, S - 1), np.nan)
    B_g = np.full((T, 2), np.nan)
    for e in range(graph.u.size):
        t, s = divmod(int(graph.u[e]), S)
        k = graph.kind[e]
        if k == "S":
            S_g[t, s] = values[e]
        elif k == "T":
            T_g[t, s] = values[e]
        elif k == "ST":
            ST_g[t, s] = values[e]
        else:
            B_g[t, 0 if s == 0 and graph.data[e] == 0 else 1] = values[e]
    return _model_from_grid(S_g, T_g, ST_g, B_g, family)


def edge_usage(batch: DetectionBatch, graph: MatchingGraph, backend: str | None = None) -> np.ndarray:
    """How many times each graph edge appears in the decoded matchings."""
    syn = _syndromes(batch, graph)
    counts = np.zeros(graph.u.size, dtype=np.int64)
    lk = graph.edge_lookup()
    if backend is None:
        backend = "pymatching" if pymatching is not None else "exact"
    if backend == "pymatching":
        pm = graph._pymatching()
        for j in range(syn.shape[0]):
            if not syn[j].any():
                continue
            for a, b in pm.decode_to_edges_array(syn[j]):
                a, b = int(a), int(b)
                key = (-1, max(a, b)) if min(a, b) < 0 else (min(a, b), max(a, b))
                counts[lk[key]] += 1
    else:
        bnode = graph.n_nodes
        for j in range(syn.shape[0]):
            pairs, _, _ = match_exact(syn[j], graph)
            for a, b in pairs:
                for e in graph.path_edges(a, bnode if b < 0 else b):
                    counts[e] += 1
    return counts


def weights_pij(train: DetectionBatch, family: str = "rep-phase") -> EdgeModel:
    """Edge probabilities read off the exact p_ij matrix of the training set;
    boundary edges from the unexplained part of each end node's rate."""
    mat = pij_exact(train)
    T, S = train.n_rounds + 1, train.n_measure
    S_g = np.array([[mat.p((s, t), (s + 1, t)) for s in range(S - 1)] for t in range(T)])
    T_g = np.array([[mat.p((s, t), (s, t + 1)) for s in range(S)] for t in range(T - 1)])
    ST_g = np.array([[mat.p((s, t), (s + 1, t + 1)) for s in range(S - 1)] for t in range(T - 1)])
    pb, _, _ = boundary_edge_probs(mat)
    B_g = np.stack([pb[:, 0], pb[:, S - 1]], axis=1)
    S_g, T_g, ST_g = (np.clip(a, P_FLOOR, None) for a in (S_g, T_g, ST_g))
    B_g = np.clip(B_g, P_FLOOR, None)
    return _model_from_grid(S_g, T_g, ST_g, B_g, family)


def _fold_all(shape, idx, p) -> np.ndarray:
    """Odd-flip probability of many independent mechanisms per cell:
    ``(1 - prod(1 - 2 p)) / 2``, the closed form of repeated ``g_fold``."""
    acc = np.zeros(int(np.prod(shape)))
    np.add.at(acc, idx, np.log1p(-2.0 * np.minimum(p, 0.5 - 1e-15)))
    return ((1.0 - np.exp(acc)) / 2.0).reshape(shape)


def weights_first_principles(noise, spec: CodeSpec, smap: SubsampleMap | None = None,
                             mechanisms=None) -> EdgeModel:
    """Fold the probabilities of every single fault that flips a given node
    pair (or a single node, for boundary edges).

    With ``smap`` the faults of the parent circuit are mapped onto the child
    chain: nodes outside it are dropped, so faults on the cut become
    boundary mechanisms of the child. ``mechanisms`` may be a precomputed
    :class:`~repstab.sampling.MechanismTable` of the parent circuit.
    """
    from .sampling import mechanism_table

    if mechanisms is None:
        mechanisms = mechanism_table(build(spec))
    rates = noise.rates if hasattr(noise, "rates") else np.asarray(noise, dtype=float)
    prob = mechanisms.probabilities(rates)
    events = mechanisms.events
    if smap is not None:
        events = events[:, :, smap.measure_index]
    n_mech, T, S = events.shape
    flat = events.reshape(n_mech, -1).astype(bool)
    size = flat.sum(axis=1)
    keep = (size > 0) & (size <= 2) & (prob > 0)
    # first and last flipped node of every mechanism
    first = np.argmax(flat, axis=1)
    last = flat.shape[1] - 1 - np.argmax(flat[:, ::-1], axis=1)
    t1, s1 = np.divmod(first, S)
    t2, s2 = np.divmod(last, S)
    one = keep & (size == 1)
    two = keep & (size == 2)
    out = {}
    sel = two & (t1 == t2) & (s2 == s1 + 1)
    out["S"] = _fold_all((T, S - 1), t1[sel] * (S - 1) + s1[sel], prob[sel])
    sel = two & (s1 == s2) & (t2 == t1 + 1)
    out["T"] = _fold_all((T - 1, S), t1[sel] * S + s1[sel], prob[sel])
    sel = two & (t2 == t1 + 1) & (s2 == s1 + 1)
    out["ST"] = _fold_all((T - 1, S - 1), t1[sel] * (S - 1) + s1[sel], prob[sel])
    left = one & (s1 == 0)
    right = one & (s1 == S - 1)
    idx = np.r_[t1[left] * 2, t1[right] * 2 + 1]
    out["B"] = _fold_all((T, 2), idx, np.r_[prob[left], prob[right]])
    return _model_from_grid(out["S"], out["T"], out["ST"], out["B"], spec.family)


def build_weights(kind: str, spec: CodeSpec, train: DetectionBatch | None = None, noise=None,
                  smap: SubsampleMap | None = None, mechanisms=None, backend: str | None = None) -> EdgeModel:
    """Dispatch to one of the four weighting strategies."""
    if kind == "uniform":
        n_measure = spec.n_measure if smap is None else smap.child_d - 1
        return EdgeModel.constant(n_measure, P_UNIFORM, spec.family)
    if kind in ("bootstrap", "pij"):
        if train is None:
            raise ValueError(f"{kind} weighting needs training detections")
        if smap is not None:
            train = train.subsample(smap)
        if kind == "bootstrap":
            return weights_bootstrap(train, spec.family, backend)
        return weights_pij(train, spec.family)
    if kind == "first-principles":
        if noise is None:
            raise ValueError("first-principles weighting needs a noise model")
        return weights_first_principles(noise, spec, smap, mechanisms)
    raise ValueError(f"unknown weighting {kind!r}; expected one of {WEIGHTINGS}")
