"""Detection events, detection-event-fraction statistics and burst removal."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Circuit
from .codes import CodeSpec, build
from .layout import DetectorLayout
from .sampling import ShotBatch


@dataclass
class DetectionBatch:
    """Per-shot detection events on the (rounds + 1) x n_measure node grid.

    Masked nodes (stabilizers whose first or last comparison is undefined)
    always carry 0. Initial strings and final readouts are kept because the
    decoder needs them to adjudicate logical errors.
    """

    events: np.ndarray          # (n, n_rounds + 1, n_measure) uint8
    mask: np.ndarray            # (n_rounds + 1, n_measure) bool
    init_bits: np.ndarray       # (n, n_data) uint8
    final_bits: np.ndarray      # (n, n_data) uint8
    shot_index: np.ndarray = None
    burst_flag: np.ndarray = None

    def __post_init__(self):
        n = self.events.shape[0]
        if self.shot_index is None:
            self.shot_index = np.arange(n, dtype=np.int64)
        if self.burst_flag is None:
            self.burst_flag = np.zeros(n, dtype=bool)

    def __len__(self) -> int:
        return int(self.events.shape[0])

    @property
    def n_rounds(self) -> int:
        return int(self.events.shape[1]) - 1

    @property
    def n_measure(self) -> int:
        return int(self.events.shape[2])

    @property
    def n_data(self) -> int:
        return int(self.init_bits.shape[1])

    def select(self, idx) -> "DetectionBatch":
        return DetectionBatch(self.events[idx], self.mask, self.init_bits[idx], self.final_bits[idx],
                              self.shot_index[idx], self.burst_flag[idx])

    def flat(self, order: str = "time-first") -> np.ndarray:
        """Events as (n, n_nodes) with the requested node ordering.

        time-first: ``i = t + (n_rounds + 1) * s``; space-first: ``i = s + n_measure * t``.
        """
        if order == "time-first":
            return self.events.transpose(0, 2, 1).reshape(len(self), -1)
        if order == "space-first":
            return self.events.reshape(len(self), -1)
        raise ValueError(f"unknown node order {order!r}")

    def subsample(self, smap) -> "DetectionBatch":
        """Restrict to the sub-chain selected by a :class:`SubsampleMap`."""
        ms, ds = smap.measure_index, smap.data_index
        return DetectionBatch(np.ascontiguousarray(self.events[:, :, ms]), self.mask[:, ms],
                              self.init_bits[:, ds], self.final_bits[:, ds],
                              self.shot_index, self.burst_flag)

    @staticmethod
    def concat(batches: Sequence["DetectionBatch"]) -> "DetectionBatch":
        return DetectionBatch(np.concatenate([b.events for b in batches]), batches[0].mask,
                              np.concatenate([b.init_bits for b in batches]),
                              np.concatenate([b.final_bits for b in batches]),
                              np.concatenate([b.shot_index for b in batches]),
                              np.concatenate([b.burst_flag for b in batches]))


def _layout(spec) -> DetectorLayout:
    if isinstance(spec, DetectorLayout):
        return spec
    if isinstance(spec, CodeSpec):
        spec = build(spec)
    if isinstance(spec, Circuit):
        return DetectorLayout.from_circuit(spec)
    raise TypeError(f"cannot derive a detector layout from {type(spec).__name__}")


def extract_detections(shots: ShotBatch, spec) -> DetectionBatch:
    """Compare each stabilizer outcome to its previous value.

    Round 0 compares against the parity of the prepared data string and the
    final node against the parity of the final data readout.

    Raises
    ------
    ValueError
        If the shot dimensions do not match ``spec``.
    """
    lay = _layout(spec)
    if (shots.n_rounds, shots.n_measure, shots.n_data) != (lay.n_rounds, lay.n_measure, lay.n_data):
        raise ValueError(
            f"shots have (rounds, measure, data) = {(shots.n_rounds, shots.n_measure, shots.n_data)}, "
            f"spec expects {(lay.n_rounds, lay.n_measure, lay.n_data)}")
    init_par = lay.parity(shots.init_bits)
    ev = lay.events(shots.stabilizer_bits, shots.final_data_bits, init_par)
    return DetectionBatch(ev, lay.mask.copy(), shots.init_bits, shots.final_data_bits,
                          shots.shot_index, shots.burst_flag)


@dataclass
class DefReport:
    node: np.ndarray            # (n_rounds + 1, n_measure) mean event rate per node
    per_round: np.ndarray       # (n_rounds + 1,)
    per_measure: np.ndarray     # (n_measure,)
    per_shot: np.ndarray        # (n,)
    n_shots: int
    bulk: float = field(default=0.0)

    @property
    def boundary_rounds(self) -> tuple[float, float]:
        return float(self.per_round[0]), float(self.per_round[-1])

    def to_json(self) -> dict:
        return {"n_shots": self.n_shots, "bulk": self.bulk,
                "per_round": self.per_round.tolist(), "per_measure": self.per_measure.tolist(),
                "node": self.node.tolist()}


def def_report(batch: DetectionBatch) -> DefReport:
    """Detection event fractions aggregated by node, round, measure qubit and shot.

    Masked nodes are excluded from every average.
    """
    if len(batch) == 0:
        raise ValueError("def_report needs at least one shot")
    mask = batch.mask
    node = batch.events.mean(axis=0)
    w = mask.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_round = (node * w).sum(1) / w.sum(1)
        per_measure = (node * w).sum(0) / w.sum(0)
    per_shot = batch.events.reshape(len(batch), -1)[:, mask.reshape(-1)].mean(1)
    bulk_rows = slice(1, batch.n_rounds) if batch.n_rounds > 1 else slice(0, batch.n_rounds + 1)
    bw = w[bulk_rows]
    bulk = float((node[bulk_rows] * bw).sum() / bw.sum())
    return DefReport(node, np.nan_to_num(per_round), np.nan_to_num(per_measure), per_shot, len(batch), bulk)


@dataclass
class BurstFilterResult:
    kept: np.ndarray            # boolean keep mask in input order
    removed_ranges: list[tuple[int, int]]   # inclusive shot-index ranges
    threshold: float
    flagged: np.ndarray

    @property
    def removed_fraction(self) -> float:
        return float(1.0 - self.kept.mean()) if self.kept.size else 0.0


def half_sample_mode(values: np.ndarray) -> float:
    """Mode estimate by repeatedly keeping the densest half of the sorted sample."""
    x = np.sort(np.asarray(values, dtype=float))
    while x.size > 3:
        h = (x.size + 1) // 2
        widths = x[h - 1:] - x[:x.size - h + 1]
        i = int(np.argmin(widths))
        x = x[i:i + h]
    return float(np.median(x))


def _extend(flagged: np.ndarray, cooldown: int) -> np.ndarray:
    removed = np.zeros(flagged.size, dtype=bool)
    quiet = cooldown
    for j in range(flagged.size):
        if flagged[j]:
            quiet = 0
            removed[j] = True
        elif quiet < cooldown:
            removed[j] = True
            quiet += 1
    return removed


def burst_filter(batch: DetectionBatch, k_sigma: float = 5.0, cooldown: int = 30,
                 max_iter: int = 30):
    """Remove shots recorded during device-wide error bursts.

    A shot is flagged when its mean detection fraction exceeds
    ``median + k_sigma * IQR / 1.349`` of the quiet shots. Removal starts at
    every flagged shot and runs on until ``cooldown`` consecutive unflagged
    shots have passed, which catches the decaying tail of a burst.

    Bursts can occupy a large share of a run, which drags the plain median
    and IQR upward until nothing is flagged. The quiet set is therefore
    seeded from the low side of the distribution (half-sample mode and the
    spread below it; bursts only ever raise the detection fraction) and then
    refined by recomputing median and IQR on the kept shots until the kept
    set stops changing.

    Returns
    -------
    kept : DetectionBatch
    result : BurstFilterResult
    """
    n = len(batch)
    if n < 100:
        raise ValueError(f"burst_filter needs at least 100 shots, got {n}")
    order = np.argsort(batch.shot_index, kind="stable")
    series = def_report(batch).per_shot[order]
    c = half_sample_mode(series)
    below = series[series <= c]
    thr = c + k_sigma * 1.4826 * float(np.median(c - below))
    removed = _extend(series > thr, cooldown)
    for _ in range(max_iter):
        quiet = series[~removed]
        if quiet.size < 10:
            break
        q1, med, q3 = np.percentile(quiet, [25, 50, 75])
        thr = med + k_sigma * (q3 - q1) / 1.349
        new = _extend(series > thr, cooldown)
        if np.array_equal(new, removed):
            break
        removed = new
    flagged = series > thr
    ranges = []
    idx = batch.shot_index[order]
    j = 0
    while j < n:
        if removed[j]:
            k = j
            while k + 1 < n and removed[k + 1]:
                k += 1
            ranges.append((int(idx[j]), int(idx[k])))
            j = k + 1
        else:
            j += 1
    keep = np.empty(n, dtype=bool)
    keep[order] = ~removed
    flag_in = np.empty(n, dtype=bool)
    flag_in[order] = flagged
    res = BurstFilterResult(keep, ranges, float(thr), flag_in)
    return batch.select(keep), res
