"""Noisy shot sampling: tableau reference trajectory plus Pauli-frame noise.

The noiseless record is computed once with a stabilizer tableau. Each noisy
shot is that record XOR the measurement flips of a propagated Pauli frame.
Every noisy instruction owns a fixed slot in a per-shot counter-based random
stream, so two runs that differ only in rates see the same uniforms
(common random numbers).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from . import _frame_py, _rng
from .circuit import COMPONENTS, Circuit, NoiseConfigError, NoiseModel, clip_rates
from .layout import DetectorLayout
from .tableau import Tableau

try:
    from . import _kernels
except ImportError:  # pragma: no cover - depends on build
    _kernels = None

_OPCODE = {"H": _frame_py.OP_H, "X": _frame_py.OP_X, "CZ": _frame_py.OP_CZ,
           "M": _frame_py.OP_M, "R": _frame_py.OP_R, "IDLE": _frame_py.OP_IDLE}
_PAULI_CODE = {"X": 1, "Z": 3}
_PAULI_NAME = "IXYZ"


def default_backend() -> str:
    """``"compiled"`` when the extension is importable, unless REPSTAB_BACKEND=python."""
    if os.environ.get("REPSTAB_BACKEND", "").lower() == "python" or _kernels is None:
        return "python"
    return "compiled"


BACKEND = default_backend()


@dataclass
class Program:
    """Flat instruction arrays compiled from a circuit (plus correlated channels)."""

    op: np.ndarray
    q0: np.ndarray
    q1: np.ndarray
    cls: np.ndarray
    meas: np.ndarray
    draw: np.ndarray
    mask: np.ndarray
    pauli: np.ndarray
    prob: np.ndarray
    prob2: np.ndarray
    moment: np.ndarray
    n_qubits: int
    n_meas: int
    n_slots: int = 0
    n_draws: int = 0

    @property
    def size(self) -> int:
        return int(self.op.shape[0])

    def qubits_of_mask(self, i: int) -> list[int]:
        m = int(self.mask[i])
        return [q for q in range(self.n_qubits) if (m >> q) & 1]


def compile_program(circuit: Circuit, noise: NoiseModel | None = None) -> Program:
    """Lower ``circuit`` to instruction arrays.

    Regular noisy instructions take draw slots 0, 1, ... in program order;
    correlated channels take slots after all of them, so adding a channel
    never changes the uniforms seen by the six-parameter noise.
    """
    channels = noise.correlated if noise is not None else ()
    if channels and len(set(circuit.stabilizer_basis)) > 1:
        raise NoiseConfigError("correlated channels are only defined for repetition codes")
    cls_of = {c: k for k, c in enumerate(COMPONENTS)}
    rows: list[tuple] = []
    starts = {m: t for t, m in enumerate(circuit.round_starts)}
    n_meas = 0
    draw = 0
    extra = []
    slot = 0
    for k, moment in enumerate(circuit.moments):
        if k in starts:
            for ch in channels:
                extra.append((k, len(rows), ch))
                rows.append(None)
        for op in moment.ops:
            code = _OPCODE[op.kind]
            a = op.qubits[0]
            b = op.qubits[1] if op.kind == "CZ" else -1
            m = -1
            if op.kind == "M":
                m = n_meas
                n_meas += 1
            rows.append((code, a, b, cls_of[op.component], m, draw, 0, 0, 0.0, 0.0, k))
            draw += 1
    n_regular = draw
    data = circuit.data_qubits
    flip = _PAULI_CODE[circuit.flip_pauli]
    slots: dict[int, int] = {}
    for k, pos, ch in extra:
        if ch.kind == "pair-flip":
            s1, s2 = ch.measure_pair
            if s2 >= len(circuit.measure_qubits):
                raise NoiseConfigError(f"pair-flip measure qubit {s2} out of range")
            mask = 0
            for q in data[s1 + 1:s2 + 1]:
                mask |= 1 << q
            rows[pos] = (_frame_py.OP_PAIRFLIP, -1, -1, -1, -1, draw, mask, flip,
                         ch.probability, 0.0, k)
            draw += 1
        else:
            if not 0 <= ch.data_qubit < len(data):
                raise NoiseConfigError(f"persistent-flip data qubit {ch.data_qubit} out of range")
            key = id(ch)
            if key not in slots:
                slots[key] = slot
                slot += 1
            rows[pos] = (_frame_py.OP_LEAK, data[ch.data_qubit], slots[key], -1, -1, draw, 0, flip,
                         ch.probability, ch.survival, k)
            draw += 2
    cols = list(zip(*rows)) if rows else [()] * 11
    return Program(
        op=np.array(cols[0], dtype=np.int32), q0=np.array(cols[1], dtype=np.int32),
        q1=np.array(cols[2], dtype=np.int32), cls=np.array(cols[3], dtype=np.int32),
        meas=np.array(cols[4], dtype=np.int32), draw=np.array(cols[5], dtype=np.int64),
        mask=np.array(cols[6], dtype=np.uint64), pauli=np.array(cols[7], dtype=np.int32),
        prob=np.array(cols[8], dtype=np.float64), prob2=np.array(cols[9], dtype=np.float64),
        moment=np.array(cols[10], dtype=np.int64), n_qubits=circuit.qubit_count,
        n_meas=n_meas, n_slots=slot, n_draws=draw if draw else n_regular)


def propagate(prog: Program, rates: np.ndarray, keys: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Measurement flips for a batch of shots, shape (n_shots, n_meas)."""
    backend = backend or BACKEND
    rates = np.ascontiguousarray(rates, dtype=np.float64)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    if backend == "compiled" and _kernels is not None and prog.n_qubits <= 64 and prog.n_slots <= 64:
        return _kernels.sample_flips(prog.op, prog.q0, prog.q1, prog.cls, prog.meas, prog.draw,
                                     prog.mask, prog.pauli, prog.prob, prog.prob2,
                                     rates, keys, prog.n_meas)
    return _frame_py.sample_flips(prog, rates, keys)


# -- reference trajectory ---------------------------------------------------

def reference_run(circuit: Circuit, initial_state: Sequence[int] | None = None,
                  seed: int = 0) -> np.ndarray:
    """Noiseless measurement record from a full tableau simulation.

    ``initial_state`` gives the computational-basis bit of every data qubit
    (measure qubits start in 0). Measurements whose outcome is not fixed by
    the state draw from a fair coin seeded by ``seed``.
    """
    bits = np.zeros(circuit.qubit_count, dtype=bool)
    if initial_state is not None:
        if len(initial_state) != len(circuit.data_qubits):
            raise ValueError(f"initial state has {len(initial_state)} bits, "
                             f"circuit has {len(circuit.data_qubits)} data qubits")
        for q, b in zip(circuit.data_qubits, initial_state):
            bits[q] = bool(int(b))
    rng = np.random.default_rng(seed)
    coin = lambda: int(rng.integers(2))  # noqa: E731
    tab = Tableau(circuit.qubit_count, bits)
    out = []
    for moment in circuit.moments:
        for op in moment.ops:
            a = op.qubits[0]
            if op.kind == "H":
                tab.h(a)
            elif op.kind == "X":
                tab.x_gate(a)
            elif op.kind == "CZ":
                tab.cz(a, op.qubits[1])
            elif op.kind == "M":
                out.append(tab.measure(a, coin))
            elif op.kind == "R":
                tab.reset(a, coin)
    return np.array(out, dtype=np.uint8)


class ReferenceModel:
    """Reference records for arbitrary initial strings from d+1 tableau runs.

    The record is affine in the initial data bits (flipping a bit is an X
    applied before the circuit, which the frame picture propagates exactly),
    so ``record(b) = r0 XOR sum_k b_k * (r(e_k) XOR r0)`` with a shared coin.
    """

    def __init__(self, circuit: Circuit, seed: int = 0):
        n = len(circuit.data_qubits)
        self.base = reference_run(circuit, [0] * n, seed)
        resp = []
        for k in range(n):
            e = [0] * n
            e[k] = 1
            resp.append(reference_run(circuit, e, seed) ^ self.base)
        self.response = np.array(resp, dtype=np.uint8).reshape(n, -1)

    def record(self, init_bits: np.ndarray) -> np.ndarray:
        init_bits = np.asarray(init_bits, dtype=np.uint8)
        return self.base ^ ((init_bits.astype(np.int64) @ self.response) & 1).astype(np.uint8)


# -- bursts -----------------------------------------------------------------

def burst_multiplier(bursts, seed: int, shots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-shot rate multiplier and ground-truth flag for the given shot indices.

    A burst starts at shot ``k`` when that shot's burst uniform is below
    ``bursts.rate``; it adds ``(amplitude - 1) * exp(-(j - k) / decay)`` to
    the multiplier of every later shot ``j``. Shots whose excess is at least
    ``min(1, (amplitude - 1) / 2)`` are flagged.
    """
    shots = np.asarray(shots, dtype=np.int64)
    mult = np.ones(shots.shape[0])
    if bursts is None or bursts.rate == 0 or bursts.amplitude == 1.0 or shots.size == 0:
        return mult, np.zeros(shots.shape[0], dtype=bool)
    excess = bursts.amplitude - 1.0
    window = int(math.ceil(bursts.decay_shots * math.log(max(excess, 1.0) * 1e12)))
    lo = max(int(shots.min()) - window, 0)
    hi = int(shots.max()) + 1
    cand = np.arange(lo, hi, dtype=np.int64)
    u = _rng.uniform(_rng.shot_keys(seed, cand, _rng.BURST_SALT), 0)
    starts = cand[u < bursts.rate]
    for k in starts:
        lag = shots - k
        on = (lag >= 0) & (lag <= window)
        mult[on] += excess * np.exp(-lag[on] / bursts.decay_shots)
    flag = (mult - 1.0) >= min(1.0, excess / 2.0)
    return mult, flag


# -- shot containers ---------------------------------------------------------

@dataclass(frozen=True)
class ShotRecord:
    stabilizer_bits: np.ndarray   # (n_rounds, n_measure)
    final_data_bits: np.ndarray   # (n_data,)
    burst_flag: bool = False


@dataclass
class ShotBatch:
    """Columnar store of many shots of one circuit.

    ``init_bits`` keeps each shot's prepared data string; detection and
    decoding need it, and ``shot_index`` preserves acquisition order.
    """

    stabilizer_bits: np.ndarray   # (n, n_rounds, n_measure) uint8
    final_data_bits: np.ndarray   # (n, n_data) uint8
    burst_flag: np.ndarray        # (n,) bool
    init_bits: np.ndarray         # (n, n_data) uint8
    shot_index: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.shot_index is None:
            self.shot_index = np.arange(self.stabilizer_bits.shape[0], dtype=np.int64)

    def __len__(self) -> int:
        return int(self.stabilizer_bits.shape[0])

    def __iter__(self) -> Iterator[ShotRecord]:
        for j in range(len(self)):
            yield self[j]

    def __getitem__(self, j) -> ShotRecord:
        return ShotRecord(self.stabilizer_bits[j], self.final_data_bits[j], bool(self.burst_flag[j]))

    @property
    def n_rounds(self) -> int:
        return int(self.stabilizer_bits.shape[1])

    @property
    def n_measure(self) -> int:
        return int(self.stabilizer_bits.shape[2])

    @property
    def n_data(self) -> int:
        return int(self.final_data_bits.shape[1])

    def select(self, idx) -> "ShotBatch":
        return ShotBatch(self.stabilizer_bits[idx], self.final_data_bits[idx],
                         self.burst_flag[idx], self.init_bits[idx], self.shot_index[idx])

    @staticmethod
    def concat(batches: Sequence["ShotBatch"]) -> "ShotBatch":
        return ShotBatch(*(np.concatenate([getattr(b, f) for b in batches])
                           for f in ("stabilizer_bits", "final_data_bits", "burst_flag",
                                     "init_bits", "shot_index")))


def block_init_bits(seed: int, blocks: np.ndarray, n_data: int) -> np.ndarray:
    """Random initial data strings, one per block of shots, from the seed."""
    keys = _rng.shot_keys(seed, blocks, _rng.INIT_SALT)
    return np.stack([(_rng.uniform(keys, k) < 0.5) for k in range(n_data)], axis=-1).astype(np.uint8)


class Sampler:
    """Reusable sampler for one circuit: caches the program and reference."""

    def __init__(self, circuit: Circuit, noise: NoiseModel, coin_seed: int = 0,
                 backend: str | None = None):
        self.circuit = circuit
        self.noise = noise
        self.program = compile_program(circuit, noise)
        self.layout = DetectorLayout.from_circuit(circuit)
        self.coin_seed = coin_seed
        self.backend = backend or BACKEND

    @cached_property
    def reference(self) -> ReferenceModel:
        return ReferenceModel(self.circuit, self.coin_seed)

    def shot_rates(self, seed: int, shots: np.ndarray, rates: np.ndarray | None = None):
        base = self.noise.rates if rates is None else np.asarray(rates, dtype=np.float64)
        mult, flag = burst_multiplier(self.noise.bursts, seed, shots)
        return clip_rates(base[None, :] * mult[:, None]), flag

    def flips(self, seed: int, shots: np.ndarray, rates: np.ndarray | None = None):
        keys = _rng.shot_keys(seed, shots)
        r, flag = self.shot_rates(seed, shots, rates)
        return propagate(self.program, r, keys, self.backend), flag

    def sample(self, n_shots: int, seed: int, init=None, block: int = 1000, start: int = 0,
               rates: np.ndarray | None = None) -> ShotBatch:
        if n_shots < 1:
            raise ValueError("n_shots must be >= 1")
        shots = np.arange(start, start + n_shots, dtype=np.int64)
        flips, flag = self.flips(seed, shots, rates)
        n_data = len(self.circuit.data_qubits)
        if init is None or (isinstance(init, str) and init == "random"):
            blocks = shots // block
            ub, inv = np.unique(blocks, return_inverse=True)
            init_bits = block_init_bits(seed, ub, n_data)[inv]
        else:
            b = np.array([int(c) for c in init], dtype=np.uint8) if isinstance(init, str) else np.asarray(init, dtype=np.uint8)
            if b.shape != (n_data,):
                raise ValueError(f"init string must have {n_data} bits")
            init_bits = np.broadcast_to(b, (n_shots, n_data)).copy()
        ref = self.reference
        uniq, inv = np.unique(init_bits, axis=0, return_inverse=True)
        inv = np.asarray(inv).reshape(-1)
        refs = np.stack([ref.record(u) for u in uniq])
        records = refs[inv] ^ flips
        stab, final = self.layout.split(records)
        return ShotBatch(np.ascontiguousarray(stab), np.ascontiguousarray(final), flag, init_bits, shots)


def sample_shots(circuit: Circuit, noise: NoiseModel, n_shots: int, seed: int, init=None,
                 block: int = 1000, start: int = 0, backend: str | None = None) -> ShotBatch:
    """Sample ``n_shots`` noisy shots; shot ``j`` depends only on ``(seed, start + j)``."""
    return Sampler(circuit, noise, coin_seed=seed, backend=backend).sample(
        n_shots, seed, init=init, block=block, start=start)


# -- single-error enumeration -------------------------------------------------

@dataclass(frozen=True)
class SingleError:
    instruction: int
    moment: int
    kind: str
    qubits: tuple[int, ...]
    pauli: str
    probability: float
    nodes: frozenset          # {(s, t)} flipped detection nodes
    data_flips: tuple[int, ...]   # data positions whose final readout flips


def _pauli_label(kind: int, code: int) -> str:
    if kind == _frame_py.OP_CZ:
        return _PAULI_NAME[code >> 2] + _PAULI_NAME[code & 3]
    if kind == _frame_py.OP_M:
        return "flip"
    if kind == _frame_py.OP_R:
        return "X"
    return _PAULI_NAME[code]


def error_columns(prog: Program) -> tuple[np.ndarray, np.ndarray]:
    """All (instruction, error code) pairs of the six-parameter noise model."""
    instr, codes = [], []
    for i in range(prog.size):
        if prog.cls[i] < 0:
            continue
        k = int(prog.op[i])
        m = _frame_py.n_paulis(k)
        for idx in range(m):
            instr.append(i)
            codes.append(0 if k in (_frame_py.OP_M, _frame_py.OP_R) else idx + 1)
    return np.array(instr, dtype=np.int64), np.array(codes, dtype=np.int64)


@dataclass
class MechanismTable:
    """Every single fault of the six-parameter model and its syndrome.

    Probabilities are not stored: ``probabilities(rates)`` splits each
    component rate evenly over the Paulis of its channel.
    """

    instr: np.ndarray       # instruction index
    codes: np.ndarray       # error code (Pauli index or pair code)
    cls: np.ndarray         # component index into COMPONENTS
    n_paulis: np.ndarray    # number of outcomes of the channel
    events: np.ndarray      # (n_mech, n_rounds + 1, n_measure) uint8
    data: np.ndarray        # (n_mech, n_data) uint8 final readout flips

    def probabilities(self, rates) -> np.ndarray:
        rates = np.asarray(rates, dtype=np.float64)
        return rates[self.cls] / self.n_paulis


def mechanism_table(circuit: Circuit) -> MechanismTable:
    prog = compile_program(circuit)
    layout = DetectorLayout.from_circuit(circuit)
    instr, codes = error_columns(prog)
    flips = _frame_py.propagate_injected(prog, instr, codes)
    events = layout.events_from_flips(flips)
    _, data = layout.split(flips)
    kinds = prog.op[instr]
    npau = np.where(kinds == _frame_py.OP_CZ, 15,
                    np.where((kinds == _frame_py.OP_M) | (kinds == _frame_py.OP_R), 1, 3))
    return MechanismTable(instr, codes, prog.cls[instr].astype(np.int64), npau, events, data.astype(np.uint8))


def enumerate_error_arrays(circuit: Circuit, noise: NoiseModel | None = None):
    """Vectorized form of :func:`enumerate_single_errors`.

    Returns
    -------
    instr, codes : ndarray
        Instruction index and error code of each mechanism.
    prob : ndarray
        Mechanism probability (component rate split over its Paulis).
    events : ndarray of uint8, shape (n_mech, n_rounds + 1, n_measure)
    data_flips : ndarray of uint8, shape (n_mech, n_data)
    """
    tab = mechanism_table(circuit)
    rates = noise.rates if noise is not None else np.zeros(len(COMPONENTS))
    return tab.instr, tab.codes, tab.probabilities(rates), tab.events, tab.data


def enumerate_single_errors(circuit: Circuit, noise: NoiseModel | None = None) -> list[SingleError]:
    """Every single fault location and Pauli with the detection nodes it flips."""
    prog = compile_program(circuit)
    instr, codes, prob, events, data = enumerate_error_arrays(circuit, noise)
    out = []
    for c in range(instr.shape[0]):
        i = int(instr[c])
        k = int(prog.op[i])
        qs = (int(prog.q0[i]),) if k != _frame_py.OP_CZ else (int(prog.q0[i]), int(prog.q1[i]))
        tt, ss = np.nonzero(events[c])
        out.append(SingleError(i, int(prog.moment[i]), ("H", "X", "CZ", "M", "R", "IDLE")[k], qs,
                               _pauli_label(k, int(codes[c])), float(prob[c]),
                               frozenset(zip(ss.tolist(), tt.tolist())),
                               tuple(np.flatnonzero(data[c]).tolist())))
    return out
