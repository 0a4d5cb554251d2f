"""Circuit builders for repetition codes and the distance-2 surface code."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .circuit import CZ, IDLE, Circuit, CircuitError, H, M, Moment, R, X

FAMILIES = ("rep-bit", "rep-phase", "surface2")


class CodeSpecError(ValueError):
    pass


@dataclass(frozen=True)
class CodeSpec:
    """What to build: code family, distance, rounds and initial data string.

    ``init`` is either ``"random"`` (a fresh string per block of shots) or a
    bitstring over the data qubits. ``basis`` only matters for surface2.
    """

    family: str
    distance: int
    rounds: int
    init: str = "random"
    basis: str = "Z"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise CodeSpecError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "surface2":
            if self.distance != 2:
                raise CodeSpecError("surface2 has distance 2")
            if self.basis not in ("X", "Z"):
                raise CodeSpecError("surface2 basis must be 'X' or 'Z'")
        elif not (isinstance(self.distance, int) and 3 <= self.distance <= 11 and self.distance % 2):
            raise CodeSpecError(f"repetition distance must be odd in 3..11, got {self.distance}")
        if self.rounds < 1:
            raise CodeSpecError("rounds must be >= 1")
        if self.init != "random":
            if len(self.init) != self.n_data or set(self.init) - {"0", "1"}:
                raise CodeSpecError(f"init must be 'random' or a {self.n_data}-bit string, got {self.init!r}")

    @property
    def n_data(self) -> int:
        return 4 if self.family == "surface2" else self.distance

    @property
    def n_measure(self) -> int:
        return 3 if self.family == "surface2" else self.distance - 1

    @property
    def n_qubits(self) -> int:
        return self.n_data + self.n_measure

    def with_rounds(self, rounds: int) -> "CodeSpec":
        return CodeSpec(self.family, self.distance, rounds, self.init, self.basis)

    def to_json(self) -> dict:
        return {"family": self.family, "distance": self.distance, "rounds": self.rounds,
                "basis": self.basis, "init": self.init}

    @classmethod
    def from_json(cls, obj: Mapping | str) -> "CodeSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        extra = set(obj) - {"family", "distance", "rounds", "basis", "init"}
        if extra:
            raise CodeSpecError(f"unknown code spec keys: {sorted(extra)}")
        return cls(obj["family"], int(obj["distance"]), int(obj["rounds"]),
                   str(obj.get("init", "random")), str(obj.get("basis", "Z")))


def build(spec: CodeSpec) -> Circuit:
    if spec.family == "surface2":
        return build_surface2(spec)
    return build_repetition(spec)


def build_repetition(spec: CodeSpec) -> Circuit:
    """Repetition-code memory circuit on a chain of ``2d - 1`` qubits.

    Data qubit ``k`` sits at chain position ``2k`` and measure qubit ``s`` at
    ``2s + 1``; measure ``s`` checks data ``s`` and ``s + 1``. Parity checks
    use H-CZ-CZ-H on the measure qubit. In the phase-flip code the data are
    held in the X basis and are Hadamard-conjugated around the CZs. In the
    bit-flip code every data qubit gets an X each round instead.
    """
    if spec.family not in ("rep-bit", "rep-phase"):
        raise CodeSpecError(f"build_repetition cannot build {spec.family}")
    d = spec.distance
    if d % 2 == 0 or not 3 <= d <= 11:
        raise CodeSpecError(f"repetition distance must be odd in 3..11, got {d}")
    phase = spec.family == "rep-phase"
    data = tuple(2 * k for k in range(d))
    meas = tuple(2 * s + 1 for s in range(d - 1))
    moments: list[Moment] = []
    schedule: list[tuple[int, int, str]] = []
    starts: list[int] = []
    n_r = spec.rounds
    for t in range(n_r):
        last = t == n_r - 1
        ops = [H(q) for q in meas]
        if phase:
            # the first data Hadamard cancels against state preparation
            if t > 0:
                ops += [H(q) for q in data]
        else:
            ops += [IDLE(q, "I") for q in data]
        moments.append(Moment(tuple(ops)))
        starts.append(len(moments))
        moments.append(Moment(tuple(CZ(meas[s], data[s]) for s in range(d - 1)) + (IDLE(data[-1], "I"),)))
        moments.append(Moment(tuple(CZ(meas[s], data[s + 1]) for s in range(d - 1)) + (IDLE(data[0], "I"),)))
        ops = [H(q) for q in meas]
        if phase:
            # the last data Hadamard cancels against the X-basis readout rotation
            ops += [IDLE(q, "I") if last else H(q) for q in data]
        else:
            ops += [X(q) for q in data]
        moments.append(Moment(tuple(ops)))
        if last:
            moments.append(Moment(tuple(M(q) for q in meas) + tuple(M(q) for q in data)))
            schedule += [(q, t, "stabilizer") for q in meas]
            schedule += [(q, n_r, "final-data") for q in data]
        else:
            moments.append(Moment(tuple(M(q) for q in meas) + tuple(IDLE(q, "DD") for q in data)))
            schedule += [(q, t, "stabilizer") for q in meas]
            moments.append(Moment(tuple(R(q) for q in meas)))
    basis = "X" if phase else "Z"
    return Circuit(
        qubit_count=2 * d - 1, moments=tuple(moments), measurement_schedule=tuple(schedule),
        data_qubits=data, measure_qubits=meas, round_starts=tuple(starts), flip_pauli="X",
        stabilizer_support=tuple((s, s + 1) for s in range(d - 1)),
        stabilizer_basis=(basis,) * (d - 1), init_basis=basis, final_basis=basis)


# measure qubits of the distance-2 surface code
_A, _B, _C = 4, 5, 6
# (single-qubit Hadamard layer data qubits, CZ pairs of the following layer)
_S2_LAYERS = (
    ((0,), ((_B, 0), (_C, 2))),
    ((0, 1), ((_B, 1), (_C, 3))),
    ((1, 2), ((_B, 2), (_A, 0))),
    ((2, 3), ((_B, 3), (_A, 1))),
)


def _single_layer(hs: set[int], n: int) -> Moment:
    return Moment(tuple(H(q) if q in hs else IDLE(q, "I") for q in range(n)))


def build_surface2(spec: CodeSpec) -> Circuit:
    """Distance-2 surface code: data 0-3, measure qubits for Z0Z1, X0X1X2X3, Z2Z3.

    Four CZ layers per round. Data qubits are Hadamard-conjugated one at a
    time around their CZ with the X-stabilizer measure qubit. In the X basis
    the preparation and readout Hadamards are merged into the first and last
    single-qubit layers (where two Hadamards meet they cancel).
    """
    if spec.family != "surface2":
        raise CodeSpecError(f"build_surface2 cannot build {spec.family}")
    if spec.init != "random" and len(spec.init) != 4:
        raise CodeSpecError("surface2 init must have 4 bits")
    n = 7
    meas = (_A, _B, _C)
    xb = spec.basis == "X"
    moments: list[Moment] = []
    schedule: list[tuple[int, int, str]] = []
    starts: list[int] = []
    n_r = spec.rounds
    for t in range(n_r):
        last = t == n_r - 1
        for k, (hq, pairs) in enumerate(_S2_LAYERS):
            hs = set(hq)
            if k == 0:
                hs |= set(meas)
                if t == 0 and xb:
                    hs ^= {0, 1, 2, 3}
                starts.append(len(moments))
            moments.append(_single_layer(hs, n))
            busy = {q for p in pairs for q in p}
            moments.append(Moment(tuple(CZ(a, b) for a, b in pairs)
                                  + tuple(IDLE(q, "I") for q in range(n) if q not in busy)))
        hs = {3} | set(meas)
        if last and xb:
            hs ^= {0, 1, 2, 3}
        moments.append(_single_layer(hs, n))
        schedule += [(q, t, "stabilizer") for q in meas]
        if last:
            moments.append(Moment(tuple(M(q) for q in meas) + tuple(M(q) for q in range(4))))
            schedule += [(q, n_r, "final-data") for q in range(4)]
        else:
            moments.append(Moment(tuple(M(q) for q in meas) + tuple(IDLE(q, "DD") for q in range(4))))
            moments.append(Moment(tuple(R(q) for q in meas)))
    return Circuit(
        qubit_count=n, moments=tuple(moments), measurement_schedule=tuple(schedule),
        data_qubits=(0, 1, 2, 3), measure_qubits=meas, round_starts=tuple(starts), flip_pauli="X",
        stabilizer_support=((0, 1), (0, 1, 2, 3), (2, 3)), stabilizer_basis=("Z", "X", "Z"),
        init_basis=spec.basis, final_basis=spec.basis)


def logical_support(spec: CodeSpec) -> tuple[int, ...]:
    """Data positions whose readout parity is the logical observable."""
    if spec.family == "surface2":
        return (0, 2) if spec.basis == "Z" else (0, 1)
    return tuple(range(spec.distance))


def expected_final(spec: CodeSpec, init_bits: np.ndarray) -> np.ndarray:
    """Noiseless final data readout for the given initial strings."""
    init_bits = np.asarray(init_bits, dtype=np.uint8)
    if spec.family == "rep-bit" and spec.rounds % 2:
        return init_bits ^ 1
    return init_bits.copy()


@dataclass(frozen=True)
class SubsampleMap:
    """Contiguous sub-chain of a repetition code treated as a smaller code."""

    parent_d: int
    child_d: int
    offset: int

    @property
    def measure_index(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.child_d - 1)

    @property
    def data_index(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.child_d)

    def child_spec(self, parent: CodeSpec) -> CodeSpec:
        init = parent.init if parent.init == "random" else parent.init[self.offset:self.offset + self.child_d]
        return CodeSpec(parent.family, self.child_d, parent.rounds, init, parent.basis)


def subsample_maps(d: int, d_s: int) -> list[SubsampleMap]:
    """All ``d - d_s + 1`` contiguous distance-``d_s`` sub-chains of a distance-``d`` chain."""
    if d % 2 == 0 or d_s % 2 == 0:
        raise CodeSpecError(f"subsampling needs odd distances, got d={d}, d_s={d_s}")
    if not 3 <= d_s <= d:
        raise CodeSpecError(f"child distance {d_s} must be in 3..{d}")
    return [SubsampleMap(d, d_s, o) for o in range(d - d_s + 1)]


def check_circuit_counts(circuit: Circuit, spec: CodeSpec) -> None:
    """Structural sanity check used by the CLI before long runs."""
    if circuit.qubit_count != spec.n_qubits:
        raise CircuitError(f"built {circuit.qubit_count} qubits, expected {spec.n_qubits}")
