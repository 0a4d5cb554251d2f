"""Layered Clifford circuit IR and the Pauli noise model attached to it."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

OP_KINDS = ("H", "X", "CZ", "M", "R", "IDLE")
COMPONENTS = ("DD", "CZ", "M", "R", "H", "I")
IDLE_CLASSES = ("I", "DD")
ROLES = ("stabilizer", "final-data")

# Largest meaningful probability per component: fully depolarizing for Pauli
# channels, a fair coin for classical and reset flips.
_MAX_RATE = {"DD": 0.75, "CZ": 15 / 16, "M": 0.5, "R": 0.5, "H": 0.75, "I": 0.75}


class CircuitError(ValueError):
    """Structural problem in a circuit."""


class NoiseConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Op:
    kind: str
    qubits: tuple[int, ...]
    noise_class: str | None = None

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise CircuitError(f"unknown op kind {self.kind!r}")
        arity = 2 if self.kind == "CZ" else 1
        if len(self.qubits) != arity:
            raise CircuitError(f"{self.kind} takes {arity} qubit(s), got {self.qubits}")
        if self.kind == "CZ" and self.qubits[0] == self.qubits[1]:
            raise CircuitError(f"CZ operands must be distinct, got {self.qubits}")
        if self.kind == "IDLE" and self.noise_class not in IDLE_CLASSES:
            raise CircuitError(f"IDLE needs noise_class in {IDLE_CLASSES}")

    @property
    def component(self) -> str:
        """Which of the six error parameters applies after this op."""
        if self.kind == "IDLE":
            return self.noise_class
        if self.kind == "X":
            # pi pulses are single-qubit gates, same error class as H
            return "H"
        return self.kind


def H(q: int) -> Op:
    return Op("H", (q,))


def X(q: int) -> Op:
    return Op("X", (q,))


def CZ(a: int, b: int) -> Op:
    return Op("CZ", (a, b))


def M(q: int) -> Op:
    return Op("M", (q,))


def R(q: int) -> Op:
    return Op("R", (q,))


def IDLE(q: int, noise_class: str = "I") -> Op:
    return Op("IDLE", (q,), noise_class)


@dataclass(frozen=True)
class Moment:
    ops: tuple[Op, ...]

    @property
    def qubits(self) -> list[int]:
        return [q for op in self.ops for q in op.qubits]


@dataclass(frozen=True)
class Circuit:
    """A validated list of moments plus the bookkeeping that code builders add.

    ``measurement_schedule`` lists one ``(qubit, round, role)`` entry per M op
    in execution order. ``round_starts`` holds, per round, the moment just
    before the first CZ layer; correlated noise channels act there.
    ``flip_pauli`` is the Pauli that flips a stored data bit at a round
    boundary ("Z" while data sit in the X basis, "X" otherwise).
    ``stabilizer_support`` gives, per measure qubit, the positions in
    ``data_qubits`` it checks; with the bases this fixes how raw outcomes
    become detection events.
    """

    qubit_count: int
    moments: tuple[Moment, ...]
    measurement_schedule: tuple[tuple[int, int, str], ...]
    data_qubits: tuple[int, ...] = ()
    measure_qubits: tuple[int, ...] = ()
    round_starts: tuple[int, ...] = ()
    flip_pauli: str = "Z"
    stabilizer_support: tuple[tuple[int, ...], ...] = ()
    stabilizer_basis: tuple[str, ...] = ()
    init_basis: str = "Z"
    final_basis: str = "Z"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = self.qubit_count
        if n < 1:
            raise CircuitError("qubit_count must be positive")
        measured: set[int] = set()
        m_ops: list[int] = []
        for k, moment in enumerate(self.moments):
            seen: set[int] = set()
            for op in moment.ops:
                for q in op.qubits:
                    if not 0 <= q < n:
                        raise CircuitError(f"moment {k}: qubit {q} out of range for {n} qubits")
                    if q in seen:
                        raise CircuitError(f"moment {k}: qubit {q} appears twice")
                    seen.add(q)
                    if q in measured and op.kind != "R":
                        raise CircuitError(
                            f"moment {k}: qubit {q} reused by {op.kind} after measurement without reset")
                if op.kind == "M":
                    measured.add(op.qubits[0])
                    m_ops.append(op.qubits[0])
                elif op.kind == "R":
                    measured.discard(op.qubits[0])
        if len(m_ops) != len(self.measurement_schedule):
            raise CircuitError(
                f"{len(m_ops)} measurements but schedule has {len(self.measurement_schedule)} entries")
        for j, (q, (sq, _t, role)) in enumerate(zip(m_ops, self.measurement_schedule)):
            if q != sq:
                raise CircuitError(f"measurement {j} is on qubit {q}, schedule says {sq}")
            if role not in ROLES:
                raise CircuitError(f"measurement {j}: bad role {role!r}")
        for r in self.round_starts:
            if not 0 <= r <= len(self.moments):
                raise CircuitError(f"round start {r} outside the circuit")
        if self.flip_pauli not in ("X", "Z"):
            raise CircuitError("flip_pauli must be 'X' or 'Z'")
        if self.stabilizer_support and len(self.stabilizer_support) != len(self.measure_qubits):
            raise CircuitError("one stabilizer support per measure qubit required")
        if self.stabilizer_basis and len(self.stabilizer_basis) != len(self.measure_qubits):
            raise CircuitError("one stabilizer basis per measure qubit required")

    @property
    def n_measurements(self) -> int:
        return len(self.measurement_schedule)

    @property
    def n_rounds(self) -> int:
        return len(self.round_starts)

    def ops(self) -> Iterable[tuple[int, Op]]:
        for k, moment in enumerate(self.moments):
            for op in moment.ops:
                yield k, op

    def count(self, kind: str) -> int:
        return sum(1 for _, op in self.ops() if op.kind == kind)

    def max_parallel(self, kind: str) -> int:
        return max((sum(op.kind == kind for op in m.ops) for m in self.moments), default=0)


@dataclass(frozen=True)
class BurstConfig:
    """Device-wide error bursts: start probability per shot, peak rate factor,
    and e-folding time in shots."""

    rate: float
    amplitude: float
    decay_shots: float

    def __post_init__(self):
        if not 0.0 <= self.rate <= 0.1:
            raise NoiseConfigError(f"burst rate {self.rate} outside [0, 0.1]")
        if self.amplitude < 1.0:
            raise NoiseConfigError("burst amplitude must be >= 1")
        if self.decay_shots <= 0:
            raise NoiseConfigError("burst decay must be positive")


@dataclass(frozen=True)
class CorrelatedChannel:
    """Injectable correlated error process for repetition codes.

    ``pair-flip`` flips the stored parity of the data chain between measure
    qubits ``measure_pair`` at the start of every round with ``probability``,
    which lights up the two same-round detection nodes together.
    ``persistent-flip`` is a leakage stand-in: data qubit ``data_qubit``
    becomes "stuck" with ``probability`` per round, scrambles its stored bit
    each round while stuck, and stays stuck with ``survival``.
    """

    kind: str
    probability: float
    measure_pair: tuple[int, int] | None = None
    data_qubit: int | None = None
    survival: float | None = None

    def __post_init__(self):
        if self.kind not in ("pair-flip", "persistent-flip"):
            raise NoiseConfigError(f"unknown channel kind {self.kind!r}")
        if not 0.0 <= self.probability <= 0.5:
            raise NoiseConfigError("channel probability outside [0, 0.5]")
        if self.kind == "pair-flip":
            if self.measure_pair is None or len(self.measure_pair) != 2:
                raise NoiseConfigError("pair-flip needs measure_pair=(s1, s2)")
            a, b = self.measure_pair
            if a == b:
                raise NoiseConfigError("pair-flip needs two distinct measure qubits")
            object.__setattr__(self, "measure_pair", (min(a, b), max(a, b)))
        else:
            if self.data_qubit is None:
                raise NoiseConfigError("persistent-flip needs data_qubit")
            if self.survival is None or not 0.0 < self.survival < 1.0:
                raise NoiseConfigError("persistent-flip survival must be in (0, 1)")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "probability": self.probability}
        if self.kind == "pair-flip":
            out["measure_pair"] = list(self.measure_pair)
        else:
            out["data_qubit"] = self.data_qubit
            out["survival"] = self.survival
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "CorrelatedChannel":
        pair = obj.get("measure_pair")
        return cls(kind=obj["kind"], probability=float(obj["probability"]),
                   measure_pair=tuple(pair) if pair is not None else None,
                   data_qubit=obj.get("data_qubit"), survival=obj.get("survival"))


@dataclass(frozen=True)
class NoiseModel:
    """The six component error rates plus optional correlated extensions."""

    x: Mapping[str, float] = field(default_factory=lambda: dict.fromkeys(COMPONENTS, 0.0))
    bursts: BurstConfig | None = None
    correlated: tuple[CorrelatedChannel, ...] = ()

    def __post_init__(self):
        keys = set(self.x)
        if keys != set(COMPONENTS):
            raise NoiseConfigError(f"noise components must be exactly {COMPONENTS}, got {sorted(keys)}")
        clean = {}
        for k in COMPONENTS:
            v = float(self.x[k])
            if not (0.0 <= v <= 0.5) or math.isnan(v):
                raise NoiseConfigError(f"rate for {k} = {v} outside [0, 0.5]")
            clean[k] = v
        object.__setattr__(self, "x", clean)
        object.__setattr__(self, "correlated", tuple(self.correlated))

    @classmethod
    def from_rates(cls, **rates: float) -> "NoiseModel":
        x = dict.fromkeys(COMPONENTS, 0.0)
        for k, v in rates.items():
            key = k.upper()
            if key not in x:
                raise NoiseConfigError(f"unknown component {k!r}")
            x[key] = v
        return cls(x)

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.x[k] for k in COMPONENTS], dtype=np.float64)

    @property
    def is_zero(self) -> bool:
        return not any(self.x.values()) and not self.correlated and self.bursts is None

    def with_rates(self, rates: Mapping[str, float] | Sequence[float]) -> "NoiseModel":
        if not isinstance(rates, Mapping):
            rates = dict(zip(COMPONENTS, rates))
        x = dict(self.x)
        x.update({k.upper(): float(v) for k, v in rates.items()})
        return replace(self, x=x)

    def scaled(self, factor: float) -> "NoiseModel":
        return self.with_rates({k: v * factor for k, v in self.x.items()})

    def to_json(self) -> dict:
        out: dict = {k.lower(): v for k, v in self.x.items()}
        if self.bursts is not None:
            out["bursts"] = {"rate": self.bursts.rate, "amplitude": self.bursts.amplitude,
                             "decay_shots": self.bursts.decay_shots}
        if self.correlated:
            out["correlated"] = [c.to_json() for c in self.correlated]
        return out

    @classmethod
    def from_json(cls, obj: Mapping | str) -> "NoiseModel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        known = {k.lower() for k in COMPONENTS} | {"bursts", "correlated"}
        extra = set(obj) - known
        if extra:
            raise NoiseConfigError(f"unknown noise keys: {sorted(extra)}")
        x = {k: float(obj.get(k.lower(), 0.0)) for k in COMPONENTS}
        bursts = None
        if obj.get("bursts"):
            b = obj["bursts"]
            bursts = BurstConfig(float(b["rate"]), float(b["amplitude"]), float(b["decay_shots"]))
        corr = tuple(CorrelatedChannel.from_json(c) for c in obj.get("correlated", []))
        return cls(x, bursts, corr)


def clip_rates(rates: np.ndarray) -> np.ndarray:
    """Cap (possibly burst-amplified) rates at each channel's maximally mixing value."""
    caps = np.array([_MAX_RATE[k] for k in COMPONENTS])
    return np.minimum(rates, caps)


# Component error rates used throughout the examples and acceptance runs.
PRESETS: dict[str, dict[str, float]] = {
    # uniform-rate boundary-effect study (idle during M+R mapped to DD, idle during H to I)
    "boundary-study": {"H": 1e-3, "CZ": 5e-3, "M": 2e-3, "R": 5e-3, "DD": 4.4e-2, "I": 7e-4},
    "bitflip-device": {"DD": 5.1e-2, "CZ": 6.6e-3, "M": 1.9e-2, "R": 5.0e-3, "H": 1.1e-3, "I": 8.4e-4},
    "phaseflip-device": {"DD": 4.1e-2, "CZ": 6.6e-3, "M": 1.9e-2, "R": 5.0e-3, "H": 1.1e-3, "I": 5.8e-4},
}


def preset(name: str) -> NoiseModel:
    try:
        return NoiseModel(dict(PRESETS[name]))
    except KeyError:
        raise NoiseConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None
