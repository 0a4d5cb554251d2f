"""Where each detection node's bits come from in the raw measurement record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, CircuitError


@dataclass(frozen=True)
class DetectorLayout:
    n_measure: int
    n_rounds: int
    n_data: int
    stab_index: np.ndarray      # (n_rounds, n_measure) measurement index of m_{s,t}
    final_index: np.ndarray     # (n_data,) measurement index of each final data readout
    support: tuple[tuple[int, ...], ...]
    mask: np.ndarray            # (n_rounds + 1, n_measure) True where the node is defined

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rounds + 1, self.n_measure

    @classmethod
    def from_circuit(cls, circuit: Circuit) -> "DetectorLayout":
        mq = {q: s for s, q in enumerate(circuit.measure_qubits)}
        dq = {q: k for k, q in enumerate(circuit.data_qubits)}
        n_rounds = circuit.n_rounds
        stab = np.full((n_rounds, len(mq)), -1, dtype=np.int64)
        final = np.full(len(dq), -1, dtype=np.int64)
        for j, (q, t, role) in enumerate(circuit.measurement_schedule):
            if role == "stabilizer":
                stab[t, mq[q]] = j
            else:
                final[dq[q]] = j
        if (stab < 0).any() or (final < 0).any():
            raise CircuitError("measurement schedule does not cover every stabilizer round and data qubit")
        mask = np.ones((n_rounds + 1, len(mq)), dtype=bool)
        for s, basis in enumerate(circuit.stabilizer_basis):
            mask[0, s] = basis == circuit.init_basis
            mask[n_rounds, s] = basis == circuit.final_basis
        return cls(len(mq), n_rounds, len(dq), stab, final, circuit.stabilizer_support, mask)

    def parity(self, bits: np.ndarray) -> np.ndarray:
        """Per-stabilizer parity of data bits, shape (..., n_data) -> (..., n_measure)."""
        out = np.zeros(bits.shape[:-1] + (self.n_measure,), dtype=np.uint8)
        for s, sup in enumerate(self.support):
            out[..., s] = np.bitwise_xor.reduce(bits[..., list(sup)], axis=-1)
        return out

    def events(self, stab_bits: np.ndarray, final_bits: np.ndarray,
               init_parity: np.ndarray) -> np.ndarray:
        """Detection events from stabilizer outcomes (n, rounds, S), final data
        bits (n, n_data) and initial stabilizer parities (n, S)."""
        n = stab_bits.shape[0]
        ev = np.empty((n, self.n_rounds + 1, self.n_measure), dtype=np.uint8)
        ev[:, 0] = stab_bits[:, 0] ^ init_parity
        ev[:, 1:self.n_rounds] = stab_bits[:, 1:] ^ stab_bits[:, :-1]
        ev[:, self.n_rounds] = self.parity(final_bits) ^ stab_bits[:, -1]
        ev &= self.mask.astype(np.uint8)
        return ev

    def split(self, record: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat measurement record (n, n_meas) -> stabilizer bits and final data bits."""
        return record[:, self.stab_index], record[:, self.final_index]

    def events_from_flips(self, flips: np.ndarray) -> np.ndarray:
        """Node flips caused by measurement flips alone (linear part of ``events``)."""
        stab, final = self.split(flips)
        zero = np.zeros((flips.shape[0], self.n_measure), dtype=np.uint8)
        return self.events(stab, final, zero)
