"""Stabilizer tableau simulation (destabilizer form, CHP-style).

Used for the noiseless reference trajectory, which needs genuine random
outcomes when a stabilizer is measured for the first time out of its
eigenbasis, and as an independent check on Pauli-frame propagation.
"""

from __future__ import annotations

import numpy as np


def _g(x1, z1, x2, z2):
    # exponent of i picked up when multiplying single-qubit Paulis (x1,z1)*(x2,z2)
    x1 = x1.astype(np.int8)
    z1 = z1.astype(np.int8)
    x2 = x2.astype(np.int8)
    z2 = z2.astype(np.int8)
    out = np.zeros_like(x1)
    m = (x1 == 1) & (z1 == 1)
    out[m] = (z2 - x2)[m]
    m = (x1 == 1) & (z1 == 0)
    out[m] = (z2 * (2 * x2 - 1))[m]
    m = (x1 == 0) & (z1 == 1)
    out[m] = (x2 * (1 - 2 * z2))[m]
    return out


class Tableau:
    def __init__(self, n: int, bits=None):
        self.n = n
        self.x = np.zeros((2 * n + 1, n), dtype=bool)
        self.z = np.zeros((2 * n + 1, n), dtype=bool)
        self.r = np.zeros(2 * n + 1, dtype=bool)
        idx = np.arange(n)
        self.x[idx, idx] = True
        self.z[n + idx, idx] = True
        if bits is not None:
            for q, b in enumerate(bits):
                if b:
                    self.x_gate(q)

    def copy(self) -> "Tableau":
        t = Tableau.__new__(Tableau)
        t.n = self.n
        t.x, t.z, t.r = self.x.copy(), self.z.copy(), self.r.copy()
        return t

    def _rowsum(self, h: int, i: int) -> None:
        phase = 2 * int(self.r[h]) + 2 * int(self.r[i])
        phase += int(_g(self.x[i], self.z[i], self.x[h], self.z[h]).sum())
        self.r[h] = (phase % 4) == 2
        self.x[h] ^= self.x[i]
        self.z[h] ^= self.z[i]

    def h(self, a: int) -> None:
        self.r ^= self.x[:, a] & self.z[:, a]
        self.x[:, a], self.z[:, a] = self.z[:, a].copy(), self.x[:, a].copy()

    def x_gate(self, a: int) -> None:
        self.r ^= self.z[:, a]

    def z_gate(self, a: int) -> None:
        self.r ^= self.x[:, a]

    def cnot(self, a: int, b: int) -> None:
        self.r ^= self.x[:, a] & self.z[:, b] & ~(self.x[:, b] ^ self.z[:, a])
        self.x[:, b] ^= self.x[:, a]
        self.z[:, a] ^= self.z[:, b]

    def cz(self, a: int, b: int) -> None:
        self.h(b)
        self.cnot(a, b)
        self.h(b)

    def is_deterministic(self, a: int) -> bool:
        return not self.x[self.n:2 * self.n, a].any()

    def measure(self, a: int, coin=None) -> int:
        """Z-basis measurement. ``coin`` supplies random bits when needed."""
        n = self.n
        hits = np.flatnonzero(self.x[n:2 * n, a])
        if hits.size:
            p = n + int(hits[0])
            for i in range(2 * n):
                if i != p and self.x[i, a]:
                    self._rowsum(i, p)
            self.x[p - n], self.z[p - n], self.r[p - n] = self.x[p], self.z[p], self.r[p]
            self.x[p] = False
            self.z[p] = False
            self.z[p, a] = True
            outcome = int(coin()) if coin is not None else 0
            self.r[p] = bool(outcome)
            return outcome
        s = 2 * n
        self.x[s] = False
        self.z[s] = False
        self.r[s] = False
        for i in np.flatnonzero(self.x[:n, a]):
            self._rowsum(s, n + int(i))
        return int(self.r[s])

    def reset(self, a: int, coin=None) -> None:
        if self.measure(a, coin):
            self.x_gate(a)

    def apply_pauli(self, a: int, pauli: str) -> None:
        if pauli in ("X", "Y"):
            self.x_gate(a)
        if pauli in ("Z", "Y"):
            self.z_gate(a)

    def expectation(self, paulis: dict[int, str]) -> int | None:
        """+1/-1 for an X/Z Pauli product that is (up to sign) in the
        stabilizer group, ``None`` if measuring it would give a random result."""
        n = self.n
        px = np.zeros(n, dtype=bool)
        pz = np.zeros(n, dtype=bool)
        for q, p in paulis.items():
            if p not in ("X", "Z"):
                raise ValueError("expectation supports X and Z factors only")
            px[q] = p == "X"
            pz[q] = p == "Z"
        anti = (self.x[n:2 * n] & pz).sum(1) + (self.z[n:2 * n] & px).sum(1)
        if (anti % 2).any():
            return None
        s = 2 * n
        self.x[s] = False
        self.z[s] = False
        self.r[s] = False
        for i in range(n):
            if ((self.x[i] & pz).sum() + (self.z[i] & px).sum()) % 2:
                self._rowsum(s, n + i)
        assert np.array_equal(self.x[s], px) and np.array_equal(self.z[s], pz)
        return -1 if self.r[s] else 1
