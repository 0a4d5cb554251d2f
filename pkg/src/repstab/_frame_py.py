"""Pure-NumPy Pauli-frame propagation, vectorized over shots.

Frames are boolean arrays of shape ``(n_qubits, n_shots)``. The compiled
kernel in ``_kernels.pyx`` walks the same instruction program one shot at a
time with 64-bit masks and must produce identical output.
"""

from __future__ import annotations

import numpy as np

from . import _rng

OP_H, OP_X, OP_CZ, OP_M, OP_R, OP_IDLE, OP_PAIRFLIP, OP_LEAK = range(8)

# Pauli codes: 0=I, 1=X, 2=Y, 3=Z
_XBIT = np.array([0, 1, 1, 0], dtype=bool)
_ZBIT = np.array([0, 0, 1, 1], dtype=bool)


def _flip(x, z, q, code, cols):
    x[q, cols] ^= _XBIT[code]
    z[q, cols] ^= _ZBIT[code]


def _apply_gate(prog, i, x, z, rec):
    k = prog.op[i]
    a = prog.q0[i]
    if k == OP_H:
        x[a], z[a] = z[a].copy(), x[a].copy()
    elif k == OP_CZ:
        b = prog.q1[i]
        z[b] ^= x[a]
        z[a] ^= x[b]
    elif k == OP_M:
        rec[prog.meas[i]] = x[a]
    elif k == OP_R:
        x[a] = False
        z[a] = False


def _apply_error(prog, i, x, z, rec, code, cols):
    """Inject the Pauli (or classical flip) with index ``code`` at instruction ``i``."""
    k = prog.op[i]
    a = prog.q0[i]
    if k == OP_CZ:
        b = prog.q1[i]
        _flip(x, z, a, code >> 2, cols)
        _flip(x, z, b, code & 3, cols)
    elif k == OP_M:
        rec[prog.meas[i], cols] ^= True
    elif k == OP_R:
        x[a, cols] ^= True
    else:
        _flip(x, z, a, code, cols)


def n_paulis(kind: int) -> int:
    """Number of distinct error outcomes of the channel after an instruction."""
    if kind == OP_CZ:
        return 15
    if kind in (OP_M, OP_R):
        return 1
    return 3


def _code_from_index(kind: int, idx):
    # CZ index 0..14 -> two-qubit code 1..15; single-qubit index 0..2 -> 1..3
    if kind in (OP_M, OP_R):
        return np.zeros_like(idx)
    return idx + 1


def sample_flips(prog, rates: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Measurement flips relative to the noiseless reference.

    Parameters
    ----------
    prog : Program
        Compiled instruction arrays.
    rates : ndarray, shape (n_shots, 6)
        Per-shot component rates (already burst-scaled and clipped).
    keys : ndarray of uint64, shape (n_shots,)
        Counter-RNG keys of the shots.

    Returns
    -------
    ndarray of uint8, shape (n_shots, n_meas)
    """
    n = keys.shape[0]
    x = np.zeros((prog.n_qubits, n), dtype=bool)
    z = np.zeros((prog.n_qubits, n), dtype=bool)
    rec = np.zeros((prog.n_meas, n), dtype=bool)
    stuck = np.zeros((max(prog.n_slots, 1), n), dtype=bool)
    for i in range(prog.size):
        k = prog.op[i]
        if k == OP_PAIRFLIP:
            u = _rng.uniform(keys, int(prog.draw[i]))
            hit = u < prog.prob[i]
            code = prog.pauli[i]
            for q in prog.qubits_of_mask(i):
                _flip(x, z, q, code, hit)
            continue
        if k == OP_LEAK:
            slot = prog.q1[i]
            u1 = _rng.uniform(keys, int(prog.draw[i]))
            u2 = _rng.uniform(keys, int(prog.draw[i]) + 1)
            was = stuck[slot]
            stuck[slot] = np.where(was, u1 < prog.prob2[i], u1 < prog.prob[i])
            hit = stuck[slot] & (u2 < 0.5)
            _flip(x, z, prog.q0[i], prog.pauli[i], hit)
            continue
        _apply_gate(prog, i, x, z, rec)
        c = prog.cls[i]
        if c < 0:
            continue
        p = rates[:, c]
        if not p.any():
            continue
        u = _rng.uniform(keys, int(prog.draw[i]))
        hit = u < p
        if not hit.any():
            continue
        m = n_paulis(k)
        cols = np.flatnonzero(hit)
        idx = np.minimum((u[cols] * m / p[cols]).astype(np.int64), m - 1)
        code = _code_from_index(k, idx)
        if k == OP_CZ:
            a, b = prog.q0[i], prog.q1[i]
            x[a, cols] ^= _XBIT[code >> 2]
            z[a, cols] ^= _ZBIT[code >> 2]
            x[b, cols] ^= _XBIT[code & 3]
            z[b, cols] ^= _ZBIT[code & 3]
        elif k == OP_M:
            rec[prog.meas[i], cols] ^= True
        elif k == OP_R:
            x[prog.q0[i], cols] ^= True
        else:
            a = prog.q0[i]
            x[a, cols] ^= _XBIT[code]
            z[a, cols] ^= _ZBIT[code]
    return rec.T.astype(np.uint8)


def propagate_injected(prog, inj_instr: np.ndarray, inj_code: np.ndarray) -> np.ndarray:
    """Noise-free propagation where column ``c`` gets exactly one error
    ``inj_code[c]`` right after instruction ``inj_instr[c]``.

    Returns measurement flips of shape (n_columns, n_meas).
    """
    n = inj_instr.shape[0]
    x = np.zeros((prog.n_qubits, n), dtype=bool)
    z = np.zeros((prog.n_qubits, n), dtype=bool)
    rec = np.zeros((prog.n_meas, n), dtype=bool)
    order = np.argsort(inj_instr, kind="stable")
    bounds = np.searchsorted(inj_instr[order], np.arange(prog.size + 1))
    for i in range(prog.size):
        if prog.op[i] in (OP_PAIRFLIP, OP_LEAK):
            continue
        _apply_gate(prog, i, x, z, rec)
        cols = order[bounds[i]:bounds[i + 1]]
        if cols.size == 0:
            continue
        codes = inj_code[cols]
        for code in np.unique(codes):
            _apply_error(prog, i, x, z, rec, int(code), cols[codes == code])
    return rec.T.astype(np.uint8)
