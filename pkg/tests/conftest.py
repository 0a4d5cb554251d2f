import numpy as np
import pytest

from repstab import preset
from repstab.codes import CodeSpec, build
from repstab.tableau import Tableau

PAULI = "IXYZ"


def run_with_injection(circuit, init_bits, seed, inj=None):
    """Tableau run of ``circuit`` with an optional single error.

    ``inj`` is ``(instruction, code)`` with instruction numbering equal to the
    flattened op order and codes as used by the frame simulator.
    """
    bits = np.zeros(circuit.qubit_count, dtype=bool)
    for q, b in zip(circuit.data_qubits, init_bits):
        bits[q] = bool(b)
    rng = np.random.default_rng(seed)
    coin = lambda: int(rng.integers(2))  # noqa: E731
    tab = Tableau(circuit.qubit_count, bits)
    out = []
    i = 0
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
            if inj is not None and inj[0] == i:
                code = inj[1]
                if op.kind == "M":
                    out[-1] ^= 1
                elif op.kind == "R":
                    tab.apply_pauli(a, "X")
                elif op.kind == "CZ":
                    if code >> 2:
                        tab.apply_pauli(a, PAULI[code >> 2])
                    if code & 3:
                        tab.apply_pauli(op.qubits[1], PAULI[code & 3])
                else:
                    tab.apply_pauli(a, PAULI[code])
            i += 1
    return np.array(out, dtype=np.uint8)


@pytest.fixture
def phase_noise():
    return preset("phaseflip-device")


@pytest.fixture
def bit_noise():
    return preset("bitflip-device")


@pytest.fixture
def small_phase():
    return CodeSpec("rep-phase", 5, 6)


@pytest.fixture
def small_circuit(small_phase):
    return build(small_phase)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {detail}")
