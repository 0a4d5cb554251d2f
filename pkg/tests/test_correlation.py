import json

import numpy as np
import pytest

from repstab import CorrelatedChannel, NoiseModel, preset
from repstab.codes import CodeSpec, build
from repstab.correlation import (CorrelationAccumulator, CorrelationMatrix, approx_from_moments,
                                 boundary_edge_probs, classify_edges, edge_class, forward_moments, g_fold,
                                 invert_moments, noise_floor, pij_approx, pij_exact)
from repstab.detection import DetectionBatch, extract_detections
from repstab.sampling import sample_shots


def _det(spec, noise, n, seed=0):
    c = build(spec)
    return extract_detections(sample_shots(c, noise, n, seed=seed), c)


def test_forward_model_values():
    xi, xj, xij = forward_moments(0.1, 0.12, 0.02)
    assert xi == pytest.approx(0.116, abs=1e-12)
    assert xj == pytest.approx(0.1352, abs=1e-12)
    assert xij == pytest.approx(0.0276, abs=1e-12)


def test_exact_inversion_value():
    p, p_i, p_j, flagged = invert_moments(0.116, 0.1352, 0.0276)
    assert float(p) == pytest.approx(0.0200, abs=1e-12)
    assert float(p_i) == pytest.approx(0.1, abs=1e-12)
    assert float(p_j) == pytest.approx(0.12, abs=1e-12)
    assert not flagged


def test_approx_value_exceeds_exact():
    a = approx_from_moments(0.116, 0.1352, 0.0276)
    # covariance 0.0119168 over (0.768 * 0.7296)
    assert a == pytest.approx(0.0119168 / 0.5603328, rel=1e-12)
    assert 0.0200 < a <= 0.0200 / (1 - 3 * 0.02) + 1e-6


def test_approx_denominator():
    assert (1 - 2 * 0.11) ** 2 == pytest.approx(0.6084)


def test_round_trip_grid():
    g = np.linspace(0.0, 0.3, 100)
    pi, pj, pij = np.meshgrid(g, g, g, indexing="ij")
    back, bi, bj, flagged = invert_moments(*forward_moments(pi, pj, pij))
    assert not flagged.any()
    assert np.abs(back - pij).max() < 1e-12
    assert np.abs(bi - pi).max() < 1e-12
    assert np.abs(bj - pj).max() < 1e-12


def test_approx_bound_on_exact_inputs():
    g = np.linspace(1e-3, 0.3, 40)
    pi, pj, pij = np.meshgrid(g, g, g, indexing="ij")
    xi, xj, xij = forward_moments(pi, pj, pij)
    exact = invert_moments(xi, xj, xij)[0]
    ratio = approx_from_moments(xi, xj, xij) / exact
    assert (ratio >= 1 - 1e-12).all()
    assert (ratio <= 1 / (1 - 3 * exact) + 1e-6).all()


def test_negative_radicand_flagged_not_dropped():
    # radicand is (1 - 2<x_i>)(1 - 2<x_j>) / den, negative once a node exceeds 0.5
    p, _, _, flagged = invert_moments(0.6, 0.4, 0.3)
    assert flagged and np.isfinite(p)
    p, _, _, flagged = invert_moments(0.1, 0.1, 0.0)
    assert not flagged and p < 0


def test_boundary_back_solve():
    assert g_fold(0.05, 0.05) == pytest.approx(0.095)
    # single edge fully explains the node
    pb = (0.1 - 0.1) / (1 - 2 * 0.1)
    assert pb == 0.0
    p_sig = g_fold(0.05, 0.05)
    assert (0.12 - p_sig) / (1 - 2 * p_sig) == pytest.approx(0.0309, abs=5e-5)


def test_boundary_edge_probs_on_matrix():
    # two-node chain, one round: node (0,0)-(1,0) S edge at 0.05 and a T edge to (0,1)
    n_r, S = 1, 2
    vals = np.zeros((4, 4))
    mean = np.array([0.12, 0.05, 0.05, 0.05])     # time-first: (0,0),(0,1),(1,0),(1,1)
    vals[0, 2] = vals[2, 0] = 0.05
    vals[0, 1] = vals[1, 0] = 0.05
    cm = CorrelationMatrix(vals, mean, vals, 1, n_r, S)
    pb, p_sig, neg = boundary_edge_probs(cm)
    assert p_sig[0, 0] == pytest.approx(0.095)
    assert pb[0, 0] == pytest.approx(0.025 / 0.81)
    assert not neg[0, 0]


def test_noise_floor_values():
    s = noise_floor(0.11, 0.11, 0.0, 76000)
    assert float(s) == pytest.approx(6.6e-4, abs=5e-6)
    assert float(noise_floor(0.11, 0.11, 0.0, 4 * 76000)) == pytest.approx(float(s) / 2)


def test_independent_nodes_within_floor():
    rng = np.random.default_rng(1)
    n = 50000
    ev = (rng.random((n, 4, 3)) < 0.1).astype(np.uint8)
    b = DetectionBatch(ev, np.ones((4, 3), bool), np.zeros((n, 4), np.uint8), np.zeros((n, 4), np.uint8))
    m = pij_exact(b)
    off = m.values[~np.eye(m.n_nodes, dtype=bool)]
    assert np.abs(off).max() < 5 * float(noise_floor(0.1, 0.1, 0, n))
    a = pij_approx(b)
    assert np.abs(a.rendered() - m.rendered()).max() < float(noise_floor(0.1, 0.1, 0, n))


def test_symmetry_and_diagonal(phase_noise):
    m = pij_exact(_det(CodeSpec("rep-phase", 5, 6), phase_noise, 5000))
    assert np.array_equal(m.values, m.values.T)
    assert np.allclose(np.diag(m.values), m.mean)
    assert (np.diag(m.rendered()) == 0).all()
    off = m.values[~np.eye(m.n_nodes, dtype=bool)]
    assert np.isfinite(off).all() and (np.abs(off) < 0.5).all()


def test_orderings_agree(phase_noise):
    det = _det(CodeSpec("rep-phase", 5, 4), phase_noise, 3000)
    a, b = pij_exact(det, "time-first"), pij_exact(det, "space-first")
    assert a.index(2, 3) == 3 + 5 * 2 and b.index(2, 3) == 2 + 4 * 3
    assert np.allclose(a.grid(), b.grid())
    for i in range(a.n_nodes):
        assert a.index(*a.coords(i)) == i and b.index(*b.coords(i)) == i


def test_accumulators_merge(phase_noise):
    det = _det(CodeSpec("rep-phase", 3, 4), phase_noise, 4000)
    whole = CorrelationAccumulator(4, 2).add(det).finalize()
    parts = (CorrelationAccumulator(4, 2).add(det.select(slice(0, 1500)))
             + CorrelationAccumulator(4, 2).add(det.select(slice(1500, None)))).finalize()
    assert np.allclose(whole.values, parts.values, atol=1e-13)


def test_edge_sum_consistency(phase_noise):
    det = _det(CodeSpec("rep-phase", 7, 10), phase_noise, 40000, seed=2)
    m = pij_exact(det)
    _, p_sig, _ = boundary_edge_probs(m)
    defs = m.defs()
    rel = np.abs(p_sig[1:-1, 1:-1] - defs[1:-1, 1:-1]) / defs[1:-1, 1:-1]
    assert np.median(rel) < 0.10


def test_edge_class_table():
    assert edge_class(1, 0) == "S" and edge_class(-1, 0) == "S"
    assert edge_class(0, 1) == "T" and edge_class(0, 3) == "3T" and edge_class(0, 6) is None
    assert edge_class(1, 1) == "ST" and edge_class(-1, 1) == "ST'"
    assert edge_class(3, 0) == "crosstalk"
    assert edge_class(2, 1) is None


def test_classify_edges_ordering_and_json(phase_noise, tmp_path):
    det = _det(CodeSpec("rep-phase", 7, 10), phase_noise, 20000, seed=3)
    rep = classify_edges(pij_exact(det))
    med = rep.medians
    assert med["S"] > med["ST"] and med["T"] > med["ST"]
    # classes are disjoint
    seen = set()
    for k, v in rep.edges.items():
        for a, b, _ in v:
            key = (a, b)
            assert key not in seen
            seen.add(key)
    rep.write_json(tmp_path / "edges.json")
    obj = json.loads((tmp_path / "edges.json").read_text())
    assert obj["counts"]["S"] == len(rep.edges["S"])


def test_depolarizing_has_no_long_memory(phase_noise):
    det = _det(CodeSpec("rep-phase", 5, 10), phase_noise, 30000, seed=4)
    rep = classify_edges(pij_exact(det))
    floor = float(noise_floor(0.11, 0.11, 0, 30000))
    for k in ("2T", "3T", "ST'"):
        assert abs(rep.medians[k]) < 3 * floor


def test_persistent_flip_signature():
    base = preset("phaseflip-device")
    leak = CorrelatedChannel("persistent-flip", 0.02, data_qubit=3, survival=0.7)
    det = _det(CodeSpec("rep-phase", 7, 12), NoiseModel(base.x, correlated=(leak,)), 30000, seed=5)
    rep = classify_edges(pij_exact(det))
    near = {2, 3}
    long_near = [p for a, b, p in rep.edges["2T"] if a[0] in near]
    long_far = [p for a, b, p in rep.edges["2T"] if a[0] not in near]
    assert np.median(long_near) > np.median(long_far) + 5e-3
    by_dt = [np.median([p for a, b, p in rep.edges[k] if a[0] in near]) for k in ("2T", "3T", "4T")]
    assert by_dt[0] > by_dt[1] > by_dt[2]
