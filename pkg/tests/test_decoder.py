import math

import numpy as np
import pytest

from repstab import NoiseModel
from repstab.codes import CodeSpec, build, subsample_maps
from repstab.decoder import (P_FLOOR, DecoderError, EdgeModel, MatchingGraph, build_weights,
                             logical_error_rate, match_exact, mwpm_decode, weights_bootstrap,
                             weights_first_principles, weights_pij, weights_uniform)
from repstab.detection import DetectionBatch, extract_detections
from repstab.sampling import sample_shots


def _det(spec, noise, n, seed=0):
    c = build(spec)
    return extract_detections(sample_shots(c, noise, n, seed=seed), c)


def _empty_batch(n_rounds, n_measure, n=1):
    return DetectionBatch(np.zeros((n, n_rounds + 1, n_measure), np.uint8),
                          np.ones((n_rounds + 1, n_measure), bool),
                          np.zeros((n, n_measure + 1), np.uint8), np.zeros((n, n_measure + 1), np.uint8))


def brute_force_weight(events, graph):
    """Minimum over all ways to pair events with each other or the boundary."""
    dist, _, _, _ = graph._paths()
    b = graph.n_nodes
    ev = list(np.flatnonzero(events))

    def best(rest):
        if not rest:
            return 0.0
        a, others = rest[0], rest[1:]
        out = dist[a, b] + best(others)
        for i, c in enumerate(others):
            out = min(out, dist[a, c] + best(others[:i] + others[i + 1:]))
        return out

    return best(ev)


def test_uniform_weights_equal():
    g = MatchingGraph.from_model(weights_uniform(CodeSpec("rep-phase", 5, 4)), 4)
    assert np.allclose(g.weight, g.weight[0])
    g = MatchingGraph.from_model(weights_uniform(CodeSpec("rep-phase", 5, 4), p=0.1), 4)
    assert g.weight[0] == pytest.approx(2.302585, abs=1e-6)


def test_graph_structure_d3_two_rounds():
    g = MatchingGraph.from_model(weights_uniform(CodeSpec("rep-bit", 3, 2)), 2)
    kinds = {k: int((g.kind == k).sum()) for k in ("S", "T", "ST", "B")}
    # 3 time slices of 2 nodes; one S per slice, 2 T and 1 ST per step, 2 boundary per slice
    assert kinds == {"S": 3, "T": 4, "ST": 2, "B": 6}
    boundary_data = set(g.data[g.kind == "B"].tolist())
    assert boundary_data == {0, 2}


def test_graph_invariants():
    g = MatchingGraph.from_model(weights_uniform(CodeSpec("rep-phase", 7, 5)), 5)
    assert ((g.p > 0) & (g.p <= 0.5)).all() and (g.weight > 0).all()
    assert (g.data[np.isin(g.kind, ["S", "ST"])] >= 0).all()
    assert (g.data[g.kind == "T"] == -1).all()


def test_single_error_mechanisms_are_graph_edges(phase_noise):
    from repstab.sampling import enumerate_single_errors
    spec = CodeSpec("rep-phase", 5, 3)
    g = MatchingGraph.from_model(weights_uniform(spec), 3)
    lk = g.edge_lookup()
    for e in enumerate_single_errors(build(spec)):
        nodes = sorted(g.node(s, t) for s, t in e.nodes)
        if not nodes:
            continue
        key = (-1, nodes[0]) if len(nodes) == 1 else tuple(nodes)
        assert key in lk, (e, key)


def test_zero_events_no_correction():
    g = MatchingGraph.from_model(weights_uniform(4), 3)
    res = mwpm_decode(_empty_batch(3, 4), g, backend="exact")
    assert not res.logical_error.any() and res.correction.sum() == 0 and res.weight[0] == 0


def test_spacelike_pair_corrects_one_qubit():
    b = _empty_batch(3, 4)
    # data qubit 2 flipped mid-circuit and stays flipped until readout
    b.events[0, 2, 1] = b.events[0, 2, 2] = 1
    b.final_bits[0, 2] = 1
    g = MatchingGraph.from_model(weights_uniform(4), 3)
    res = mwpm_decode(b, g, backend="exact", return_pairs=True)
    assert res.correction[0].tolist() == [0, 0, 1, 0, 0]
    assert not res.logical_error[0]
    assert len(res.pairs[0]) == 1


@pytest.mark.parametrize("backend", ["exact", "pymatching"])
def test_flipped_data_qubit_is_corrected(backend):
    b = _empty_batch(4, 4)
    # data qubit 2 flipped before the final readout: events at the last node of measures 1 and 2
    b.final_bits[0, 2] = 1
    b.events[0, 4, 1] = b.events[0, 4, 2] = 1
    g = MatchingGraph.from_model(weights_uniform(4), 4)
    res = mwpm_decode(b, g, backend=backend)
    assert not res.logical_error[0]
    assert res.correction[0].tolist() == [0, 0, 1, 0, 0]


def test_blossom_matches_brute_force():
    rng = np.random.default_rng(0)
    model = EdgeModel(4, rng.uniform(0.01, 0.2, 3), rng.uniform(0.01, 0.2, 4), rng.uniform(0.001, 0.05, 3),
                      rng.uniform(0.01, 0.2, 2))
    g = MatchingGraph.from_model(model, 5)
    for _ in range(150):
        ev = np.zeros(g.n_nodes, np.uint8)
        ev[rng.choice(g.n_nodes, rng.integers(1, 9), replace=False)] = 1
        _, w, _ = match_exact(ev, g)
        assert w == pytest.approx(brute_force_weight(ev, g), abs=1e-9)


def test_backends_agree_on_weight(phase_noise):
    spec = CodeSpec("rep-phase", 5, 6)
    det = _det(spec, phase_noise, 300, seed=1)
    g = MatchingGraph.from_model(weights_first_principles(phase_noise, spec), 6)
    a = mwpm_decode(det, g, backend="exact")
    b = mwpm_decode(det, g, backend="pymatching")
    assert np.allclose(a.weight, b.weight, atol=1e-6)


def test_correction_closure_is_checked():
    b = _empty_batch(2, 2)
    b.final_bits[0, 1] = 1       # parity change with no matching events
    g = MatchingGraph.from_model(weights_uniform(2), 2)
    with pytest.raises(DecoderError):
        mwpm_decode(b, g, backend="exact")


def test_decoding_is_deterministic(phase_noise):
    spec = CodeSpec("rep-phase", 5, 6)
    det = _det(spec, phase_noise, 200, seed=2)
    g = MatchingGraph.from_model(weights_uniform(spec), 6)
    a = mwpm_decode(det, g, backend="exact", return_pairs=True)
    b = mwpm_decode(det, g, backend="exact", return_pairs=True)
    assert a.pairs == b.pairs and np.array_equal(a.correction, b.correction)


def test_uniform_weights_depend_on_hop_count():
    rng = np.random.default_rng(3)
    g1 = MatchingGraph.from_model(weights_uniform(4, p=0.05), 4)
    g2 = MatchingGraph.from_model(weights_uniform(4, p=0.01), 4)
    d1, _, _, _ = g1._paths()
    d2, _, _, _ = g2._paths()
    hops1 = d1 / -math.log(0.05)
    assert np.allclose(hops1, d2 / -math.log(0.01))
    for _ in range(20):
        ev = np.zeros(g1.n_nodes, np.uint8)
        ev[rng.choice(g1.n_nodes, 4, replace=False)] = 1
        assert match_exact(ev, g1)[1] / -math.log(0.05) == pytest.approx(match_exact(ev, g2)[1] / -math.log(0.01))


def test_zero_noise_logical_rate():
    spec = CodeSpec("rep-bit", 5, 5)
    det = _det(spec, NoiseModel(), 100)
    p, se = logical_error_rate(det, MatchingGraph.from_model(weights_uniform(spec), 5))
    assert p == 0 and se == 0


def test_logical_rate_standard_error(phase_noise):
    spec = CodeSpec("rep-phase", 3, 10)
    det = _det(spec, phase_noise, 4000, seed=4)
    p, se = logical_error_rate(det, MatchingGraph.from_model(weights_uniform(spec), 10))
    assert 0 < p < 0.5
    assert se == pytest.approx(math.sqrt(p * (1 - p) / 4000))


def test_dimension_mismatch():
    with pytest.raises(DecoderError):
        mwpm_decode(_empty_batch(3, 4), MatchingGraph.from_model(weights_uniform(4), 4))


def test_first_principles_measurement_only():
    spec = CodeSpec("rep-phase", 5, 4)
    m = weights_first_principles(NoiseModel.from_rates(M=0.01), spec)
    assert np.allclose(m.T, 0.01)
    assert np.allclose(m.ST, P_FLOOR)
    # final data readout errors are spacelike in the last slice only, averaged over 5 slices
    assert np.allclose(m.S, 0.01 / 5) and np.allclose(m.B, 0.01 / 5)


def test_first_principles_spacelike_from_dd(phase_noise):
    spec = CodeSpec("rep-phase", 7, 6)
    full = weights_first_principles(phase_noise, spec)
    no_dd = weights_first_principles(phase_noise.with_rates({"DD": 0.0}), spec)
    dd_only = weights_first_principles(NoiseModel.from_rates(DD=phase_noise.x["DD"]), spec)
    assert np.median(dd_only.S) > np.median(no_dd.S)
    assert np.median(full.S) > np.median(full.ST)


def test_bootstrap_degenerate_timelike_only():
    n, R, S = 200, 4, 4
    b = _empty_batch(R, S, n)
    b.events[:100, 1, 2] = b.events[:100, 2, 2] = 1
    m = weights_bootstrap(b)
    assert np.allclose(m.S, P_FLOOR) and np.allclose(m.ST, P_FLOOR)
    assert m.T[2] > m.T[0]


def test_bootstrap_deterministic(phase_noise):
    det = _det(CodeSpec("rep-phase", 5, 6), phase_noise, 500, seed=5)
    a, b = weights_bootstrap(det), weights_bootstrap(det)
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("S", "T", "ST", "B"))


def test_pij_zero_noise_at_floor():
    det = _det(CodeSpec("rep-phase", 5, 4), NoiseModel(), 200)
    m = weights_pij(det)
    for k in ("S", "T", "ST", "B"):
        assert np.allclose(getattr(m, k), P_FLOOR)


def test_pij_recovers_planted_edges():
    # plant independent edge flips on a d=5, 4-round graph and recover them
    rng = np.random.default_rng(7)
    truth = EdgeModel(4, np.array([0.03, 0.02, 0.04]), np.array([0.025, 0.03, 0.02, 0.035]),
                      np.array([0.005, 0.008, 0.004]), np.array([0.03, 0.02]))
    g = MatchingGraph.from_model(truth, 4)
    n = 60000
    fire = rng.random((n, g.u.size)) < g.p
    ev = np.zeros((n, g.n_nodes), np.uint8)
    for e in range(g.u.size):
        ev[:, g.u[e]] ^= fire[:, e]
        if g.v[e] >= 0:
            ev[:, g.v[e]] ^= fire[:, e]
    b = DetectionBatch(ev.reshape(n, 5, 4), np.ones((5, 4), bool), np.zeros((n, 5), np.uint8),
                       np.zeros((n, 5), np.uint8))
    m = weights_pij(b)
    # time-averaged over 5 slices, so the per-edge floor shrinks accordingly
    tol = 2 * 0.2 / np.sqrt(n)
    for k in ("S", "T", "ST", "B"):
        assert np.abs(getattr(m, k) - getattr(truth, k)).max() < max(tol, 0.15 * getattr(truth, k).max())


def test_weightings_agree_with_first_principles(phase_noise):
    spec = CodeSpec("rep-phase", 7, 10)
    det = _det(spec, phase_noise, 40000, seed=6)
    fp = weights_first_principles(phase_noise, spec).class_medians()
    pij = weights_pij(det).class_medians()
    for k in ("S", "T", "ST"):
        assert fp[k] == pytest.approx(pij[k], rel=0.15), k


def test_build_weights_dispatch(phase_noise):
    spec = CodeSpec("rep-phase", 7, 4)
    smap = subsample_maps(7, 3)[1]
    assert build_weights("uniform", spec, smap=smap).n_measure == 2
    assert build_weights("first-principles", spec, noise=phase_noise, smap=smap).n_measure == 2
    with pytest.raises(ValueError):
        build_weights("pij", spec)
    with pytest.raises(ValueError):
        build_weights("magic", spec)
