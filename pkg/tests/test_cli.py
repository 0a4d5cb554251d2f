import csv
import json

from repstab.archive import read_detections, read_shots, write_shots
from repstab.cli import RunManifest, main, manifest_path


def run(*argv):
    return main([str(a) for a in argv])


def simulate(tmp_path, name="s.rstb", *extra, family="rep-phase", d=3, rounds=4, shots=200):
    out = tmp_path / name
    rc = run("simulate", "--family", family, "--distance", d, "--rounds", rounds,
             "--shots", shots, "-q", "-o", out, *extra)
    assert rc == 0
    return out


def test_zero_noise_archive_has_no_events(tmp_path):
    out = simulate(tmp_path, "z.rstb", "--noise", "{}", "--seed", 1, rounds=2, shots=10)
    det = tmp_path / "z.det"
    assert run("detect", out, "-o", det, "-q") == 0
    assert read_detections(det).events.sum() == 0


def test_same_seed_byte_identical(tmp_path):
    a = simulate(tmp_path, "a.rstb", "--seed", 5)
    b = simulate(tmp_path, "b.rstb", "--seed", 5)
    c = simulate(tmp_path, "c.rstb", "--seed", 6)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_seed_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("REPSTAB_SEED", "9")
    env = simulate(tmp_path, "env.rstb")
    flag = simulate(tmp_path, "flag.rstb", "--seed", 9)
    other = simulate(tmp_path, "other.rstb", "--seed", 3)
    assert env.read_bytes() == flag.read_bytes()
    assert json.loads(manifest_path(env).read_text())["seed"] == 9
    monkeypatch.setenv("REPSTAB_SEED", "3")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 9}))
    assert simulate(tmp_path, "cfg.rstb", "--config", cfg).read_bytes() == other.read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"family": "rep-bit", "distance": 5, "rounds": 3, "shots": 50, "seed": 2}))
    out = tmp_path / "x.rstb"
    assert run("simulate", "--config", cfg, "--shots", 70, "-q", "-o", out) == 0
    man = json.loads(manifest_path(out).read_text())
    assert man["shots"] == 70 and man["spec"]["family"] == "rep-bit" and man["spec"]["distance"] == 5


def test_manifest_digests_verify(tmp_path):
    out = simulate(tmp_path, "m.rstb", "--seed", 1)
    man = RunManifest.read(manifest_path(out))
    assert man.verify() == []
    out.write_bytes(out.read_bytes()[:-1] + b"\x00")
    assert man.verify() != []


def test_commands_are_idempotent(tmp_path):
    a = simulate(tmp_path, "i1.rstb", "--seed", 4)
    b = simulate(tmp_path, "i2.rstb", "--seed", 4)
    ma = json.loads(manifest_path(a).read_text())
    mb = json.loads(manifest_path(b).read_text())
    for m in (ma, mb):
        m.pop("created")
        m.pop("timings")
        m["outputs"] = sorted(m["outputs"].values())
    assert ma == mb


def test_archive_round_trip_through_files(tmp_path):
    out = simulate(tmp_path, "r.rstb", "--seed", 2)
    shots = read_shots(out)
    write_shots(tmp_path / "r2.rstb", shots)
    assert (tmp_path / "r2.rstb").read_bytes() == out.read_bytes()


def test_validation_exit_codes(tmp_path):
    assert run("simulate", "--family", "rep-phase", "--distance", 4, "--rounds", 3, "-q",
               "-o", tmp_path / "bad.rstb") == 2
    assert run("simulate", "--noise", "no-such-preset", "-q", "-o", tmp_path / "bad.rstb") == 2
    assert run("detect", tmp_path / "missing.rstb", "-o", tmp_path / "x.det") == 4
    assert run("project", "--lambda", 0.9) == 2


def test_empty_archive_rejected(tmp_path):
    empty = tmp_path / "empty.rstb"
    empty.write_bytes(b"")
    assert run("detect", empty, "-o", tmp_path / "e.det") == 2
    outdir = tmp_path / "pipe"
    assert run("pipeline", "--archive", empty, "--outdir", outdir, "-q") == 2
    assert not outdir.exists()


def test_detect_with_burst_filter(tmp_path):
    noise = json.dumps({"dd": 0.041, "cz": 0.0066, "m": 0.019, "r": 0.005, "h": 0.0011, "i": 0.00058,
                        "bursts": {"rate": 0.005, "amplitude": 20, "decay_shots": 30}})
    out = simulate(tmp_path, "b.rstb", "--noise", noise, "--seed", 3, d=7, rounds=10, shots=4000)
    rep = tmp_path / "bursts.json"
    defs = tmp_path / "def.json"
    assert run("detect", out, "-o", tmp_path / "b.det", "--filter-bursts", "5,30",
               "--burst-report", rep, "--def-report", defs, "-q") == 0
    report = json.loads(rep.read_text())
    assert report["removed_ranges"]
    assert len(read_detections(tmp_path / "b.det")) < 4000
    assert 0 < json.loads(defs.read_text())["bulk"] < 0.5


def test_correlate_decode_fit_project(tmp_path):
    dets = []
    for n in (11, 13, 16):
        out = simulate(tmp_path, f"p{n}.rstb", "--seed", 1, d=5, rounds=n, shots=1500)
        det = tmp_path / f"p{n}.det"
        assert run("detect", out, "-o", det, "-q") == 0
        dets.append(det)
    pij = tmp_path / "pij.csv"
    edges = tmp_path / "edges.json"
    assert run("correlate", dets[0], "-o", pij, "--edges", edges, "-q") == 0
    rows = list(csv.DictReader(pij.open()))
    assert set(rows[0]) == {"i", "j", "p_ij", "sigma"}
    assert "S" in json.loads(edges.read_text())["medians"]
    table = tmp_path / "logical.csv"
    assert run("decode", *dets, "-o", table, "--weights", "first-principles",
               "--noise", "phaseflip-device", "--distances", "3,5", "-q") == 0
    rows = list(csv.DictReader(table.open()))
    assert {r["d"] for r in rows} == {"3", "5"}
    lam = tmp_path / "lambda.json"
    assert run("fit", table, "-o", lam, "--exclude", "", "--min-rounds", 10, "-q") == 0
    obj = json.loads(lam.read_text())
    assert obj["lambda"] > 1
    proj = tmp_path / "proj.json"
    assert run("project", "--lambda", 10, "-o", proj) == 0
    assert json.loads(proj.read_text())["distance"] == 23
    assert json.loads(proj.read_text())["qubits"] == 1058


def test_pipeline_summary(tmp_path):
    outdir = tmp_path / "out"
    rc = run("pipeline", "--family", "rep-phase", "--distance", 5, "--rounds", "11,13,16",
             "--shots", 1500, "--distances", "3,5", "--exclude", "", "--seed", 2, "--outdir", outdir, "-q")
    assert rc == 0
    rows = list(csv.DictReader((outdir / "summary.csv").open()))
    assert [r["weighting"] for r in rows] == ["uniform", "bootstrap", "pij", "first-principles"]
    for name in ("def.json", "pij.csv", "edges.json", "lambda.json", "manifest.json"):
        assert (outdir / name).exists()
    assert RunManifest.read(outdir / "manifest.json").verify() == []


def test_pipeline_surface2(tmp_path):
    outdir = tmp_path / "s2"
    rc = run("pipeline", "--family", "surface2", "--distance", 2, "--rounds", "1,2,3,4",
             "--shots", 2000, "--seed", 2, "--outdir", outdir, "-q")
    assert rc == 0
    st = json.loads((outdir / "postselect.json").read_text())
    assert 0.5 < st["retention_per_round"] < 0.9
