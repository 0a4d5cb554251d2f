"""Command-line pipeline: simulate, detect, correlate, decode, fit, budget, project.

Every command writes a JSON manifest next to its main output recording the
resolved configuration, timings and SHA-256 digests of the files written.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (FitError, LambdaRun, error_budget, budget_simulator, fit_eps_per_round,
                       fit_lambda, overhead_projection, postselect_stats, subsampled_sweep)
from .archive import ArchiveError, read_detections, read_shots, write_detections, write_shots
from .circuit import NoiseModel, PRESETS, preset
from .codes import CodeSpec, build, check_circuit_counts
from .correlation import CorrelationAccumulator, classify_edges
from .decoder import WEIGHTINGS, DecoderError
from .detection import DetectionBatch, burst_filter, def_report, extract_detections
from .sampling import Sampler, block_init_bits, mechanism_table

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ValidationError(ValueError):
    pass


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (FitError, DecoderError, FloatingPointError, np.linalg.LinAlgError, RuntimeError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1


# -- manifests -------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def noise_hash(noise: NoiseModel) -> str:
    return hashlib.sha256(json.dumps(noise.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    spec: dict | None = None
    noise: dict | None = None
    noise_hash: str | None = None
    seed: int | None = None
    shots: int | None = None
    block: int | None = None
    settings: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    tool: str = "repstab"
    version: str = __version__
    created: float = field(default_factory=time.time)

    def set_noise(self, noise: NoiseModel) -> None:
        self.noise = noise.to_json()
        self.noise_hash = noise_hash(noise)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 4)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self) -> list[str]:
        """Output files whose current digest no longer matches."""
        return [p for p, d in self.outputs.items() if not Path(p).exists() or sha256_file(p) != d]


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


# -- config resolution -------------------------------------------------------------

def load_noise(value) -> NoiseModel:
    """Preset name, JSON file path, inline JSON or an already parsed mapping."""
    if isinstance(value, NoiseModel):
        return value
    if isinstance(value, dict):
        return NoiseModel.from_json(value)
    if value in PRESETS:
        return preset(value)
    if isinstance(value, str) and value.lstrip().startswith("{"):
        return NoiseModel.from_json(value)
    p = Path(value)
    if p.exists():
        return NoiseModel.from_json(p.read_text())
    raise ValidationError(f"noise {value!r} is neither a preset ({', '.join(PRESETS)}) nor a JSON file")


def load_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: {exc}") from exc


def resolve(args, cfg: dict, key: str, default=None):
    """CLI flag, then config file, then default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    return cfg.get(key, default)


def resolve_seed(args, cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("REPSTAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"REPSTAB_SEED must be an integer, got {env!r}") from exc
    return int(cfg.get("seed", 0))


def parse_filter(value) -> tuple[float, int] | None:
    if value in (None, "", False):
        return None
    if value is True:
        return 5.0, 30
    parts = str(value).split(",")
    try:
        k = float(parts[0]) if parts[0] else 5.0
        cd = int(parts[1]) if len(parts) > 1 and parts[1] else 30
    except ValueError as exc:
        raise ValidationError(f"--filter-bursts expects K[,COOLDOWN], got {value!r}") from exc
    return k, cd


def int_list(value) -> list[int]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    out = []
    for part in str(value).split(","):
        if ":" in part:
            a, b = part.split(":")[:2]
            step = int(part.split(":")[2]) if part.count(":") == 2 else 1
            out.extend(range(int(a), int(b) + 1, step))
        elif part:
            out.append(int(part))
    return out


def spec_from(args, cfg: dict, rounds: int | None = None) -> CodeSpec:
    family = resolve(args, cfg, "family", "rep-phase")
    dist = int(resolve(args, cfg, "distance", 2 if family == "surface2" else 11))
    r = rounds if rounds is not None else resolve(args, cfg, "rounds", 10)
    if isinstance(r, (list, str)):
        r = max(int_list(r))
    return CodeSpec(family, dist, int(r), resolve(args, cfg, "init", "random"),
                    resolve(args, cfg, "basis", "Z"))


# -- loading archives with their manifests -----------------------------------------

def load_shot_archive(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise ValidationError(f"{path} has no manifest ({mpath.name}); cannot recover the code spec")
    man = RunManifest.read(mpath)
    spec = CodeSpec.from_json(man.spec)
    data = path.read_bytes()
    if len(data) == 0:
        raise ArchiveError(f"{path} is empty")
    start = int(man.settings.get("start", 0))
    shots = read_shots(path, start=start)
    if len(shots) == 0:
        raise ValidationError(f"{path} contains no shots")
    if spec.init == "random":
        block = man.block or 1000
        blocks = shots.shot_index // block
        ub, inv = np.unique(blocks, return_inverse=True)
        shots.init_bits = block_init_bits(man.seed, ub, spec.n_data)[np.asarray(inv).reshape(-1)]
    else:
        shots.init_bits = np.broadcast_to(np.array([int(c) for c in spec.init], dtype=np.uint8),
                                          (len(shots), spec.n_data)).copy()
    return shots, spec, man


def load_detection_archive(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.stat().st_size == 0:
        raise ArchiveError(f"{path} is empty")
    det = read_detections(path)
    if len(det) == 0:
        raise ValidationError(f"{path} contains no shots")
    mpath = manifest_path(path)
    man = RunManifest.read(mpath) if mpath.exists() else None
    spec = CodeSpec.from_json(man.spec) if man and man.spec else None
    return det, spec, man


# -- commands ------------------------------------------------------------------------

def simulate(spec: CodeSpec, noise: NoiseModel, shots: int, seed: int, block: int = 1000,
             start: int = 0):
    circuit = build(spec)
    check_circuit_counts(circuit, spec)
    init = spec.init if spec.init != "random" else None
    return Sampler(circuit, noise, coin_seed=seed).sample(shots, seed, init=init, block=block, start=start)


def cmd_simulate(args, cfg) -> int:
    spec = spec_from(args, cfg)
    noise = load_noise(resolve(args, cfg, "noise", "phaseflip-device"))
    seed = resolve_seed(args, cfg)
    shots = int(resolve(args, cfg, "shots", 1000))
    block = int(resolve(args, cfg, "block", 1000))
    if shots < 1:
        raise ValidationError("shots must be >= 1")
    out = Path(args.out)
    man = RunManifest("simulate", spec.to_json(), seed=seed, shots=shots, block=block,
                      settings={"start": 0})
    man.set_noise(noise)
    with man.stage("simulate"):
        batch = simulate(spec, noise, shots, seed, block)
    with man.stage("write"):
        write_shots(out, batch)
    man.add_output(out)
    man.write(manifest_path(out))
    if not args.quiet:
        print(f"wrote {shots} shots of {spec.family} d={spec.distance} rounds={spec.rounds} to {out}")
    return EXIT_OK


def cmd_detect(args, cfg) -> int:
    man = RunManifest("detect")
    with man.stage("read"):
        shots, spec, src = load_shot_archive(args.archive)
    man.spec, man.noise, man.noise_hash = src.spec, src.noise, src.noise_hash
    man.seed, man.block = src.seed, src.block
    man.add_input(args.archive)
    with man.stage("detect"):
        det = extract_detections(shots, spec)
    filt = parse_filter(resolve(args, cfg, "filter_bursts"))
    result = None
    if filt:
        with man.stage("filter"):
            det, result = burst_filter(det, k_sigma=filt[0], cooldown=filt[1])
        man.settings["filter_bursts"] = list(filt)
    man.shots = len(det)
    out = Path(args.out)
    report = def_report(det)
    write_detections(out, det)
    man.add_output(out)
    if args.def_report:
        Path(args.def_report).write_text(json.dumps(report.to_json(), indent=1))
        man.add_output(args.def_report)
    if result is not None and args.burst_report:
        Path(args.burst_report).write_text(json.dumps(burst_json(result), indent=1))
        man.add_output(args.burst_report)
    man.write(manifest_path(out))
    if not args.quiet:
        msg = f"bulk DEF {report.bulk:.4f} over {len(det)} shots"
        if result is not None:
            msg += f"; burst filter removed {result.removed_fraction:.1%} in {len(result.removed_ranges)} ranges"
        print(msg)
    return EXIT_OK


def burst_json(result) -> dict:
    return {"threshold": result.threshold, "removed_fraction": result.removed_fraction,
            "removed_ranges": [list(map(int, r)) for r in result.removed_ranges],
            "n_flagged": int(result.flagged.sum())}


def correlate(det: DetectionBatch, order: str = "time-first", method: str = "exact"):
    acc = CorrelationAccumulator(det.n_rounds, det.n_measure, order, det.mask)
    acc.add(det)
    return acc.finalize(method)


def cmd_correlate(args, cfg) -> int:
    man = RunManifest("correlate")
    with man.stage("read"):
        det, spec, src = load_detection_archive(args.archive)
    man.add_input(args.archive)
    if spec is not None:
        man.spec = spec.to_json()
    order = resolve(args, cfg, "order", "time-first")
    method = resolve(args, cfg, "method", "exact")
    man.settings.update(order=order, method=method)
    with man.stage("correlate"):
        mat = correlate(det, order, method)
    out = Path(args.out)
    mat.to_csv(out)
    man.add_output(out)
    if args.edges:
        with man.stage("classify"):
            classify_edges(mat).write_json(args.edges)
        man.add_output(args.edges)
    man.shots = len(det)
    man.write(manifest_path(out))
    if not args.quiet:
        print(f"wrote {mat.n_nodes}x{mat.n_nodes} p_ij matrix to {out}")
    return EXIT_OK


LOGICAL_FIELDS = ["d", "rounds", "n_shots", "n_maps", "p_error", "se"]


def logical_rows(run: LambdaRun) -> list[dict]:
    rows = []
    for d, (ns, ps, ses) in sorted(run.curves().items()):
        for n, p, s in zip(ns, ps, ses):
            arr = run.outcomes[d][int(n)]
            rows.append({"d": int(d), "rounds": int(n), "n_shots": int(arr.shape[1]),
                         "n_maps": int(arr.shape[0]), "p_error": float(p), "se": float(s)})
    return rows


def write_rows(path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def decode_runs(parent: dict, spec: CodeSpec, distances, weighting: str, noise=None,
                train: DetectionBatch | None = None) -> LambdaRun:
    if weighting not in WEIGHTINGS:
        raise ValidationError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")
    mech = None
    if weighting == "first-principles":
        if noise is None:
            raise ValidationError("first-principles weights need the noise model (--noise)")
        mech = {n: mechanism_table(build(spec.with_rounds(n))) for n in parent}
    if weighting in ("bootstrap", "pij") and train is None:
        train = parent[max(parent)]
    out = subsampled_sweep(parent, spec, distances, weighting, noise=noise, train=train, mechanisms=mech)
    return LambdaRun(out)


def cmd_decode(args, cfg) -> int:
    man = RunManifest("decode")
    parent, spec, noise = {}, None, None
    with man.stage("read"):
        for path in args.archives:
            det, s, src = load_detection_archive(path)
            if s is None:
                raise ValidationError(f"{path} has no manifest with a code spec")
            if spec is not None and (s.family, s.distance) != (spec.family, spec.distance):
                raise ValidationError("all archives must share family and distance")
            spec = s
            parent[det.n_rounds] = det
            if src and src.noise:
                noise = NoiseModel.from_json(src.noise)
            man.add_input(path)
    if getattr(args, "noise", None):
        noise = load_noise(args.noise)
    man.spec = spec.to_json()
    out = Path(args.out)
    if spec.family == "surface2":
        with man.stage("postselect"):
            ps = postselect_stats(parent, spec)
        rows = [{"rounds": int(n), "n_shots": int(k), "retained": float(r), "p_error": float(p), "se": float(s)}
                for n, k, r, p, s in zip(ps.rounds, ps.n_shots, ps.retained, ps.logical_error, ps.logical_se)]
        write_rows(out, rows, ["rounds", "n_shots", "retained", "p_error", "se"])
        if not args.quiet:
            print(f"retention per round {ps.retention_per_round:.4f}; "
                  f"post-selected error per round {ps.error_per_round:.2e}")
    else:
        weighting = resolve(args, cfg, "weights", "pij")
        distances = int_list(resolve(args, cfg, "distances")) or [spec.distance]
        train = None
        if args.train:
            train, _, _ = load_detection_archive(args.train)
            man.add_input(args.train)
        man.settings.update(weights=weighting, distances=distances)
        with man.stage("decode"):
            run = decode_runs(parent, spec, distances, weighting, noise, train)
        write_rows(out, logical_rows(run), LOGICAL_FIELDS)
        if not args.quiet:
            for r in logical_rows(run):
                print(f"d={r['d']} rounds={r['rounds']} P_error={r['p_error']:.5f} +- {r['se']:.5f}")
    man.add_output(out)
    man.write(manifest_path(out))
    return EXIT_OK


def fit_rows(rows: list[dict], exclude=(3,), min_rounds: int = 10):
    by_d: dict[int, list] = {}
    for r in rows:
        by_d.setdefault(int(r["d"]), []).append((int(r["rounds"]), float(r["p_error"]), float(r["se"])))
    ds, eps, ses, ns = [], [], [], []
    for d in sorted(by_d):
        pts = sorted(by_d[d])
        n, p, s = (np.array(v) for v in zip(*pts))
        if (n > min_rounds).sum() < 3:
            continue
        e, se = fit_eps_per_round(n, p, s, min_rounds)
        ds.append(d)
        eps.append(e)
        ses.append(se)
        ns.extend(n[n > min_rounds].tolist())
    if not ds:
        raise FitError(f"no distance has 3 or more round counts above {min_rounds}")
    return fit_lambda(ds, eps, ses, exclude, (int(min(ns)), int(max(ns))))


def cmd_fit(args, cfg) -> int:
    man = RunManifest("fit")
    rows = []
    for path in args.tables:
        rows.extend(read_rows(path))
        man.add_input(path)
    if not rows:
        raise ValidationError("no logical-error rows to fit")
    exclude = int_list(resolve(args, cfg, "exclude", "3"))
    min_rounds = int(resolve(args, cfg, "min_rounds", 10))
    with man.stage("fit"):
        fit = fit_rows(rows, exclude, min_rounds)
    out = Path(args.out)
    fit.write_json(out)
    man.add_output(out)
    man.write(manifest_path(out))
    if not args.quiet:
        print(f"Lambda = {fit.lam:.3f} +- {fit.lam_err:.3f}; C = {fit.C:.4f}; 1/Lambda = {fit.inv_lambda:.4f}")
    return EXIT_OK


def cmd_budget(args, cfg) -> int:
    family = resolve(args, cfg, "family", "rep-phase")
    if family == "surface2":
        raise ValidationError("budgets are computed for repetition codes")
    default_noise = "bitflip-device" if family == "rep-bit" else "phaseflip-device"
    noise = load_noise(resolve(args, cfg, "noise", default_noise))
    seed = resolve_seed(args, cfg)
    shots = int(resolve(args, cfg, "shots", 20000))
    max_shots = int(resolve(args, cfg, "max_shots", 4 * shots))
    man = RunManifest("budget", {"family": family}, seed=seed)
    man.set_noise(noise)
    man.settings.update(max_shots=max_shots)
    progress = None if args.quiet else (lambda m: print(m, file=sys.stderr))
    with man.stage("budget"):
        b = error_budget(noise, family, budget_simulator(family), shots=shots, max_shots=max_shots,
                         seed=seed, progress=progress, workers=args.workers)
    man.shots = b.shots
    out = Path(args.out)
    b.write_json(out)
    man.add_output(out)
    man.write(manifest_path(out))
    if not args.quiet:
        for r in b.components:
            print(f"{r.name:>3} rate={r.rate:.2e} weight={r.weight:6.2f} contribution={r.contribution:.4f} ({r.pct:.0f}%)")
        print(f"total {b.total:.4f}; direct {b.direct:.4f}; stray {b.stray:+.4f}")
    return EXIT_OK


def cmd_project(args, cfg) -> int:
    lam = args.lam
    if lam is None and args.fit:
        lam = json.loads(Path(args.fit).read_text())["lambda"]
    if lam is None:
        raise ValidationError("give --lambda or --fit lambda.json")
    d, q = overhead_projection(float(lam), float(args.target))
    # no d >= 3 surface-code simulator here: the input Lambda is a repetition-code value
    result = {"lambda": float(lam), "target": float(args.target), "distance": d, "qubits": q,
              "estimate_only": True}
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1))
    print(json.dumps(result))
    return EXIT_OK


# -- pipeline ------------------------------------------------------------------------

def cmd_pipeline(args, cfg) -> int:
    """simulate (or read) -> detect -> correlate -> decode under each weighting -> fit."""
    seed = resolve_seed(args, cfg)
    weightings = resolve(args, cfg, "weights", list(WEIGHTINGS))
    if isinstance(weightings, str):
        weightings = [w for w in weightings.split(",") if w]
    bad = [w for w in weightings if w not in WEIGHTINGS]
    if bad:
        raise ValidationError(f"unknown weightings {bad}")
    filt = parse_filter(resolve(args, cfg, "filter_bursts"))
    order = resolve(args, cfg, "order", "time-first")
    outdir = Path(resolve(args, cfg, "outdir", "repstab-out"))
    man = RunManifest("pipeline", seed=seed)

    # validate and load every input before anything is written
    batches: dict[int, DetectionBatch] = {}
    archives = cfg.get("archives") or {}
    if args.archive:
        archives = {str(i): p for i, p in enumerate(args.archive)}
    noise = None
    if archives:
        spec = None
        with man.stage("read"):
            for path in archives.values():
                shots, s, src = load_shot_archive(path)
                spec = s
                batches[s.rounds] = extract_detections(shots, s)
                if src.noise:
                    noise = NoiseModel.from_json(src.noise)
                man.add_input(path)
        if resolve(args, cfg, "noise"):
            noise = load_noise(resolve(args, cfg, "noise"))
    else:
        noise = load_noise(resolve(args, cfg, "noise", "phaseflip-device"))
        rounds = int_list(resolve(args, cfg, "rounds", "12,16,20,25,30,40,50"))
        spec = spec_from(args, cfg, rounds=max(rounds))
        shots = int(resolve(args, cfg, "shots", 2000))
        if shots < 1:
            raise ValidationError("shots must be >= 1")
        with man.stage("simulate"):
            for n in rounds:
                sb = simulate(spec.with_rounds(n), noise, shots, seed)
                batches[n] = extract_detections(sb, spec.with_rounds(n))
        man.shots = shots
    man.spec = spec.to_json()
    if noise is not None:
        man.set_noise(noise)

    outdir.mkdir(parents=True, exist_ok=True)
    summary = {}
    if filt:
        with man.stage("filter"):
            reports = {}
            for n in sorted(batches):
                batches[n], res = burst_filter(batches[n], k_sigma=filt[0], cooldown=filt[1])
                reports[n] = burst_json(res)
        p = outdir / "bursts.json"
        p.write_text(json.dumps(reports, indent=1))
        man.add_output(p)
        man.settings["filter_bursts"] = list(filt)
    longest = batches[max(batches)]
    with man.stage("detect"):
        rep = def_report(longest)
    p = outdir / "def.json"
    p.write_text(json.dumps(rep.to_json(), indent=1))
    man.add_output(p)
    summary["bulk_def"] = rep.bulk

    with man.stage("correlate"):
        mat = correlate(longest, order)
        edges = classify_edges(mat)
    mat.to_csv(outdir / "pij.csv")
    edges.write_json(outdir / "edges.json")
    man.add_output(outdir / "pij.csv")
    man.add_output(outdir / "edges.json")

    if spec.family == "surface2":
        with man.stage("postselect"):
            ps = postselect_stats(batches, spec)
        p = outdir / "postselect.json"
        p.write_text(json.dumps(ps.to_json(), indent=1))
        man.add_output(p)
    else:
        distances = int_list(resolve(args, cfg, "distances")) or list(range(3, spec.distance + 1, 2))
        exclude = int_list(resolve(args, cfg, "exclude", "3"))
        man.settings["exclude"] = list(exclude)
        table = []
        for w in weightings:
            with man.stage(f"decode:{w}"):
                run = decode_runs(batches, spec, distances, w, noise)
            rows = logical_rows(run)
            p = outdir / f"logical_{w}.csv"
            write_rows(p, rows, LOGICAL_FIELDS)
            man.add_output(p)
            with man.stage(f"fit:{w}"):
                fit = fit_rows(rows, exclude)
            p = outdir / f"lambda_{w}.json"
            fit.write_json(p)
            man.add_output(p)
            if w == "pij" or (w == weightings[0] and "pij" not in weightings):
                fit.write_json(outdir / "lambda.json")
                man.add_output(outdir / "lambda.json")
            table.append({"weighting": w, "C": fit.C, "C_err": fit.C_err,
                          "lambda": fit.lam, "lambda_err": fit.lam_err})
        p = outdir / "summary.csv"
        write_rows(p, table, ["weighting", "C", "C_err", "lambda", "lambda_err"])
        man.add_output(p)
        if not args.quiet:
            print(f"{'weighting':<18}{'C':>10}{'Lambda':>16}")
            for r in table:
                print(f"{r['weighting']:<18}{r['C']:>10.4f}{r['lambda']:>10.3f} +- {r['lambda_err']:.3f}")
    man.write(outdir / "manifest.json")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def _spec_args(p):
    p.add_argument("--family", choices=["rep-bit", "rep-phase", "surface2"])
    p.add_argument("--distance", type=int)
    p.add_argument("--rounds")
    p.add_argument("--init", help="'random' or a bitstring over the data qubits")
    p.add_argument("--basis", choices=["X", "Z"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="repstab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"repstab {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; command-line flags take precedence")
    common.add_argument("--seed", type=int, help="overrides REPSTAB_SEED and the config seed")
    common.add_argument("--workers", type=int, default=1, help="worker-pool size (stages run sequentially)")
    common.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sample noisy shots to a binary archive")
    _spec_args(p)
    p.add_argument("--noise", help="preset name, JSON file or inline JSON")
    p.add_argument("--shots", type=int)
    p.add_argument("--block", type=int, help="shots sharing one random initial string")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", parents=[common], help="convert a shot archive to detection events")
    p.add_argument("archive")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--filter-bursts", nargs="?", const=True, metavar="K[,COOLDOWN]")
    p.add_argument("--def-report", help="write the DEF report JSON here")
    p.add_argument("--burst-report", help="write the burst-filter ranges JSON here")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("correlate", parents=[common], help="p_ij matrix and edge classification")
    p.add_argument("archive", help="detection archive")
    p.add_argument("-o", "--out", required=True, help="p_ij CSV")
    p.add_argument("--order", choices=["time-first", "space-first"])
    p.add_argument("--method", choices=["exact", "approx"])
    p.add_argument("--edges", help="edge classification JSON")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("decode", parents=[common], help="matching decode (post-selection for surface2)")
    p.add_argument("archives", nargs="+", help="detection archives, one per round count")
    p.add_argument("-o", "--out", required=True, help="logical-error CSV")
    p.add_argument("--weights", choices=list(WEIGHTINGS))
    p.add_argument("--train", help="detection archive for bootstrap or pij weights")
    p.add_argument("--noise", help="noise model for first-principles weights")
    p.add_argument("--distances", help="sub-chain distances, e.g. 3,5,7")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("fit", parents=[common], help="fit eps per round and Lambda")
    p.add_argument("tables", nargs="+", help="logical-error CSVs from decode")
    p.add_argument("-o", "--out", required=True, help="lambda.json")
    p.add_argument("--exclude", help="distances left out of the Lambda fit (default 3)")
    p.add_argument("--min-rounds", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("budget", parents=[common], help="per-component contributions to 1/Lambda")
    p.add_argument("--family", choices=["rep-bit", "rep-phase"])
    p.add_argument("--noise")
    p.add_argument("--shots", type=int)
    p.add_argument("--max-shots", type=int)
    p.add_argument("-o", "--out", required=True, help="budget.json")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("project", parents=[common], help="distance and qubit count for a target error")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--fit", help="lambda.json to read Lambda from")
    p.add_argument("--target", default="1e-12")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end run with every weighting")
    _spec_args(p)
    p.add_argument("--noise")
    p.add_argument("--shots", type=int)
    p.add_argument("--distances")
    p.add_argument("--archive", action="append", help="shot archive(s) instead of simulating")
    p.add_argument("--weights", help="comma-separated subset of " + ",".join(WEIGHTINGS))
    p.add_argument("--filter-bursts", nargs="?", const=True, metavar="K[,COOLDOWN]")
    p.add_argument("--order", choices=["time-first", "space-first"])
    p.add_argument("--exclude", help="distances left out of the Lambda fits (default 3)")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = exit_code(exc)
        if code == 1:
            raise
        print(f"repstab {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
