"""Logical-error fits, Lambda extraction, error budgets and post-selection."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .circuit import COMPONENTS, NoiseModel
from .codes import CodeSpec, build, logical_support, subsample_maps
from .decoder import MatchingGraph, build_weights, mwpm_decode
from .detection import DetectionBatch, extract_detections
from .sampling import Sampler, mechanism_table


class FitError(ValueError):
    pass


# -- per-round logical error ---------------------------------------------------

def decay_model(n, eps):
    return 0.5 * (1.0 - (1.0 - 2.0 * eps) ** n)


def eps_from_point(p, n):
    """Per-round error that gives logical error ``p`` after ``n`` rounds."""
    p = np.minimum(np.asarray(p, dtype=float), 0.5 - 1e-12)
    return 0.5 * (1.0 - (1.0 - 2.0 * p) ** (1.0 / np.asarray(n, dtype=float)))


def fit_eps_per_round(rounds, p_error, se=None, min_rounds: int = 10):
    """Least-squares fit of ``P(n) = (1 - (1 - 2 eps)^n) / 2`` over ``n > min_rounds``.

    Returns
    -------
    eps, eps_se : float
    """
    n = np.asarray(rounds, dtype=float)
    p = np.asarray(p_error, dtype=float)
    sel = n > min_rounds
    if sel.sum() < 3:
        raise FitError(f"need at least 3 points with rounds > {min_rounds}, got {int(sel.sum())}")
    n, p = n[sel], p[sel]
    if not p.any():
        return 0.0, 0.0
    sig = None
    if se is not None:
        sig = np.asarray(se, dtype=float)[sel]
        # zero-count points still constrain the fit: use a one-event error bar
        sig = np.where(sig > 0, sig, np.max(sig) if sig.max() > 0 else 1.0)
    guess = float(np.clip(np.median(eps_from_point(p, n)), 1e-9, 0.4))
    popt, pcov = curve_fit(decay_model, n, p, p0=[guess], sigma=sig,
                           absolute_sigma=sig is not None, bounds=(0.0, 0.5), xtol=1e-15,
                           ftol=1e-15, gtol=1e-15)
    return float(popt[0]), float(np.sqrt(max(pcov[0, 0], 0.0)))


@dataclass
class FitResult:
    distances: list
    eps: list
    eps_se: list
    lam: float
    lam_err: float
    C: float
    C_err: float
    excluded: list = field(default_factory=list)
    rounds_range: tuple | None = None
    chi2_red: float = float("nan")
    flagged: bool = False

    @property
    def inv_lambda(self) -> float:
        return 1.0 / self.lam

    def to_json(self) -> dict:
        return {"per_distance": [{"d": int(d), "eps": float(e), "se": float(s)}
                                 for d, e, s in zip(self.distances, self.eps, self.eps_se)],
                "lambda": self.lam, "lambda_err": self.lam_err, "C": self.C, "C_err": self.C_err,
                "excluded": list(self.excluded), "rounds_range": self.rounds_range,
                "chi2_red": self.chi2_red, "flagged": self.flagged}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def fit_lambda(distances, eps, se=None, exclude=(3,), rounds_range=None) -> FitResult:
    """Regress ``ln eps`` on ``(d + 1) / 2``: ``Lambda = exp(-slope)``, ``C = exp(intercept)``.

    With standard errors the regression is weighted and the covariance is
    inflated by the reduced chi-square when that exceeds 1. Distances with
    no observed error cannot enter a log-space fit; they are added to
    ``excluded`` and the result is flagged.
    """
    d = np.asarray(distances, dtype=float)
    e = np.asarray(eps, dtype=float)
    s = None if se is None else np.asarray(se, dtype=float)
    empty = ~np.isin(d, list(exclude)) & ~(e > 0)
    keep = ~np.isin(d, list(exclude)) & (e > 0)
    if keep.sum() < 2:
        raise FitError("need at least two included distances with nonzero error")
    k = (d[keep] + 1) / 2
    y = np.log(e[keep])
    X = np.stack([np.ones_like(k), k], axis=1)
    if s is not None and np.all(s[keep] > 0):
        w = 1.0 / (s[keep] / e[keep]) ** 2
    else:
        w = np.ones_like(k)
    A = X.T @ (w[:, None] * X)
    cov = np.linalg.inv(A)
    beta = cov @ X.T @ (w * y)
    dof = k.size - 2
    resid = y - X @ beta
    chi2 = float(np.sum(w * resid ** 2))
    chi2_red = chi2 / dof if dof > 0 else float("nan")
    if s is None or not np.all(s[keep] > 0):
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    elif dof > 0:
        cov = cov * max(1.0, chi2_red)
    lam = math.exp(-beta[1])
    C = math.exp(beta[0])
    return FitResult(d.astype(int).tolist(), e.tolist(), (s if s is not None else np.zeros_like(e)).tolist(),
                     lam, lam * math.sqrt(max(cov[1, 1], 0.0)), C, C * math.sqrt(max(cov[0, 0], 0.0)),
                     sorted({int(x) for x in exclude} | {int(x) for x in d[empty]}), rounds_range,
                     chi2_red, bool(lam <= 1.0 or empty.any()))


# -- subsampled Lambda simulation ----------------------------------------------

def subsampled_sweep(parent: Mapping[int, DetectionBatch], spec: CodeSpec, distances: Sequence[int],
                     weights: str = "first-principles", noise=None, train: DetectionBatch | None = None,
                     mechanisms: Mapping[int, object] | None = None, backend: str | None = None):
    """Decode every sub-chain of every parent run.

    Parameters
    ----------
    parent : mapping rounds -> DetectionBatch
        Parent-distance detections, one batch per round count.
    train : DetectionBatch, optional
        Training detections (any round count) for bootstrap / pij weights.

    Returns
    -------
    dict
        ``{d: {n: ndarray (n_maps, n_shots) of logical-error booleans}}``.
    """
    out: dict[int, dict[int, np.ndarray]] = {}
    models = {}
    for d in distances:
        maps = subsample_maps(spec.distance, d)
        out[d] = {}
        for n, batch in sorted(parent.items()):
            rows = []
            for smap in maps:
                if weights == "first-principles":
                    mech = mechanisms[n] if mechanisms is not None else None
                    model = build_weights(weights, spec.with_rounds(n), noise=noise, smap=smap, mechanisms=mech)
                else:
                    key = (d, smap.offset)
                    if key not in models:
                        models[key] = build_weights(weights, spec, train=train, smap=smap, backend=backend)
                    model = models[key]
                graph = MatchingGraph.from_model(model, n)
                rows.append(mwpm_decode(batch.subsample(smap), graph, backend).logical_error)
            out[d][n] = np.array(rows)
    return out


@dataclass
class LambdaRun:
    """Per-shot logical outcomes of a subsampled sweep, refittable on any shot subset."""

    outcomes: dict           # {d: {n: (n_maps, n_shots) bool}}
    exclude: tuple = (3,)
    min_rounds: int = 10

    def curves(self, idx=None):
        """Map-averaged P_error(n) and its standard error per distance."""
        res = {}
        for d, by_n in self.outcomes.items():
            ns = sorted(by_n)
            ps, ses = [], []
            for n in ns:
                arr = by_n[n] if idx is None else by_n[n][:, idx]
                p = float(arr.mean())
                # shots are the independent unit; maps overlap and are not
                shot_mean = arr.mean(axis=0)
                se = float(shot_mean.std(ddof=1) / math.sqrt(arr.shape[1])) if arr.shape[1] > 1 else 0.0
                ps.append(p)
                ses.append(se)
            res[d] = (np.array(ns), np.array(ps), np.array(ses))
        return res

    def eps(self, idx=None):
        out = {}
        for d, (ns, ps, ses) in self.curves(idx).items():
            out[d] = fit_eps_per_round(ns, ps, ses, self.min_rounds)
        return out

    def fit(self, idx=None) -> FitResult:
        eps = self.eps(idx)
        ds = sorted(eps)
        ns = sorted(next(iter(self.outcomes.values())))
        return fit_lambda(ds, [eps[d][0] for d in ds], [eps[d][1] for d in ds], self.exclude,
                          (min(ns), max(ns)))

    @property
    def n_shots(self) -> int:
        first = next(iter(self.outcomes.values()))
        return int(next(iter(first.values())).shape[1])

    def extend(self, other: "LambdaRun") -> "LambdaRun":
        """Append the shots of ``other`` (same distances and rounds)."""
        out = {d: {n: np.concatenate([a, other.outcomes[d][n]], axis=1) for n, a in by_n.items()}
               for d, by_n in self.outcomes.items()}
        return LambdaRun(out, self.exclude, self.min_rounds)


class LambdaSimulator:
    """Simulate a parent repetition code at several round counts and fit Lambda
    from its sub-chains.

    Shot ``j`` of every run uses the same random stream regardless of the
    rates, so runs at nearby rate vectors are strongly correlated (common
    random numbers) and their difference is much less noisy than either.
    """

    def __init__(self, family: str = "rep-phase", distances=(3, 5, 7, 9, 11),
                 rounds=(12, 16, 20, 25, 30, 40, 50), parent_d: int | None = None,
                 weights: str = "first-principles", exclude=(3,), backend: str | None = None):
        self.family = family
        self.distances = tuple(distances)
        self.rounds = tuple(rounds)
        self.parent_d = parent_d or max(self.distances)
        self.weights = weights
        self.exclude = tuple(exclude)
        self.backend = backend
        self.spec = CodeSpec(family, self.parent_d, max(self.rounds))
        self._circuits = {n: build(self.spec.with_rounds(n)) for n in self.rounds}
        self._mech = {}
        self._samplers = {}

    def mechanisms(self, n):
        if n not in self._mech:
            self._mech[n] = mechanism_table(self._circuits[n])
        return self._mech[n]

    def _sampler(self, n, noise: NoiseModel, seed: int) -> Sampler:
        # plain six-rate models share one compiled program; rates are passed per call
        if noise.correlated or noise.bursts is not None:
            return Sampler(self._circuits[n], noise, coin_seed=seed)
        key = (n, seed)
        if key not in self._samplers:
            self._samplers[key] = Sampler(self._circuits[n], noise, coin_seed=seed)
        return self._samplers[key]

    def detections(self, n: int, noise: NoiseModel, shots: int, seed: int = 0, start: int = 0):
        s = self._sampler(n, noise, seed)
        return extract_detections(s.sample(shots, seed, start=start, rates=noise.rates), self._circuits[n])

    def run(self, noise: NoiseModel, shots: int, seed: int = 0, start: int = 0,
            train_shots: int | None = None) -> LambdaRun:
        parent = {n: self.detections(n, noise, shots, seed, start) for n in self.rounds}
        train = None
        mech = None
        if self.weights in ("bootstrap", "pij"):
            train = self.detections(max(self.rounds), noise, train_shots or shots, seed + 1)
        elif self.weights == "first-principles":
            mech = {n: self.mechanisms(n) for n in self.rounds}
        out = subsampled_sweep(parent, self.spec, self.distances, self.weights, noise=noise,
                               train=train, mechanisms=mech, backend=self.backend)
        return LambdaRun(out, self.exclude)

    def inv_lambda(self, noise: NoiseModel, shots: int, seed: int = 0) -> float:
        return self.run(noise, shots, seed).fit().inv_lambda


# -- error budget ------------------------------------------------------------------

@dataclass
class BudgetRow:
    name: str
    rate: float
    weight: float
    contribution: float
    pct: float
    weight_se: float = 0.0
    raw_weight: float = 0.0


@dataclass
class ErrorBudget:
    components: list
    total: float
    direct: float | None = None
    direct_se: float | None = None
    shots: int = 0
    noise_limited: bool = False

    @property
    def stray(self) -> float | None:
        return None if self.direct is None else self.direct - self.total

    def row(self, name: str) -> BudgetRow:
        return next(r for r in self.components if r.name == name)

    def ordering(self) -> list[str]:
        return [r.name for r in sorted(self.components, key=lambda r: -r.contribution)]

    def to_json(self) -> dict:
        return {"components": [{"name": r.name, "rate": r.rate, "weight": r.weight,
                                "contribution": r.contribution, "pct": r.pct,
                                "weight_se": r.weight_se, "raw_weight": r.raw_weight}
                               for r in self.components],
                "total": self.total, "direct": self.direct, "stray": self.stray,
                "shots": self.shots, "noise_limited": self.noise_limited}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def budget_from_gradient(x: np.ndarray, grad: np.ndarray, grad_se=None, names=COMPONENTS,
                         zero_negative=("I",), direct=None, direct_se=None, shots=0,
                         noise_limited=False) -> ErrorBudget:
    """Contributions ``g_k x_k`` from weights ``g`` evaluated at ``x / 2``."""
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    se = np.zeros_like(grad) if grad_se is None else np.asarray(grad_se, dtype=float)
    w = grad.copy()
    for k, name in enumerate(names):
        if name in zero_negative and w[k] < 0:
            w[k] = 0.0
    contrib = w * x
    total = float(contrib.sum())
    rows = [BudgetRow(n, float(x[k]), float(w[k]), float(contrib[k]),
                      float(100 * contrib[k] / total) if total > 0 else 0.0, float(se[k]), float(grad[k]))
            for k, n in enumerate(names)]
    return ErrorBudget(rows, total, direct, direct_se, shots, noise_limited)


def gradient_at_half(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 0.5) -> np.ndarray:
    """Central differences of ``f`` at ``x / 2`` with steps ``step * x_k``.

    For a quadratic ``f`` the result is exact for any step.
    """
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        if x[k] == 0:
            continue
        h = step * x[k]
        up = x / 2
        dn = x / 2
        up[k] += h
        dn[k] -= h
        g[k] = (f(up) - f(dn)) / (2 * h)
    return g


def budget_simulator(family: str = "rep-phase", **kw) -> LambdaSimulator:
    """Default simulator for budgets: distances 3 and 5, both included in the fit.

    At half the device rates the logical error per round of a distance-7 chain
    is too small to resolve a derivative with a practical number of shots.
    """
    opts = dict(distances=(3, 5), parent_d=5, exclude=(), rounds=(12, 16, 20, 25, 30, 40, 50))
    opts.update(kw)
    return LambdaSimulator(family, **opts)


def _inv_lambda(run: LambdaRun, idx=None) -> float:
    # a fit that lost a distance to zero observed errors is a different estimator
    try:
        fit = run.fit(idx)
    except (FitError, RuntimeError, ValueError, FloatingPointError):
        return float("nan")
    if set(fit.excluded) != set(run.exclude):
        return float("nan")
    return fit.inv_lambda


def _run_point(job) -> LambdaRun:
    sim, noise, n, seed, start = job
    return sim.run(noise, n, seed, start=start)


def error_budget(noise: NoiseModel, spec: CodeSpec | str = "rep-phase",
                 simulator: LambdaSimulator | None = None, shots: int = 20000,
                 max_shots: int = 160000, seed: int = 0, step: float = 0.5,
                 target_se: float = 0.005, n_boot: int = 100, direct: bool = True,
                 components=COMPONENTS, progress: Callable[[str], None] | None = None,
                 workers: int = 1) -> ErrorBudget:
    """Per-component contributions to ``1 / Lambda``.

    Each weight ``g_k`` is a central difference of ``1 / Lambda`` about
    ``x / 2`` with step ``step * x_k`` (the default 0.5 compares ``x_k = 0``
    with ``x_k`` at full value). All runs share shot seeds, so differences
    are taken on common random numbers, and the standard errors come from a
    paired bootstrap over shots. Shots are added until every contribution has
    a standard error below ``target_se`` or ``max_shots`` is reached, in which
    case ``noise_limited`` is set. ``workers > 1`` runs the perturbed rate
    vectors in a process pool.
    """
    family = spec.family if isinstance(spec, CodeSpec) else spec
    sim = simulator or budget_simulator(family)
    x = noise.rates
    half = noise.with_rates(x / 2)
    active = [k for k, name in enumerate(COMPONENTS) if name in components and x[k] > 0]
    points = {}
    for k in active:
        h = step * x[k]
        points[(k, +1)] = half.with_rates({COMPONENTS[k]: x[k] / 2 + h})
        points[(k, -1)] = half.with_rates({COMPONENTS[k]: x[k] / 2 - h})
    if direct:
        points["direct"] = noise
    runs: dict = {}
    n_done = 0
    rng = np.random.default_rng(seed)
    while True:
        n_new = shots if n_done == 0 else min(n_done, max_shots - n_done)
        keys = list(points)
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                new = list(pool.map(_run_point, [(sim, points[k], n_new, seed, n_done) for k in keys]))
        else:
            new = [_run_point((sim, points[k], n_new, seed, n_done)) for k in keys]
        for key, r in zip(keys, new):
            runs[key] = r if key not in runs else runs[key].extend(r)
        n_done += n_new
        grad = np.zeros(len(COMPONENTS))
        for k in active:
            grad[k] = (_inv_lambda(runs[(k, 1)]) - _inv_lambda(runs[(k, -1)])) / (2 * step * x[k])
        boot = np.full((n_boot, len(COMPONENTS)), np.nan)
        for b in range(n_boot):
            idx = rng.integers(0, n_done, n_done)
            for k in active:
                boot[b, k] = (_inv_lambda(runs[(k, 1)], idx) - _inv_lambda(runs[(k, -1)], idx)) / (2 * step * x[k])
        gse = np.nanstd(boot, axis=0, ddof=1) if n_boot > 1 else np.zeros(len(COMPONENTS))
        gse = np.where(np.isfinite(gse), gse, np.inf)
        gse[[k for k in range(len(COMPONENTS)) if k not in active]] = 0.0
        worst = float(np.max(gse * x))
        if progress:
            progress(f"shots={n_done} worst contribution se={worst:.4f} "
                     + " ".join(f"{COMPONENTS[k]}={grad[k] * x[k]:.4f}" for k in active))
        if worst <= target_se or n_done >= max_shots:
            break
    bad = [COMPONENTS[k] for k in active if not np.isfinite(grad[k])]
    if bad:
        raise FitError(f"no finite Lambda at the perturbed rates of {bad} after {n_done} shots")
    d_val = d_se = None
    if direct:
        d_val = _inv_lambda(runs["direct"])
        reps = [_inv_lambda(runs["direct"], rng.integers(0, n_done, n_done)) for _ in range(n_boot)]
        d_se = float(np.nanstd(reps, ddof=1)) if n_boot > 1 else None
    return budget_from_gradient(x, grad, gse, direct=d_val, direct_se=d_se, shots=n_done,
                                noise_limited=worst > target_se)


# -- distance-2 post-selection ---------------------------------------------------

@dataclass
class PostselectStats:
    rounds: np.ndarray
    retained: np.ndarray           # fraction of runs with no detection through each round count
    logical_error: np.ndarray      # post-selected logical error at each round count
    logical_se: np.ndarray
    n_shots: np.ndarray
    retention_per_round: float = float("nan")
    retention_se: float = float("nan")
    error_per_round: float = float("nan")
    error_per_round_se: float = float("nan")
    basis: str = "Z"

    def to_json(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def retained_by_round(batch: DetectionBatch) -> np.ndarray:
    """Fraction of shots with no unmasked detection in stabilizer rounds ``0..t``."""
    ev = batch.events[:, :batch.n_rounds] & batch.mask[:batch.n_rounds].astype(np.uint8)
    clean = np.cumsum(ev.any(axis=2), axis=1) == 0
    return clean.mean(axis=0)


def postselect_stats(runs: Mapping[int, DetectionBatch], spec: CodeSpec) -> PostselectStats:
    """Discard every run with any detection event; logical error on the rest.

    ``runs`` maps a round count to detections of a circuit with that many
    rounds. The per-round retention is ``exp(slope)`` of a log-linear fit of
    the retained fraction, the per-round logical error the slope of a linear
    fit of post-selected error against rounds.
    """
    support = list(logical_support(spec))
    ns, ret, le, lse, nsh = [], [], [], [], []
    for n in sorted(runs):
        b = runs[n]
        if len(b) == 0:
            continue
        ev = b.events & b.mask.astype(np.uint8)
        keep = ~ev.reshape(len(b), -1).any(axis=1)
        if not keep.any():
            break
        obs = np.bitwise_xor.reduce(b.final_bits[keep][:, support], axis=1)
        ref = np.bitwise_xor.reduce(b.init_bits[keep][:, support], axis=1)
        err = float((obs != ref).mean())
        ns.append(n)
        ret.append(float(keep.mean()))
        le.append(err)
        lse.append(math.sqrt(max(err * (1 - err), 1.0 / keep.sum()) / keep.sum()))
        nsh.append(len(b))
    ns_a = np.array(ns, dtype=float)
    ret_a = np.array(ret)
    le_a = np.array(le)
    lse_a = np.array(lse)
    out = PostselectStats(np.array(ns), ret_a, le_a, lse_a, np.array(nsh), basis=spec.basis)
    if len(ns) >= 2:
        y = np.log(ret_a)
        (slope, icpt), cov = np.polyfit(ns_a, y, 1, cov=True) if len(ns) > 2 else (np.polyfit(ns_a, y, 1), np.zeros((2, 2)))
        out.retention_per_round = float(math.exp(slope))
        out.retention_se = float(math.exp(slope) * math.sqrt(max(cov[0, 0], 0.0)))
        w = 1.0 / np.maximum(lse_a, 1e-12)
        if len(ns) > 2:
            (s2, _), c2 = np.polyfit(ns_a, le_a, 1, w=w, cov="unscaled")
            out.error_per_round_se = float(math.sqrt(max(c2[0, 0], 0.0)))
        else:
            s2, _ = np.polyfit(ns_a, le_a, 1)
        out.error_per_round = float(s2)
    return out


# -- overhead ----------------------------------------------------------------------

def overhead_projection(lam: float, target: float = 1e-12) -> tuple[int, int]:
    """Smallest odd distance with ``Lambda^-((d + 1) / 2) <= target`` and its ``2 d^2`` qubits."""
    if not lam > 1:
        raise ValueError(f"Lambda must exceed 1 for a projection, got {lam}")
    if not 0 < target < 1:
        raise ValueError("target must be in (0, 1)")
    need = -math.log(target) / math.log(lam)
    k = max(2, math.ceil(need - 1e-9))
    d = 2 * k - 1
    return d, 2 * d * d
