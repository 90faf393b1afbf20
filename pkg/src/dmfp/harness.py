"""Monte-Carlo ensembles of exactly solved MDPs and their comparison with DMFP theory.

Replicates are processed in fixed blocks of :data:`BLOCK_SIZE`.  Each block
owns its accumulators; blocks are merged in index order, so the result is
bitwise identical for any number of worker processes.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .bellman import solve_policy_q, solve_q
from .engine import DmfpResult
from .errors import DegenerateDataError, InvalidArgumentError
from .numerics import MomentAccumulator, std_normal_cdf, std_normal_ppf, welford_merge, welford_push
from .rng import GOLDEN, derive_replicate_seed, splitmix64_mix
from .sampler import sample_mdp
from .types import MomentField, Policy, PriorSpec, check_prior

__all__ = [
    "BLOCK_SIZE",
    "FIXED",
    "REL_ERROR_FLOOR",
    "EnsembleStats",
    "ComparisonReport",
    "CorrelationSummary",
    "default_schedule",
    "default_retained_pairs",
    "run_ensemble",
    "merge_ensembles",
    "theory_snapshots",
    "compare_theory",
    "ks_normality",
    "qq_points",
    "cross_pair_correlation",
    "worker_count",
]

BLOCK_SIZE = 16
FIXED = "fixed"
REL_ERROR_FLOOR = 1e-9

Pair = Tuple[int, int]


def worker_count(requested: Optional[int] = None) -> int:
    """Worker processes to use: explicit request, else ``DMFP_WORKERS``, else 1."""
    if requested is None:
        env = os.environ.get("DMFP_WORKERS", "").strip()
        requested = int(env) if env else 1
    return max(1, int(requested))


def default_schedule(max_iters: int = 10_000) -> List[int]:
    """Every iteration up to 10, then powers of two."""
    out = list(range(1, min(10, max_iters) + 1))
    p = 16
    while p <= max_iters:
        out.append(p)
        p *= 2
    return out


def default_retained_pairs(num_states: int, num_actions: int, count: int, seed: int) -> List[Pair]:
    """``count`` distinct (s, a) pairs chosen by a seeded shuffle of all pairs."""
    total = num_states * num_actions
    count = min(count, total)
    salt = splitmix64_mix(seed ^ 0x5DEECE66D)
    keys = sorted(range(total), key=lambda i: splitmix64_mix(salt + (i + 1) * GOLDEN))
    return [divmod(i, num_actions) for i in keys[:count]]


@dataclass
class EnsembleStats:
    """Per-(s, a) moments at each snapshot iteration plus retained fixed-point samples."""

    shape: Tuple[int, int]
    replicates: int
    master_seed: int
    first_replicate: int
    schedule: List[int]
    snapshots: Dict[Union[int, str], MomentAccumulator]
    retained_pairs: List[Pair]
    retained: np.ndarray  # (replicates, len(retained_pairs))
    iterations: np.ndarray
    converged: np.ndarray
    residuals: np.ndarray

    @property
    def labels(self) -> List[Union[int, str]]:
        return list(self.schedule) + [FIXED]

    @property
    def nonconverged(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(~self.converged)]

    def moments(self, label) -> Tuple[np.ndarray, np.ndarray]:
        acc = self.snapshots[label]
        return np.asarray(acc.mean), np.asarray(acc.variance)

    def retained_samples(self, pair: Pair) -> np.ndarray:
        try:
            j = self.retained_pairs.index(tuple(pair))
        except ValueError:
            raise InvalidArgumentError(f"pair {pair} was not retained") from None
        return self.retained[:, j]


# ---------------------------------------------------------------------------
# Block worker
# ---------------------------------------------------------------------------

_JOB: dict = {}


def _init_job(job: dict) -> None:
    _JOB.clear()
    _JOB.update(job)


def _run_block(block: int):
    job = _JOB
    prior: PriorSpec = job["prior"]
    schedule: List[int] = job["schedule"]
    start = job["first"] + block * BLOCK_SIZE
    stop = min(start + BLOCK_SIZE, job["first"] + job["replicates"])
    accs = {label: MomentAccumulator() for label in schedule + [FIXED]}
    rows_s = np.array([p[0] for p in job["pairs"]], dtype=np.int64)
    rows_a = np.array([p[1] for p in job["pairs"]], dtype=np.int64)
    kept = np.empty((stop - start, len(job["pairs"])))
    its = np.empty(stop - start, dtype=np.int64)
    conv = np.empty(stop - start, dtype=bool)
    res = np.empty(stop - start)
    for j, k in enumerate(range(start, stop)):
        mdp = sample_mdp(prior, derive_replicate_seed(job["seed"], k), validate=False)
        if job["policy"] is None:
            out = solve_q(mdp, job["eps"], job["max_iters"], schedule)
        else:
            out = solve_policy_q(mdp, job["policy"], job["eps"], job["max_iters"], schedule)
        final = out.q.values
        for label in schedule:
            accs[label] = welford_push(accs[label], out.snapshots.get(label, final))
        accs[FIXED] = welford_push(accs[FIXED], final)
        kept[j] = final[rows_s, rows_a]
        its[j], conv[j], res[j] = out.iterations, out.converged, out.residual
    return accs, kept, its, conv, res


def run_ensemble(
    prior: PriorSpec,
    replicates: int,
    master_seed: int,
    snapshot_iters: Optional[Sequence[int]] = None,
    retain_pairs: Optional[Sequence[Pair]] = None,
    eps: float = 1e-8,
    max_iters: int = 10_000,
    policy: Optional[Policy] = None,
    workers: Optional[int] = None,
    retain_count: int = 32,
    first_replicate: int = 0,
) -> EnsembleStats:
    """Sample ``replicates`` MDPs from ``prior``, solve each, and accumulate moments.

    Replicate ``k`` uses seed ``derive_replicate_seed(master_seed, k)`` for
    ``k`` in ``first_replicate .. first_replicate + replicates - 1``; adjacent
    ranges can be run separately and joined with :func:`merge_ensembles`.
    Snapshot iterations past a replicate's convergence take its converged
    table.  With ``policy`` set, each MDP is solved for that fixed policy
    instead of optimally.  Non-converged replicates are recorded in
    ``converged`` and the run continues.
    """
    if replicates < 2:
        raise InvalidArgumentError("an ensemble needs at least 2 replicates")
    if first_replicate < 0:
        raise InvalidArgumentError("first_replicate must be nonnegative")
    check_prior(prior)
    schedule = sorted(set(int(i) for i in (snapshot_iters if snapshot_iters is not None else default_schedule(max_iters))))
    if schedule and schedule[0] < 1:
        raise InvalidArgumentError("snapshot iterations are numbered from 1")
    n, m = prior.shape
    if retain_pairs is None:
        pairs = default_retained_pairs(n, m, retain_count, master_seed)
    else:
        pairs = [(int(s), int(a)) for s, a in retain_pairs]
        for s, a in pairs:
            if not (0 <= s < n and 0 <= a < m):
                raise InvalidArgumentError(f"retained pair {(s, a)} out of range")
    job = dict(
        prior=prior,
        schedule=schedule,
        replicates=int(replicates),
        first=int(first_replicate),
        seed=int(master_seed),
        pairs=pairs,
        eps=float(eps),
        max_iters=int(max_iters),
        policy=policy,
    )
    blocks = range(math.ceil(replicates / BLOCK_SIZE))
    nworkers = min(worker_count(workers), len(blocks))
    if nworkers <= 1:
        _init_job(job)
        results = [_run_block(b) for b in blocks]
    else:
        with ProcessPoolExecutor(nworkers, initializer=_init_job, initargs=(job,)) as pool:
            results = list(pool.map(_run_block, blocks))

    labels = schedule + [FIXED]
    merged = {label: MomentAccumulator() for label in labels}
    for accs, *_ in results:
        for label in labels:
            merged[label] = welford_merge(merged[label], accs[label])
    return EnsembleStats(
        shape=(n, m),
        replicates=int(replicates),
        master_seed=int(master_seed),
        first_replicate=int(first_replicate),
        schedule=schedule,
        snapshots=merged,
        retained_pairs=pairs,
        retained=np.concatenate([r[1] for r in results]),
        iterations=np.concatenate([r[2] for r in results]),
        converged=np.concatenate([r[3] for r in results]),
        residuals=np.concatenate([r[4] for r in results]),
    )


def merge_ensembles(first: EnsembleStats, second: EnsembleStats) -> EnsembleStats:
    """Join two runs over adjacent replicate ranges of the same prior and seed."""
    same = (
        first.shape == second.shape
        and first.master_seed == second.master_seed
        and first.schedule == second.schedule
        and first.retained_pairs == second.retained_pairs
    )
    if not same:
        raise InvalidArgumentError("ensembles differ in shape, seed, schedule or retained pairs")
    if second.first_replicate != first.first_replicate + first.replicates:
        raise InvalidArgumentError("replicate ranges are not adjacent")
    return EnsembleStats(
        shape=first.shape,
        replicates=first.replicates + second.replicates,
        master_seed=first.master_seed,
        first_replicate=first.first_replicate,
        schedule=list(first.schedule),
        snapshots={l: welford_merge(first.snapshots[l], second.snapshots[l]) for l in first.labels},
        retained_pairs=list(first.retained_pairs),
        retained=np.concatenate((first.retained, second.retained)),
        iterations=np.concatenate((first.iterations, second.iterations)),
        converged=np.concatenate((first.converged, second.converged)),
        residuals=np.concatenate((first.residuals, second.residuals)),
    )


# ---------------------------------------------------------------------------
# Theory comparison
# ---------------------------------------------------------------------------


def theory_snapshots(theory: DmfpResult, labels: Iterable) -> Dict:
    """Map snapshot labels (iterations and :data:`FIXED`) to theory fields."""
    return {label: theory.fixed_point if label == FIXED else theory.at(int(label)) for label in labels}


def _rel(theory: np.ndarray, emp: np.ndarray) -> np.ndarray:
    out = np.full(np.shape(theory), np.nan)
    ok = np.abs(theory) > REL_ERROR_FLOOR
    np.divide(np.abs(theory - emp), np.abs(theory), out=out, where=ok)
    return out


@dataclass
class ComparisonReport:
    """Empirical vs theoretical moments at every snapshot, with summaries.

    Arrays are indexed ``[snapshot, s, a]`` in the order of ``labels``.
    Relative errors are NaN where the theory value is within
    :data:`REL_ERROR_FLOOR` of zero.
    """

    labels: List[Union[int, str]]
    emp_mean: np.ndarray
    emp_var: np.ndarray
    theory_mean: np.ndarray
    theory_var: np.ndarray
    replicates: int
    ks: Dict[Pair, Tuple[float, float]] = field(default_factory=dict)
    correlation: Optional["CorrelationSummary"] = None
    qq: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    @property
    def rel_err_mean(self) -> np.ndarray:
        return _rel(self.theory_mean, self.emp_mean)

    @property
    def rel_err_var(self) -> np.ndarray:
        return _rel(self.theory_var, self.emp_var)

    @property
    def abs_err_mean(self) -> np.ndarray:
        return np.abs(self.theory_mean - self.emp_mean)

    @property
    def abs_err_var(self) -> np.ndarray:
        return np.abs(self.theory_var - self.emp_var)

    def pooled(self) -> List[dict]:
        """Per-snapshot moments averaged over all (s, a) pairs, with relative errors."""
        out = []
        for i, label in enumerate(self.labels):
            em, ev = float(self.emp_mean[i].mean()), float(self.emp_var[i].mean())
            tm, tv = float(self.theory_mean[i].mean()), float(self.theory_var[i].mean())
            out.append(
                dict(
                    iteration=label,
                    emp_mean=em,
                    emp_var=ev,
                    theory_mean=tm,
                    theory_var=tv,
                    rel_err_mean=float(_rel(np.array(tm), np.array(em))),
                    rel_err_var=float(_rel(np.array(tv), np.array(ev))),
                )
            )
        return out

    def summary(self) -> dict:
        quant = {}
        rm, rv = self.rel_err_mean, self.rel_err_var
        for i, label in enumerate(self.labels):
            entry = {}
            for name, arr in (("rel_err_mean", rm[i]), ("rel_err_var", rv[i])):
                vals = arr[np.isfinite(arr)]
                entry[name] = (
                    {q: float(np.quantile(vals, p)) for q, p in (("median", 0.5), ("p90", 0.9), ("max", 1.0))}
                    if vals.size
                    else None
                )
            quant[str(label)] = entry
        ks_stats = [d for d, _ in self.ks.values()]
        return dict(
            replicates=self.replicates,
            pooled=self.pooled(),
            quantiles=quant,
            ks={
                "pairs": {f"{s},{a}": {"statistic": d, "p_value": p} for (s, a), (d, p) in self.ks.items()},
                "median_statistic": float(np.median(ks_stats)) if ks_stats else None,
                "pass_fraction_0.01": float(np.mean([p > 0.01 for _, p in self.ks.values()])) if self.ks else None,
            },
            correlation=None if self.correlation is None else self.correlation.as_dict(),
            metadata=self.metadata,
        )


def compare_theory(stats: EnsembleStats, theory: Union[DmfpResult, Mapping], with_diagnostics: bool = True) -> ComparisonReport:
    """Line up ensemble moments with theory moments at every snapshot.

    ``theory`` is a :class:`DmfpResult` or a mapping from snapshot label to
    :class:`MomentField`; a mapping must carry exactly the ensemble's labels.
    """
    labels = stats.labels
    if isinstance(theory, DmfpResult):
        fields = theory_snapshots(theory, labels)
    else:
        if set(theory.keys()) != set(labels):
            raise InvalidArgumentError(
                f"snapshot schedule mismatch: theory has {sorted(map(str, theory.keys()))}, ensemble has {list(map(str, labels))}"
            )
        fields = dict(theory)
    for label in labels:
        if fields[label].mean.shape != stats.shape:
            raise InvalidArgumentError(f"theory shape {fields[label].mean.shape} != ensemble shape {stats.shape}")
    em = np.stack([stats.moments(l)[0] for l in labels])
    ev = np.stack([stats.moments(l)[1] for l in labels])
    tm = np.stack([fields[l].mean for l in labels])
    tv = np.stack([fields[l].var for l in labels])
    report = ComparisonReport(labels, em, ev, tm, tv, stats.replicates)
    if with_diagnostics and stats.retained_pairs:
        report.ks = {p: ks_normality(stats.retained[:, j]) for j, p in enumerate(stats.retained_pairs) if stats.replicates >= 8 and np.ptp(stats.retained[:, j]) > 0}
        if stats.replicates >= 30 and len(stats.retained_pairs) >= 2:
            rp = stats.retained_pairs
            report.correlation = cross_pair_correlation(stats, list(zip(rp[0::2], rp[1::2])))
        first = stats.retained[:, 0]
        if np.ptp(first) > 0:
            report.qq = qq_points(first)
    return report


# ---------------------------------------------------------------------------
# Distributional diagnostics
# ---------------------------------------------------------------------------


def ks_normality(samples) -> Tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against a normal with the sample's own mean and sd.

    The p-value comes from the asymptotic Kolmogorov distribution.  Because
    the parameters are estimated from the same data the test is
    conservative (the Lilliefors effect): true rejection rates are below the
    nominal level.  A constant sample gives statistic 0.5.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 8:
        raise InvalidArgumentError("KS normality test needs at least 8 samples")
    sd = x.std(ddof=1)
    if sd > 0:
        cdf = std_normal_cdf((x - x.mean()) / sd)
    else:
        cdf = np.full(n, 0.5)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf)
    d_minus = np.max(cdf - (i - 1) / n)
    if sd == 0:
        d = 0.5
    else:
        d = float(max(d_plus, d_minus))
    return d, float(special.kolmogorov(math.sqrt(n) * d))


def qq_points(samples) -> np.ndarray:
    """``(theoretical, sample)`` quantile pairs of standardised samples; shape ``(n, 2)``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 2:
        raise InvalidArgumentError("Q-Q points need at least 2 samples")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise DegenerateDataError("samples have zero variance")
    theo = std_normal_ppf((np.arange(1, n + 1) - 0.5) / n)
    return np.column_stack((theo, (x - x.mean()) / sd))


@dataclass
class CorrelationSummary:
    pairs: List[Tuple[Pair, Pair]]
    correlations: np.ndarray

    @property
    def median_abs(self) -> float:
        return float(np.median(np.abs(self.correlations)))

    def as_dict(self) -> dict:
        return dict(
            median_abs=self.median_abs,
            max_abs=float(np.max(np.abs(self.correlations))),
            pairs=[{"first": list(p), "second": list(q), "corr": float(c)} for (p, q), c in zip(self.pairs, self.correlations)],
        )


def cross_pair_correlation(stats: EnsembleStats, pairs: Sequence[Tuple[Pair, Pair]]) -> CorrelationSummary:
    """Pearson correlation across replicates of converged Q-values for each pair of (s, a)."""
    if stats.replicates < 30:
        raise InvalidArgumentError("correlation summary needs at least 30 replicates")
    pairs = [(tuple(p), tuple(q)) for p, q in pairs]
    corr = np.empty(len(pairs))
    for i, (p, q) in enumerate(pairs):
        x, y = stats.retained_samples(p), stats.retained_samples(q)
        if p == q:
            corr[i] = 1.0
            continue
        xc, yc = x - x.mean(), y - y.mean()
        den = math.sqrt(float(xc @ xc) * float(yc @ yc))
        corr[i] = float(xc @ yc) / den if den > 0 else np.nan
    return CorrelationSummary(pairs, corr)
