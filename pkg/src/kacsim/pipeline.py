"""From replica runs to diagnostics records and artifacts on disk."""
from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from .engine import run_replicas, total_proposal_rate
from .estimators import (DiagnosticsRecord, EstimatorReport, entropy_knn, fisher_estimate, moments,
                         pairwise_singular_moment, w2_distance)
from .estimators.transport import MAX_EXACT_N
from .io import RunConfig, emit_diagnostics, save_config, write_event_log, write_snapshot

log = logging.getLogger(__name__)

MIN_FISHER_N = 100


def _skipped(name, n, reason):
    return EstimatorReport(name, float("nan"), float("nan"), n, {"skipped": reason})


def kernel_constants(config: RunConfig) -> dict:
    k = config.kernel
    return {
        "seed": config.seed,
        "n_replicas": config.n_replicas,
        "b": repr(k.b),
        "b_eps": repr(k.b_eps),
        "Lambda": repr(total_proposal_rate(config.engine_config())),
        "theta_c": repr(k.theta_c),
        "angular_mass_eps": repr(k.angular_mass_eps),
        # beta is only pinned between constant multiples of theta^(-1-nu); both are taken as 1
        "beta_convention": "power_law c1=c2=1" if k.beta_form == "power_law" else f"cutoff_uniform {k.beta_const!r}",
    }


def _pairwise(samples, config):
    reps = [pairwise_singular_moment(s[: config.pairwise_max_n], config.pairwise_a) for s in samples]
    if len(reps) == 1:
        return reps[0]
    vals = np.array([r.value for r in reps])
    return EstimatorReport("pairwise_a_moment", float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)),
                           int(sum(r.n_samples for r in reps)),
                           {"a": config.pairwise_a, "n_replicas": len(reps),
                            "n_coincident": int(sum(r.parameters["n_coincident"] for r in reps))})


def diagnostics_record(samples, t: float, config: RunConfig, residuals=None) -> DiagnosticsRecord:
    """Estimates at one time from per-replica samples (pooled for the marginal)."""
    pooled = np.concatenate(samples)
    n = pooled.shape[0]
    m2, m4, _ = moments(pooled)
    ent = entropy_knn(pooled, config.entropy_k, seed=config.seed)
    if n >= MIN_FISHER_N:
        params = {"n_boot": config.fisher_n_boot, "seed": config.seed}
        if config.fisher_method == "knn_score":
            params["k"] = config.fisher_k
        fis = fisher_estimate(pooled, config.fisher_method, **params)
    else:
        fis = _skipped("fisher", n, f"needs n >= {MIN_FISHER_N}")
    pw = _pairwise(samples, config)
    ref_rng = np.random.default_rng([config.seed, 0x5EED])
    if config.w2_method == "exact_assignment":
        a = samples[0][:MAX_EXACT_N]
        w2 = w2_distance(a, ref_rng.standard_normal(a.shape), "exact_assignment")
    else:
        w2 = w2_distance(pooled, ref_rng.standard_normal(pooled.shape), "sliced",
                         n_projections=config.n_projections, seed=config.seed)
    return DiagnosticsRecord(float(t), m2, m4, ent, fis, pw, w2, None, dict(residuals or {}))


def simulate(config: RunConfig, *, write: bool = True, write_snapshots: bool = True):
    """Run all replicas, estimate diagnostics at every snapshot time, write artifacts.

    Returns ``(records, results)``.
    """
    eng = config.engine_config()
    results = run_replicas(eng, config.n_replicas, workers=config.workers)
    times = eng.all_snapshot_times
    records = []
    for k, t in enumerate(times):
        samples = [r.flow.snapshots[k] for r in results]
        drift = {
            "energy_drift": max(r.audit[k]["energy_drift"] for r in results),
            "momentum_drift": max(r.audit[k]["momentum_drift"] for r in results),
        }
        records.append(diagnostics_record(samples, t, config, drift))
    if write:
        out = Path(config.resolved_output_dir())
        out.mkdir(parents=True, exist_ok=True)
        h = config.config_hash
        save_config(config, out / "config.json")
        emit_diagnostics(records, out / "diagnostics.tsv", config_hash=h, extra=kernel_constants(config))
        if write_snapshots:
            snap_dir = out / "snapshots"
            snap_dir.mkdir(exist_ok=True)
            for r in results:
                for k, t in enumerate(times):
                    write_snapshot(snap_dir / f"rep{r.replica:04d}_k{k:04d}.txt", r.flow.snapshots[k],
                                   t=t, seed=config.seed, replica=r.replica, config_hash=h)
        for r in results:
            if r.events is not None:
                write_event_log(out / f"events_rep{r.replica:04d}.csv", r.events)
    return records, results
