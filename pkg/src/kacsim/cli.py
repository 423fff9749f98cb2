"""Command line entry point: ``kacsim <subcommand> [flags]``.

Every subcommand exits with status 1 when a checked tolerance is breached
and 2 on invalid input.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import benchmarks as bm
from .engine import ConservationError
from .estimators import chaos_covariance
from .io import add_config_flags, default_output_dir, load_config, parse_config, read_snapshot
from .kernel import KernelSpec, compute_b, kernel_momentum_transfer, kernel_second_moment
from .weakform import EmpiricalFlow, a_sym, constant, coordinate, energy, gaussian_bump, weak_residual

log = logging.getLogger("kacsim")

IDENTITY_RTOL = 1e-6
INVARIANT_ATOL = 1e-10
RESIDUAL_ATOL = 1e-9


def _table(rows, header):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths))
    print(line(header))
    for r in rows:
        print(line(r))


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------------------


def cmd_simulate(ns) -> int:
    from .pipeline import simulate

    config = parse_config(namespace=ns)
    try:
        records, results = simulate(config, write_snapshots=not ns.no_snapshots)
    except ConservationError as exc:
        print(f"conservation breach: {exc}", file=sys.stderr)
        return 1
    out = config.resolved_output_dir()
    print(f"config_hash {config.config_hash}")
    print(f"wrote {out}/diagnostics.tsv ({len(records)} records, {len(results)} replicas)")
    for r in records:
        print(f"t={r.t:g} m2={r.m2:.12g} m4={r.m4:.6g} entropy={r.entropy.value:.5g} "
              f"fisher={r.fisher.value:.5g}")
    return 0


def verify_kernel(gammas, radii, *, nu=0.25, seed=0):
    """Rows ``(check, gamma, |z|, error, tol, ok)`` of the sphere identity suite."""
    rng = np.random.default_rng(seed)
    rows = []
    for g in gammas:
        spec = KernelSpec(gamma=g, nu=nu, eps=0.0)
        b = compute_b(spec)
        for r in radii:
            e = rng.standard_normal(3)
            e /= np.linalg.norm(e)
            v = rng.standard_normal(3)
            vs = v - r * e
            m2 = kernel_second_moment(spec, v, vs)
            err2 = abs(m2 / (b * r ** (g + 2.0)) - 1.0)
            rows.append(("second_moment", g, r, err2, IDENTITY_RTOL, err2 <= IDENTITY_RTOL))
            mt = kernel_momentum_transfer(spec, v, vs)
            ex = b * r ** g * (vs - v)
            err3 = float(np.linalg.norm(mt - ex) / np.linalg.norm(ex))
            rows.append(("momentum_transfer", g, r, err3, IDENTITY_RTOL, err3 <= IDENTITY_RTOL))
            for name, phi in (("A1", constant()), ("Av_k", None), ("A|v|^2", energy())):
                funcs = [coordinate(k) for k in range(3)] if phi is None else [phi]
                scale = 1.0 + float(np.dot(v, v) + np.dot(vs, vs))
                err = max(abs(float(np.asarray(a_sym(f, v, vs, spec)).reshape(-1)[0])) for f in funcs)
                err /= scale * max(b, 1.0) * r ** g
                rows.append((name, g, r, err, INVARIANT_ATOL, err <= INVARIANT_ATOL))
    return rows


def cmd_verify_kernel(ns) -> int:
    gammas = _floats(ns.gamma) if ns.gamma else [-0.5, -1.0, -1.5]
    radii = _floats(ns.radii)
    rows = verify_kernel(gammas, radii, nu=float(ns.nu))
    _table([(c, g, r, f"{e:.3e}", f"{t:.0e}", "pass" if ok else "FAIL") for c, g, r, e, t, ok in rows],
           ("check", "gamma", "|z|", "error", "tol", "status"))
    return 0 if all(r[-1] for r in rows) else 1


def load_flows(directory):
    """Group stored snapshots into one :class:`EmpiricalFlow` per replica."""
    directory = Path(directory)
    snaps = sorted((directory / "snapshots").glob("rep*_k*.txt"))
    if not snaps:
        raise FileNotFoundError(f"no snapshots under {directory / 'snapshots'}")
    by_rep = {}
    for p in snaps:
        t, v, meta = read_snapshot(p)
        by_rep.setdefault(int(meta["replica"]), []).append((t, v))
    flows = {}
    for rep, items in sorted(by_rep.items()):
        items.sort(key=lambda x: x[0])
        flows[rep] = EmpiricalFlow(np.array([t for t, _ in items]), np.array([v for _, v in items]))
    return flows


def cmd_verify_weakform(ns) -> int:
    directory = Path(ns.dir or default_output_dir())
    config = load_config(directory / "config.json")
    flows = load_flows(directory)
    spec = config.kernel
    invariants = [("1", constant())] + [(f"v_{k}", coordinate(k)) for k in range(3)] + [("|v|^2", energy())]
    bump = gaussian_bump(_floats(ns.bump_center), float(ns.bump_kappa))
    rows, ok = [], True
    for rep, flow in flows.items():
        t = float(flow.times[-1]) if ns.t is None else float(ns.t)
        for name, phi in invariants:
            res = weak_residual(flow, phi, spec, t, order=8, m_phi=8)
            scale = 1.0 + float(np.mean(np.abs(phi.value(flow.snapshots[0]))))
            good = abs(res) <= RESIDUAL_ATOL * scale
            ok &= good
            rows.append((rep, name, t, f"{res:.3e}", "pass" if good else "FAIL"))
        res = weak_residual(flow, bump, spec, t)
        status = "info"
        if ns.bump_tol is not None:
            good = abs(res) <= float(ns.bump_tol)
            ok &= good
            status = "pass" if good else "FAIL"
        rows.append((rep, "bump", t, f"{res:.3e}", status))
    _table(rows, ("replica", "phi", "t", "residual", "status"))
    return 0 if ok else 1


def cmd_benchmark(ns) -> int:
    which = ns.which
    ok = True
    if which in ("equilibrium", "all"):
        from scipy import integrate

        radial = integrate.quad(lambda r: 4 * math.pi * r * r * float(bm.equilibrium_density(np.array([r, 0, 0]))),
                                0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
        good = abs(radial - 1.0) <= 1e-8
        ok &= good
        print(f"equilibrium: integral={radial:.15f} density(0)={float(bm.equilibrium_density(np.zeros(3))):.6f} "
              f"{'pass' if good else 'FAIL'}")
    if which in ("maxwell", "all"):
        spec = KernelSpec(gamma=0.0, nu=float(ns.nu), eps=float(ns.eps), beta_form=ns.beta_form)
        lam = bm.maxwell_m4_relaxation_rate(spec)
        from .engine import EngineConfig, InitialCondition, run_replicas

        times = tuple(np.round(np.arange(0.0, ns.t_final + 1e-9, ns.dt), 10))
        cfg = EngineConfig(n_particles=int(ns.n), kernel=spec, t_final=float(ns.t_final), seed=int(ns.seed),
                           snapshot_times=times, init=InitialCondition(kind="shell"))
        fit = bm.fit_m4_rate(run_replicas(cfg, int(ns.replicas)))
        rel = abs(fit.value / lam - 1.0)
        good = rel <= 0.05
        ok &= good
        print(f"maxwell: lambda={lam:.6f} fitted={fit.value:.6f}+-{fit.std_error:.6f} rel={rel:.3%} "
              f"{'pass' if good else 'FAIL'}")
    if which in ("eps-schedule", "all"):
        from .engine import EngineConfig, InitialCondition

        tmpl = EngineConfig(n_particles=int(ns.n_eps), kernel=KernelSpec(gamma=float(ns.gamma), nu=float(ns.nu)),
                            seed=int(ns.seed), init=InitialCondition(kind="two_bump"))
        rep = bm.epsilon_schedule_study(tmpl, _floats(ns.eps_list), t=1.0, n_replicas=int(ns.replicas))
        for a, b, v, se in rep.table():
            print(f"eps {a:g} -> {b:g}: W2={v:.5f}+-{se:.5f}")
        good = rep.decreasing
        ok &= good
        print(f"eps-schedule: {'pass' if good else 'FAIL'}")
    return 0 if ok else 1


def chaos_study(n_list, *, n_replicas, t, gamma=-1.0, nu=0.25, eps=0.05, seed=0, init="standard_gaussian"):
    from .engine import EngineConfig, InitialCondition, run_replicas

    out = []
    for n in n_list:
        cfg = EngineConfig(n_particles=int(n), kernel=KernelSpec(gamma=gamma, nu=nu, eps=eps), t_final=t,
                           seed=seed, init=InitialCondition(kind=init))
        out.append((int(n), chaos_covariance(run_replicas(cfg, n_replicas), energy(), t)))
    return out


def cmd_chaos_study(ns) -> int:
    res = chaos_study([int(x) for x in ns.n.split(",")], n_replicas=int(ns.replicas), t=float(ns.t),
                      gamma=float(ns.gamma), nu=float(ns.nu), eps=float(ns.eps), seed=int(ns.seed))
    rows, ok = [], True
    for k, (n, rep) in enumerate(res):
        ratio = ""
        if k + 1 < len(res):
            r = abs(rep.value) / abs(res[k + 1][1].value)
            ratio = f"{r:.3f}"
            ok &= 2.0 <= r <= 8.0
        rows.append((n, f"{rep.value:.6e}", f"{rep.std_error:.2e}", ratio))
    _table(rows, ("N", "cov", "std_error", "ratio_to_next"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kacsim", allow_abbrev=False,
                                description="Kac particle simulation and verification suite")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", allow_abbrev=False, help="run replicas and write diagnostics")
    add_config_flags(s)
    s.add_argument("--no-snapshots", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify-kernel", allow_abbrev=False, help="sphere identity suite")
    s.add_argument("--gamma", default=None, help="comma list (default -0.5,-1,-1.5)")
    s.add_argument("--radii", default="0.5,1,2")
    s.add_argument("--nu", default=0.25, type=float)
    s.set_defaults(func=cmd_verify_kernel)

    s = sub.add_parser("verify-weakform", allow_abbrev=False, help="weak-form residuals on stored flows")
    s.add_argument("--dir", default=None, help="output directory of a simulate run")
    s.add_argument("--t", default=None)
    s.add_argument("--bump-center", default="0.5,0,0")
    s.add_argument("--bump-kappa", default=1.0, type=float)
    s.add_argument("--bump-tol", default=None, type=float)
    s.set_defaults(func=cmd_verify_weakform)

    s = sub.add_parser("benchmark", allow_abbrev=False, help="Maxwell rate, equilibrium, eps schedule")
    s.add_argument("which", nargs="?", default="all", choices=("maxwell", "equilibrium", "eps-schedule", "all"))
    s.add_argument("--n", default=4096, type=int)
    s.add_argument("--n-eps", default=1024, type=int)
    s.add_argument("--replicas", default=16, type=int)
    s.add_argument("--t-final", default=2.0, type=float)
    s.add_argument("--dt", default=0.1, type=float)
    s.add_argument("--nu", default=0.25, type=float)
    s.add_argument("--eps", default=0.05, type=float)
    s.add_argument("--gamma", default=-1.0, type=float)
    s.add_argument("--beta-form", default="cutoff_uniform", choices=("cutoff_uniform", "power_law"))
    s.add_argument("--eps-list", default="0.2,0.1,0.05")
    s.add_argument("--seed", default=0, type=int)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("chaos-study", allow_abbrev=False, help="two-particle covariance over N")
    s.add_argument("--n", default="128,512,2048")
    s.add_argument("--replicas", default=100, type=int)
    s.add_argument("--t", default=1.0, type=float)
    s.add_argument("--gamma", default=-1.0, type=float)
    s.add_argument("--nu", default=0.25, type=float)
    s.add_argument("--eps", default=0.05, type=float)
    s.add_argument("--seed", default=0, type=int)
    s.set_defaults(func=cmd_chaos_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(ns.func(ns))
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
