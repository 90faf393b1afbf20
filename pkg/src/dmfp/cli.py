"""Command-line entry point: ``dmfp <subcommand> --config <path> [--out DIR] [--seed U64] [--backend NAME]``.

Exit status: 0 on success, 1 on invalid configuration or prior, 2 on any
runtime failure.  Every run writes ``manifest.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .bellman import greedy_policy, solve_q
from .config import RunConfig, config_digest, load_config
from .engine import IidParams, gumbel_constants, iid_fixed_point, jacobian_spectrum, run_dmfp
from .errors import ConfigError, InvalidArgumentError, InvalidPriorError
from .harness import compare_theory, run_ensemble, worker_count
from .report import versions, write_csv, write_json, write_report
from .rng import derive_replicate_seed
from .sampler import sample_mdp
from .types import Policy

__all__ = ["main", "run_subcommand", "SUBCOMMANDS"]

# replicate index reserved for the single MDP drawn by sample/solve and by the greedy policy
POLICY_REPLICATE = 2**32 - 1


def _policy(cfg: RunConfig, prior) -> Optional[Policy]:
    if cfg.policy == "greedy":
        mdp = sample_mdp(prior, derive_replicate_seed(cfg.seed, POLICY_REPLICATE), validate=False)
        return greedy_policy(solve_q(mdp, cfg.eps, cfg.max_iters).q)
    return cfg.fixed_policy()


def _cmd_sample(cfg: RunConfig, out: Path) -> dict:
    prior = cfg.prior()
    mdp = sample_mdp(prior, derive_replicate_seed(cfg.seed, 0))
    np.savez(out / "mdp.npz", transitions=mdp.transitions, rewards=mdp.rewards, discount=mdp.discount)
    return {"files": ["mdp.npz"]}


def _cmd_solve(cfg: RunConfig, out: Path) -> dict:
    prior = cfg.prior()
    mdp = sample_mdp(prior, derive_replicate_seed(cfg.seed, 0))
    res = solve_q(mdp, cfg.eps, cfg.max_iters)
    n, k = prior.shape
    write_csv(out / "q.csv", ["s", "a", "q"], ((s, a, res.q.values[s, a]) for s in range(n) for a in range(k)))
    info = {"iterations": res.iterations, "residual": res.residual, "converged": res.converged}
    write_json(out / "solve.json", info)
    if not res.converged:
        raise RuntimeError(f"value iteration did not converge in {cfg.max_iters} iterations")
    return info


def _cmd_dmfp(cfg: RunConfig, out: Path) -> dict:
    prior = cfg.prior()
    pi = _policy(cfg, prior)
    theory = run_dmfp(prior, pi if pi is not None else "optimal", cfg.backend, max_iters=cfg.horizon or 2000)
    n, k = prior.shape
    rows = (
        (i + 1, s, a, f.mean[s, a], f.var[s, a])
        for i, f in enumerate(theory.fields)
        for s in range(n)
        for a in range(k)
    )
    write_csv(out / "dmfp.csv", ["iteration", "s", "a", "mean", "var"], rows)
    info = {"iterations": theory.iterations, "converged": theory.converged, "closed_form": theory.closed_form}
    write_json(out / "dmfp.json", info)
    return info


def _cmd_validate(cfg: RunConfig, out: Path) -> dict:
    prior = cfg.prior()
    pi = _policy(cfg, prior)
    t0 = time.perf_counter()
    stats = run_ensemble(
        prior,
        cfg.replicates,
        cfg.seed,
        snapshot_iters=cfg.schedule(),
        eps=cfg.eps,
        max_iters=cfg.max_iters,
        policy=pi,
        retain_count=cfg.retained_pairs,
    )
    theory = run_dmfp(prior, pi if pi is not None else "optimal", cfg.backend)
    report = compare_theory(stats, theory)
    report.metadata = {
        "seed": cfg.seed,
        "config_digest": config_digest(cfg),
        "wall_time_s": time.perf_counter() - t0,
        "nonconverged_replicates": stats.nonconverged,
    }
    write_report(report, out)
    return {"replicates": stats.replicates, "nonconverged": len(stats.nonconverged)}


def _cmd_stability(cfg: RunConfig, out: Path) -> dict:
    prior = cfg.prior()
    if not prior.is_iid:
        raise InvalidArgumentError("stability analysis needs an i.i.d. prior (identical rows and rewards)")
    params = IidParams.from_prior(prior)
    consts = gumbel_constants(prior.num_actions)
    mu, nu = iid_fixed_point(params, consts)
    eig, jac = jacobian_spectrum(params, consts, nu)
    info = {
        "fixed_point": {"mean": mu, "var": nu},
        "gumbel": {"a": consts.a, "b": consts.b},
        "jacobian": jac,
        "eigenvalues": eig,
        "max_eigenvalue": float(eig[0]),
        "stable": bool(np.max(np.abs(eig)) < 1.0),
    }
    write_json(out / "stability.json", info)
    return {"max_eigenvalue": float(eig[0])}


SUBCOMMANDS: Dict[str, Callable[[RunConfig, Path], dict]] = {
    "sample": _cmd_sample,
    "solve": _cmd_solve,
    "dmfp": _cmd_dmfp,
    "validate": _cmd_validate,
    "stability": _cmd_stability,
}


def run_subcommand(name: str, cfg: RunConfig, out_dir: Optional[str] = None) -> dict:
    """Run one subcommand, writing its artifacts and ``manifest.json`` into the output directory."""
    if name not in SUBCOMMANDS:
        raise InvalidArgumentError(f"unknown subcommand {name!r}")
    out = Path(out_dir or cfg.out_dir)
    if not out.is_absolute() and out_dir is None and cfg.base_dir:
        out = Path(cfg.base_dir) / out
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    info = SUBCOMMANDS[name](cfg, out)
    write_json(
        out / "manifest.json",
        {
            "command": name,
            "config": cfg.model_dump(mode="json"),
            "config_digest": config_digest(cfg),
            "seed": cfg.seed,
            "backend": cfg.backend,
            "workers": worker_count(),
            "versions": versions(),
            "wall_time_s": time.perf_counter() - t0,
            "result": info,
        },
    )
    return info


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmfp", description="Mean-field moment propagation for Bayesian MDPs, with Monte-Carlo validation.")
    p.add_argument("subcommand", choices=sorted(SUBCOMMANDS))
    p.add_argument("--config", required=True, help="flat JSON run configuration")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=_u64, help="master seed (overrides seed)")
    p.add_argument("--backend", choices=["gumbel", "quadrature"], help="max-moment backend (overrides backend)")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("backend", args.backend)) if v is not None}
        if overrides:
            cfg = cfg.model_copy(update=overrides)
        info = run_subcommand(args.subcommand, cfg, args.out)
    except (ConfigError, InvalidPriorError, InvalidArgumentError) as exc:
        print(f"dmfp: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every other failure maps to the runtime exit code
        print(f"dmfp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(" ".join(f"{k}={v}" for k, v in info.items() if k != "files"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
