"""Command-line front end.

Three subcommands:

  solve      load or generate a game, run the gradient loop, extract the
             adversary policy, verify, and write trace.csv / policies.json
             / report.json into --out
  verify     recompute the exact Nash gap of a stored joint policy
  gridworld  generate a grid-world game file

Exit codes: 0 success; 1 invalid input (bad game file, bad flags, schema
mismatch); 2 adversary LP infeasible (solve writes the report with
diagnostics first); 3 verification failed (gap above --epsilon).

The ATMG_LOG environment variable (quiet|info|debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .extension import LpAdvInfeasibleError, adv_nash_policy, nash_gap
from .game import (
    DegenerateRewardsError,
    GameSpec,
    grid_world,
    load_game,
    normalize_rewards,
    save_game,
    validate,
)
from .ipgmax import IpgmaxConfig, resolve_schedule, run
from .mdp import AdversaryPolicy, TeamPolicy, check_policies

log = logging.getLogger(__name__)

_LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
_THEOREM_REFUSAL_LIMIT = 10**7

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_LP_INFEASIBLE = 2
EXIT_GAP_EXCEEDED = 3


def _configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("ATMG_LOG", ""), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_INVALID


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _write_trace(path: Path, trace, n_players: int) -> None:
    lines = [
        f"# team_value = -phi/{n_players} (per-player team payoff; phi is the "
        "adversary's best-response value)",
        "t,frobenius_norm_consecutive_joint_policies,team_value,phi",
    ]
    for t in range(len(trace.phi)):
        phi = trace.phi[t]
        lines.append(
            f"{t},{_fmt(trace.frob_norms[t])},{_fmt(-phi / n_players)},{_fmt(phi)}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _policies_payload(x: TeamPolicy, y: AdversaryPolicy | None, lam) -> dict:
    return {
        "x": [block.tolist() for block in x.blocks],
        "y": None if y is None else y.probs.tolist(),
        "lambda": None if lam is None else lam.table.tolist(),
    }


def _gap_payload(report) -> dict:
    return {
        "team_gaps": [float(g) for g in report.team_gaps],
        "adversary_gap": float(report.adversary_gap),
        "epsilon_certified": float(report.epsilon_certified),
    }


def _solve_one(spec: GameSpec, args, seed: int, out_dir: Path) -> int:
    """Full pipeline for one seed; the game is already validated and raw."""
    started = time.perf_counter()
    normalized, shift, scale = normalize_rewards(spec)

    selection = {"prox": "prox_scan", "random": "random"}[args.select]
    config = IpgmaxConfig(
        epsilon=args.epsilon,
        eta=args.eta,
        iters=args.iters,
        schedule_mode=args.schedule,
        iterate_selection=selection,
        delta=args.delta,
        seed=seed,
        cap_iters=args.cap_iters,
    )
    try:
        config.validate()
        eta_used, T_used = resolve_schedule(normalized, config)
    except ValueError as exc:
        return _fail(str(exc))
    if (
        args.schedule == "theorem"
        and args.cap_iters is None
        and T_used > _THEOREM_REFUSAL_LIMIT
    ):
        return _fail(
            f"theorem schedule asks for T = {T_used} iterations; "
            "pass --cap-iters to run a truncated version"
        )

    trace = run(normalized, None, config)
    t_star = trace.t_star
    measured = trace.prox_gaps[t_star]
    lp_epsilon = 1.1 * measured

    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.csv"
    policies_path = out_dir / "policies.json"
    report_path = out_dir / "report.json"
    _write_trace(trace_path, trace, spec.n_players)

    report = {
        "game": {
            "states": spec.state_count,
            "team_sizes": list(spec.team_sizes),
            "adversary_actions": spec.adversary_actions,
            "discount": spec.discount,
        },
        "config": {
            "schedule": args.schedule,
            "epsilon": args.epsilon,
            "eta": eta_used,
            "iters": T_used,
            "select": args.select,
            "delta": args.delta,
            "seed": seed,
            "cap_iters": args.cap_iters,
        },
        "normalization": {"shift": shift, "scale": scale},
        "t_star": t_star,
        "prox_gap_measured": measured,
        "lp_epsilon": lp_epsilon,
        "files": {
            "trace": str(trace_path),
            "policies": str(policies_path),
            "report": str(report_path),
        },
    }

    x_hat = trace.x_hat
    try:
        y_hat, lam = adv_nash_policy(normalized, x_hat, lp_epsilon)
    except LpAdvInfeasibleError as exc:
        report["lp_status"] = "infeasible"
        report["lp_diagnostics"] = {"max_violation": exc.max_violation}
        report["wall_clock_seconds"] = time.perf_counter() - started
        policies_path.write_text(
            json.dumps(_policies_payload(x_hat, None, None), indent=2) + "\n"
        )
        report_path.write_text(json.dumps(report, indent=2) + "\n")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LP_INFEASIBLE

    gap = nash_gap(normalized, x_hat, y_hat)
    report["lp_status"] = "feasible"
    report["nash_gap"] = _gap_payload(gap)
    # Gaps are value differences, so the additive shift cancels and only the
    # scale maps them back to the input game's units.
    report["nash_gap_raw_units"] = {
        key: (
            [v / scale for v in value]
            if isinstance(value, list)
            else value / scale
        )
        for key, value in report["nash_gap"].items()
    }
    report["wall_clock_seconds"] = time.perf_counter() - started

    policies_path.write_text(
        json.dumps(_policies_payload(x_hat, y_hat, lam), indent=2) + "\n"
    )
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    log.info(
        "seed %d: t_star=%d prox_gap=%.3e certified=%.3e",
        seed,
        t_star,
        measured,
        gap.epsilon_certified,
    )
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.game is not None:
        path = Path(args.game)
        if not path.is_file():
            return _fail(f"game file not found: {path}")
        try:
            spec = load_game(path)
        except ValueError as exc:
            return _fail(f"cannot load {path}: {exc}")
    else:
        if args.gridworld < 2:
            return _fail(f"--gridworld needs a side of at least 2, got {args.gridworld}")
        spec = grid_world(args.gridworld)

    problems = validate(spec)
    if problems:
        return _fail("invalid game: " + "; ".join(problems))
    try:
        normalize_rewards(spec)
    except DegenerateRewardsError as exc:
        return _fail(str(exc))

    out = Path(args.out)
    if args.jobs <= 1:
        return _solve_one(spec, args, args.seed, out)
    seeds = [args.seed + i for i in range(args.jobs)]
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        codes = list(
            pool.map(
                lambda s: _solve_one(spec, args, s, out / f"seed-{s}"),
                seeds,
            )
        )
    return max(codes)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _policies_from_json(spec: GameSpec, payload: dict) -> tuple[TeamPolicy, AdversaryPolicy]:
    try:
        blocks = tuple(
            np.asarray(block, dtype=np.float64) for block in payload["x"]
        )
        probs = np.asarray(payload["y"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"policies file does not match schema: {exc}") from exc
    if len(blocks) != spec.n_players:
        raise ValueError(
            f"policies file has {len(blocks)} team blocks, "
            f"game has {spec.n_players} players"
        )
    return TeamPolicy(blocks=blocks), AdversaryPolicy(probs=probs)


def cmd_verify(args) -> int:
    path = Path(args.game)
    if not path.is_file():
        return _fail(f"game file not found: {path}")
    try:
        spec = load_game(path)
    except ValueError as exc:
        return _fail(f"cannot load {path}: {exc}")
    problems = validate(spec)
    if problems:
        return _fail("invalid game: " + "; ".join(problems))

    pol_path = Path(args.policies)
    if not pol_path.is_file():
        return _fail(f"policies file not found: {pol_path}")
    try:
        payload = json.loads(pol_path.read_text())
        x, y = _policies_from_json(spec, payload)
        check_policies(spec, x, y)
    except ValueError as exc:
        return _fail(str(exc))

    report = nash_gap(spec, x, y)
    print(json.dumps(_gap_payload(report), indent=2))
    if report.epsilon_certified <= args.epsilon + 1e-9:
        return EXIT_OK
    return EXIT_GAP_EXCEEDED


# ---------------------------------------------------------------------------
# gridworld
# ---------------------------------------------------------------------------

def cmd_gridworld(args) -> int:
    if args.n < 2:
        return _fail(f"--n must be at least 2, got {args.n}")
    spec = grid_world(args.n, shift_delta=args.shift_delta, discount=args.gamma)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_game(spec, out)
    print(f"wrote {spec.state_count}-state game to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atmg",
        description="Equilibrium solver for adversarial team Markov games.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the full solve pipeline")
    source = solve.add_mutually_exclusive_group(required=True)
    source.add_argument("--game", metavar="PATH", help="game file to load")
    source.add_argument(
        "--gridworld",
        type=int,
        metavar="N",
        help="generate an N x N grid world instead of loading a file",
    )
    solve.add_argument("--epsilon", type=float, help="target accuracy for schedules")
    solve.add_argument("--eta", type=float, help="step size (manual schedule)")
    solve.add_argument("--iters", type=int, help="iteration count (manual schedule)")
    solve.add_argument(
        "--cap-iters", type=int, help="hard cap on scheduled iteration counts"
    )
    solve.add_argument(
        "--schedule",
        choices=("manual", "proposition", "theorem"),
        default="manual",
    )
    solve.add_argument(
        "--select",
        choices=("prox", "random"),
        default="prox",
        help="iterate selection strategy",
    )
    solve.add_argument(
        "--delta", type=float, default=0.5, help="failure probability for --select random"
    )
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--out", required=True, metavar="DIR")
    solve.add_argument(
        "--jobs", type=int, default=1, help="run this many seeds concurrently"
    )
    solve.set_defaults(func=cmd_solve)

    verify = sub.add_parser("verify", help="recompute the Nash gap of stored policies")
    verify.add_argument("--game", required=True, metavar="PATH")
    verify.add_argument("--policies", required=True, metavar="PATH")
    verify.add_argument("--epsilon", type=float, required=True)
    verify.set_defaults(func=cmd_verify)

    grid = sub.add_parser("gridworld", help="write a grid-world game file")
    grid.add_argument("--n", type=int, required=True, help="grid side length (>= 2)")
    grid.add_argument("--gamma", type=float, default=0.9)
    grid.add_argument("--shift-delta", type=float, default=0.05)
    grid.add_argument("--out", default="gridworld.json", metavar="PATH")
    grid.set_defaults(func=cmd_gridworld)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
