"""From a near-stationary team policy to an approximate Nash equilibrium.

The team side of the equilibrium is the near-stationary policy x_hat itself.
The adversary side comes out of a linear program over occupancy-style
multipliers lambda(s, b): its constraints relax the adversary's Bellman
conditions at x_hat by c2*eps and the team players' first-order conditions
by c1*eps, and any feasible point, row-normalized, is the equilibrium
policy y_hat.  The certifier below (nash_gap) then measures the result
exactly, one best-response solve per player, so no bound has to be taken
on faith.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import GameSpec
from .lp import FEASIBLE, OPTIMAL, LinearProgram, find_feasible, solve
from .mdp import (
    AdversaryPolicy,
    TeamPolicy,
    _digit_mask,
    _weights_excluding,
    adversary_best_response,
    check_policies,
    marginal_reward_table,
    marginal_transition_table,
    smoothness_constants,
    team_player_best_response,
    value_rho,
)

GAP_FLOOR = -1e-9


class LpAdvInfeasibleError(RuntimeError):
    """The adversary LP had no feasible point at the given epsilon.

    Carries the largest constraint violation seen at the final phase-1
    point; a small value suggests epsilon was tight rather than the input
    policy being far from stationary.
    """

    def __init__(self, message: str, max_violation: float):
        super().__init__(message)
        self.max_violation = float(max_violation)


@dataclass(frozen=True)
class ExtensionConstants:
    c1: float
    c2: float


@dataclass(frozen=True)
class LagrangeMultipliers:
    """Feasible lambda(s, b) table; the spec symbol is a Python keyword."""

    table: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return self.table.sum(axis=1)


@dataclass(frozen=True)
class NashGapReport:
    """Exact unilateral-deviation gaps at a joint policy."""

    team_gaps: np.ndarray
    adversary_gap: float
    epsilon_certified: float


def extension_constants(spec: GameSpec) -> ExtensionConstants:
    """c2 bundles the Bellman-perturbation terms, c1 = 4 ell + c2."""
    sm = smoothness_constants(spec)
    gamma = spec.discount
    S = spec.state_count
    root = float(np.sqrt(spec.sum_team_actions))
    one_minus = 1.0 - gamma
    c2 = (root + gamma * S * root / one_minus + gamma * S * sm.L + sm.L) / one_minus
    c1 = 4.0 * sm.ell + c2
    return ExtensionConstants(c1=c1, c2=c2)


# ---------------------------------------------------------------------------
# LP_adv
# ---------------------------------------------------------------------------

def build_lp_adv(
    spec: GameSpec,
    x_hat: TeamPolicy,
    v_hat: np.ndarray,
    epsilon: float,
) -> LinearProgram:
    """Assemble the adversary LP at (x_hat, v_hat).

    Variables are lambda(s, b) >= 0, flattened state-major.  Rows, in
    order:

      (a) per player k, state s, action a: the deviation Q-value of
          playing a against x_hat's other blocks, averaged under lambda(s, .),
          exceeds v_hat(s) by at least -c1*eps;
      (b), (c) per (s, b): lambda(s, b) times the Bellman slack of (s, b)
          at x_hat stays within [-c2*eps, +c2*eps] (the slack is a scalar,
          so each row touches a single variable);
      (d) per s: sum_b lambda(s, b) >= rho(s);
      (e) per s: sum_b lambda(s, b) <= 1/(1-gamma).

    The objective maximizes sum lambda(s, b) r(s, x_hat, b); feasibility is
    what matters downstream, but the objective is kept for callers that
    want a distinguished vertex.  epsilon may be zero, which pins the
    perturbation rows to exact equalities of sense.
    """
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    v_hat = np.asarray(v_hat, dtype=np.float64)
    if v_hat.shape != (spec.state_count,):
        raise ValueError(
            f"v_hat has shape {v_hat.shape}, expected ({spec.state_count},)"
        )
    check_policies(spec, x_hat)

    S, B = spec.state_count, spec.adversary_actions
    gamma = spec.discount
    n_vars = S * B
    cons = extension_constants(spec)

    # W[s, j, b] = r(s, j, b) + gamma * sum_t P(t | s, j, b) v_hat(t)
    W = spec.reward + gamma * np.einsum("sjbt,t->sjb", spec.transition, v_hat)

    rows: list[np.ndarray] = []
    senses: list[str] = []
    rhs: list[float] = []

    # (a) team first-order rows, player-major.
    for k in range(spec.n_players):
        w = _weights_excluding(spec, x_hat, k)           # (S, A_joint)
        mask = _digit_mask(spec, k)                      # (A_joint, A_k)
        # R[s, a, b]: deviation value of player k playing a at state s.
        R = np.einsum("sj,sjb,ja->sab", w, W, mask)
        coef = R - v_hat[:, None, None]                  # (S, A_k, B)
        for s in range(S):
            for a in range(spec.team_sizes[k]):
                row = np.zeros(n_vars)
                row[s * B : (s + 1) * B] = coef[s, a]
                rows.append(row)
                senses.append(">=")
                rhs.append(-cons.c1 * epsilon)

    # (b), (c) adversary Bellman slack rows.  slack[s, b] is a constant,
    # so the row has a single nonzero coefficient.
    r_x = marginal_reward_table(spec, x_hat)             # (S, B)
    P_x = marginal_transition_table(spec, x_hat)         # (S, B, S)
    slack = r_x + gamma * P_x @ v_hat - v_hat[:, None]   # (S, B)
    for sense, bound in (("<=", cons.c2), (">=", -cons.c2)):
        for s in range(S):
            for b in range(B):
                row = np.zeros(n_vars)
                row[s * B + b] = slack[s, b]
                rows.append(row)
                senses.append(sense)
                rhs.append(bound * epsilon)

    # (d), (e) row-sum corridor.
    for s in range(S):
        row = np.zeros(n_vars)
        row[s * B : (s + 1) * B] = 1.0
        rows.append(row)
        senses.append(">=")
        rhs.append(float(spec.initial_dist[s]))
    for s in range(S):
        row = np.zeros(n_vars)
        row[s * B : (s + 1) * B] = 1.0
        rows.append(row)
        senses.append("<=")
        rhs.append(1.0 / (1.0 - gamma))

    return LinearProgram(
        objective=r_x.ravel().copy(),
        lhs=np.array(rows),
        senses=tuple(senses),
        rhs=np.array(rhs),
    )


def adv_nash_policy(
    spec: GameSpec,
    x_hat: TeamPolicy,
    epsilon: float,
    *,
    optimize: bool = False,
) -> tuple[AdversaryPolicy, LagrangeMultipliers]:
    """Extract the adversary's equilibrium policy at a near-stationary x_hat.

    Solves the adversary's best-response MDP for v_hat, builds the LP, takes
    any feasible point (or the objective-optimal one when optimize=True),
    and row-normalizes it.  The normalization is safe because every feasible
    lambda has row sums at least rho(s) > 0.
    """
    _, v_hat = adversary_best_response(spec, x_hat)
    lp = build_lp_adv(spec, x_hat, v_hat, epsilon)
    sol = solve(lp) if optimize else find_feasible(lp)
    if sol.status not in (FEASIBLE, OPTIMAL):
        raise LpAdvInfeasibleError(
            f"adversary LP {sol.status} at epsilon={epsilon:.6g} "
            f"(max violation {sol.max_violation:.3e})",
            sol.max_violation,
        )
    lam = sol.x.reshape(spec.state_count, spec.adversary_actions)
    lam = np.maximum(lam, 0.0)
    y_hat = lam / lam.sum(axis=1, keepdims=True)
    return AdversaryPolicy(probs=y_hat), LagrangeMultipliers(table=lam)


# ---------------------------------------------------------------------------
# Exact verification
# ---------------------------------------------------------------------------

def nash_gap(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> NashGapReport:
    """Exact unilateral deviation gains at (x, y), no sampling anywhere.

    team_gaps[k] is how much player k could lower the adversary's value by
    deviating alone (a positive number; the team minimizes).  adversary_gap
    is how much the adversary could raise it.  Tiny negatives from the
    linear solves are floored at -1e-9.
    """
    check_policies(spec, x, y)
    base = value_rho(spec, x, y)

    _, v_best = adversary_best_response(spec, x)
    adv_gap = float(spec.initial_dist @ v_best) - base

    team = np.empty(spec.n_players)
    for k in range(spec.n_players):
        _, best_k = team_player_best_response(spec, k, x, y)
        team[k] = base - best_k

    team = np.maximum(team, GAP_FLOOR)
    adv_gap = max(adv_gap, GAP_FLOOR)
    certified = float(max(adv_gap, team.max() if team.size else GAP_FLOOR))
    return NashGapReport(
        team_gaps=team,
        adversary_gap=adv_gap,
        epsilon_certified=certified,
    )


def check_epsilon_ne(
    spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy, epsilon: float
) -> bool:
    return nash_gap(spec, x, y).epsilon_certified <= epsilon + 1e-9


def qnlp_residuals(
    spec: GameSpec,
    x: TeamPolicy,
    v: np.ndarray,
    x_anchor: TeamPolicy,
) -> dict[str, float]:
    """Objective and worst constraint violation of the regularized program

        min  rho' v + ell ||x - x_anchor||^2
        s.t. r(s, x, b) + gamma sum_t P(t | s, x, b) v(t) <= v(s),
             x a product of simplices.

    Used as an identity oracle: at (x, v_best_response(x)) the violation is
    zero and the objective equals phi(x) plus the proximity term.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (spec.state_count,):
        raise ValueError(f"v has shape {v.shape}, expected ({spec.state_count},)")
    ell = smoothness_constants(spec).ell
    diff = x.as_vector() - x_anchor.as_vector()
    objective = float(spec.initial_dist @ v) + ell * float(diff @ diff)

    r_x = marginal_reward_table(spec, x)
    P_x = marginal_transition_table(spec, x)
    bellman = r_x + spec.discount * P_x @ v - v[:, None]
    violation = float(np.maximum(bellman, 0.0).max())
    for block in x.blocks:
        violation = max(violation, float(np.abs(block.sum(axis=1) - 1.0).max()))
        violation = max(violation, float(np.maximum(-block, 0.0).max()))
    return {"objective": objective, "max_violation": violation}
