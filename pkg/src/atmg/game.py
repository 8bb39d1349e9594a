"""Tabular adversarial team Markov games.

A game couples n identically-interested team players against a single
adversary.  Only the adversary's instantaneous payoff r(s, a, b) is stored;
each team player implicitly receives -r/n, so total rewards sum to zero.
Joint team actions are flattened to one mixed-radix index with player 1
fastest-varying: a_joint = a_1 + A_1*a_2 + A_1*A_2*a_3 + ...

The file schema (version "atmg-v1") serializes the reward and transition
tensors as nested JSON arrays in the same index order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "atmg-v1"

# Tolerances used by validate().
_STOCHASTIC_TOL = 1e-12
_DIST_TOL = 1e-12


class DegenerateRewardsError(ValueError):
    """Raised when rewards cannot be normalized because max r = min r."""


@dataclass(frozen=True)
class GameSpec:
    """Immutable description of one game instance.

    Fields
    ------
    state_count        S
    team_sizes         (A_1, ..., A_n), the per-player action counts
    adversary_actions  B
    reward             r[s, a_joint, b], the adversary's payoff
    transition         P[s, a_joint, b, s']
    discount           gamma in [0, 1)
    initial_dist       rho, a full-support distribution over states
    """

    state_count: int
    team_sizes: tuple[int, ...]
    adversary_actions: int
    reward: np.ndarray
    transition: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self) -> None:
        # Coerce to read-only float arrays so instances can be shared freely.
        object.__setattr__(self, "team_sizes", tuple(int(a) for a in self.team_sizes))
        for name in ("reward", "transition", "initial_dist"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "state_count", int(self.state_count))
        object.__setattr__(self, "adversary_actions", int(self.adversary_actions))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_players(self) -> int:
        return len(self.team_sizes)

    @cached_property
    def joint_action_count(self) -> int:
        return int(np.prod(self.team_sizes))

    @property
    def sum_team_actions(self) -> int:
        return int(sum(self.team_sizes))

    @cached_property
    def action_digits(self) -> np.ndarray:
        """(A_joint, n) table: digits[j, k] is player k's action in joint index j."""
        digits = np.empty((self.joint_action_count, self.n_players), dtype=np.int64)
        radix = 1
        for k, size in enumerate(self.team_sizes):
            digits[:, k] = (np.arange(self.joint_action_count) // radix) % size
            radix *= size
        digits.setflags(write=False)
        return digits

    def joint_index(self, actions) -> int:
        """Flatten per-player actions (a_1, ..., a_n) to the joint index."""
        j = 0
        radix = 1
        for a, size in zip(actions, self.team_sizes):
            if not 0 <= a < size:
                raise ValueError(f"action {a} out of range for size {size}")
            j += int(a) * radix
            radix *= size
        return j


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(spec: GameSpec) -> list[str]:
    """Check every structural invariant; return a list of violations.

    An empty list means the game is well formed.  This never raises: it is a
    reporting operation, and each message names the offending tensor index.
    """
    problems: list[str] = []
    S, B = spec.state_count, spec.adversary_actions
    A = spec.joint_action_count

    if S < 1:
        problems.append(f"state_count must be positive, got {S}")
    if not spec.team_sizes or any(a < 1 for a in spec.team_sizes):
        problems.append(f"team_sizes must be positive integers, got {spec.team_sizes}")
    if B < 1:
        problems.append(f"adversary_actions must be positive, got {B}")
    if not 0.0 <= spec.discount < 1.0:
        problems.append(f"discount must lie in [0, 1), got {spec.discount}")
    if problems:
        return problems

    if spec.reward.shape != (S, A, B):
        problems.append(
            f"reward shape {spec.reward.shape} != expected {(S, A, B)}"
        )
    if spec.transition.shape != (S, A, B, S):
        problems.append(
            f"transition shape {spec.transition.shape} != expected {(S, A, B, S)}"
        )
    if spec.initial_dist.shape != (S,):
        problems.append(
            f"initial_dist shape {spec.initial_dist.shape} != expected {(S,)}"
        )
    if problems:
        return problems

    if not np.isfinite(spec.reward).all():
        bad = np.argwhere(~np.isfinite(spec.reward))[0]
        problems.append(f"reward has non-finite entry at (s={bad[0]}, a_joint={bad[1]}, b={bad[2]})")
    if not np.isfinite(spec.transition).all():
        bad = np.argwhere(~np.isfinite(spec.transition))[0]
        problems.append(
            f"transition has non-finite entry at (s={bad[0]}, a_joint={bad[1]}, b={bad[2]}, s'={bad[3]})"
        )

    neg = spec.transition < 0.0
    if neg.any():
        for s, a, b, t in np.argwhere(neg)[:5]:
            problems.append(
                f"transition entry (s={s}, a_joint={a}, b={b}, s'={t}) is negative: "
                f"{spec.transition[s, a, b, t]:.17g}"
            )

    row_sums = spec.transition.sum(axis=3)
    bad_rows = np.abs(row_sums - 1.0) > _STOCHASTIC_TOL
    if bad_rows.any():
        for s, a, b in np.argwhere(bad_rows)[:5]:
            problems.append(
                f"transition row (s={s}, a_joint={a}, b={b}) sums to "
                f"{row_sums[s, a, b]:.17g}, expected 1 within {_STOCHASTIC_TOL:g}"
            )

    rho = spec.initial_dist
    if not np.isfinite(rho).all():
        problems.append("initial_dist has non-finite entries")
    else:
        for (s,) in np.argwhere(rho <= 0.0)[:5]:
            problems.append(
                f"initial_dist is not full support: rho(s={s}) = {rho[s]:.17g} <= 0"
            )
        total = float(rho.sum())
        if abs(total - 1.0) > _DIST_TOL:
            problems.append(
                f"initial_dist sums to {total:.17g}, expected 1 within {_DIST_TOL:g}"
            )

    return problems


# ---------------------------------------------------------------------------
# Reward normalization
# ---------------------------------------------------------------------------

def normalize_rewards(
    spec: GameSpec, delta: float = 0.05
) -> tuple[GameSpec, float, float]:
    """Affinely map rewards into (0, 1), keeping a margin delta at each end.

    r' = (r - min r + delta) / (max r - min r + 2 delta)

    Returns (new_spec, shift, scale) with r' = (r + shift) * scale, so that
    gap reports computed on the normalized game can be converted back to the
    original reward units by dividing by `scale`.  The map is an additive
    shift followed by a positive scaling, hence strategically neutral: it
    preserves best responses, equilibria, and the ordering of deviations.

    Raises DegenerateRewardsError when all rewards are equal.
    """
    lo = float(spec.reward.min())
    hi = float(spec.reward.max())
    if hi == lo:
        raise DegenerateRewardsError(
            f"all rewards equal {lo:.17g}; the game is strategically trivial"
        )
    denom = hi - lo + 2.0 * delta
    scale = 1.0 / denom
    shift = delta - lo
    new_spec = GameSpec(
        state_count=spec.state_count,
        team_sizes=spec.team_sizes,
        adversary_actions=spec.adversary_actions,
        reward=(spec.reward + shift) / denom,
        transition=spec.transition,
        discount=spec.discount,
        initial_dist=spec.initial_dist,
    )
    return new_spec, shift, scale


# ---------------------------------------------------------------------------
# Grid-world generator
# ---------------------------------------------------------------------------

def grid_world(
    n_grid: int, shift_delta: float = 0.05, discount: float = 0.9
) -> GameSpec:
    """Two team agents and an adversary on an n x n grid with two landmarks.

    State = (pos_1, pos_2, pos_adv) plus one absorbing terminal state, for
    n^6 + 1 states in total.  Every agent has the 4 cardinal moves (up, down,
    left, right), clamped at walls; all three move synchronously, and team
    agents may share a cell.  Landmarks sit at the opposite corners (0, 0)
    and (n-1, n-1).

    Termination is evaluated on arrival.  If after a synchronous move the
    team covers both landmarks (one agent on each), the game transitions to
    the terminal state with raw adversary reward -1.  Otherwise, if the
    adversary has reached either landmark, the transition is terminal with
    raw reward +1.  A simultaneous arrival is therefore won by the team.
    All other steps carry reward 0, as does the terminal self-loop.

    Raw rewards {-1, 0, +1} are passed through normalize_rewards with margin
    shift_delta, which maps 0 to exactly 0.5; the absorbed process is worth
    the midpoint to both sides.  The initial distribution is uniform over
    all states (terminal included) so that it has full support.
    """
    if n_grid < 2:
        raise ValueError(f"n_grid must be at least 2, got {n_grid}")

    cells = n_grid * n_grid
    live = cells**3          # non-terminal states
    S = live + 1
    terminal = S - 1
    landmark_a = 0
    landmark_b = cells - 1

    # moved[c, m]: cell reached from cell c by move m, clamped at the walls.
    # Moves: 0 = up (row-1), 1 = down (row+1), 2 = left (col-1), 3 = right.
    rows, cols = np.divmod(np.arange(cells), n_grid)
    moved = np.empty((cells, 4), dtype=np.int64)
    moved[:, 0] = np.maximum(rows - 1, 0) * n_grid + cols
    moved[:, 1] = np.minimum(rows + 1, n_grid - 1) * n_grid + cols
    moved[:, 2] = rows * n_grid + np.maximum(cols - 1, 0)
    moved[:, 3] = rows * n_grid + np.minimum(cols + 1, n_grid - 1)

    A_joint = 16             # two team players, 4 actions each, player 1 fastest
    B = 4
    reward = np.zeros((S, A_joint, B))
    transition = np.zeros((S, A_joint, B, S))

    s_all = np.arange(live)
    p1 = s_all % cells
    p2 = (s_all // cells) % cells
    pa = s_all // (cells * cells)

    for a1 in range(4):
        for a2 in range(4):
            j = a1 + 4 * a2
            q1 = moved[p1, a1]
            q2 = moved[p2, a2]
            covered = ((q1 == landmark_a) & (q2 == landmark_b)) | (
                (q1 == landmark_b) & (q2 == landmark_a)
            )
            for b in range(4):
                qa = moved[pa, b]
                adv_arrived = (qa == landmark_a) | (qa == landmark_b)
                team_win = covered
                adv_win = adv_arrived & ~covered
                done = team_win | adv_win
                nxt = np.where(done, terminal, q1 + cells * q2 + cells * cells * qa)
                transition[s_all, j, b, nxt] = 1.0
                reward[s_all[team_win], j, b] = -1.0
                reward[s_all[adv_win], j, b] = 1.0

    transition[terminal, :, :, terminal] = 1.0

    raw = GameSpec(
        state_count=S,
        team_sizes=(4, 4),
        adversary_actions=B,
        reward=reward,
        transition=transition,
        discount=discount,
        initial_dist=np.full(S, 1.0 / S),
    )
    normalized, _, _ = normalize_rewards(raw, delta=shift_delta)
    return normalized


# ---------------------------------------------------------------------------
# Serialization ("atmg-v1")
# ---------------------------------------------------------------------------

def save_game(spec: GameSpec, path) -> None:
    """Write `spec` to a JSON game file (schema "atmg-v1").

    Floats are serialized via Python's repr, which carries 17 significant
    digits and round-trips bit-identically.
    """
    doc = {
        "schema": SCHEMA_VERSION,
        "states": spec.state_count,
        "team_sizes": list(spec.team_sizes),
        "adversary_actions": spec.adversary_actions,
        "gamma": spec.discount,
        "rho": spec.initial_dist.tolist(),
        "reward": spec.reward.tolist(),
        "transition": spec.transition.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_game(path) -> GameSpec:
    """Load a game file written by save_game; raises ValueError on bad schema."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: top level must be an object")
    schema = doc.get("schema")
    if schema != SCHEMA_VERSION:
        raise ValueError(
            f"{path}: unsupported schema {schema!r}, expected {SCHEMA_VERSION!r}"
        )
    required = ("states", "team_sizes", "adversary_actions", "gamma", "rho", "reward", "transition")
    missing = [key for key in required if key not in doc]
    if missing:
        raise ValueError(f"{path}: missing fields {missing}")
    try:
        return GameSpec(
            state_count=doc["states"],
            team_sizes=tuple(doc["team_sizes"]),
            adversary_actions=doc["adversary_actions"],
            reward=np.asarray(doc["reward"], dtype=np.float64),
            transition=np.asarray(doc["transition"], dtype=np.float64),
            discount=doc["gamma"],
            initial_dist=np.asarray(doc["rho"], dtype=np.float64),
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed game data: {exc}") from exc
