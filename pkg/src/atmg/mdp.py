"""Exact evaluation machinery for one game instance.

Everything here is model-based and deterministic: induced Markov chains,
value vectors by dense linear solve, discounted visitation measures, best
responses by value iteration, exact policy gradients under the direct
parametrization, Euclidean projection onto the product of simplices, and
the Lipschitz/smoothness constants of the best-response value function.

Policies are stored directly as probability tables.  The team's flattened
coordinate vector concatenates the per-player blocks in player order, each
block row-major over (state, action); all gradient and projection routines
share that layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import GameSpec

# Value-iteration tolerance: iterate until successive values differ by at
# most VI_TOL * (1 - gamma) / (2 gamma) in sup norm, which leaves the fixed
# point within VI_TOL / 2 of the returned vector.
VI_TOL = 1e-10
_VI_MAX_SWEEPS = 1_000_000

_POLICY_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# Policy containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TeamPolicy:
    """Per-player probability tables: blocks[k] has shape (S, A_k)."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        frozen = []
        for block in self.blocks:
            arr = np.ascontiguousarray(np.asarray(block, dtype=np.float64))
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "blocks", tuple(frozen))

    def as_vector(self) -> np.ndarray:
        """Flatten to the shared team coordinate layout."""
        return np.concatenate([block.ravel() for block in self.blocks])

    def with_block(self, k: int, block: np.ndarray) -> "TeamPolicy":
        """Copy of this policy with player k's table replaced."""
        new_blocks = list(self.blocks)
        new_blocks[k] = block
        return TeamPolicy(tuple(new_blocks))


@dataclass(frozen=True)
class AdversaryPolicy:
    """Adversary probability table of shape (S, B)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)


@dataclass(frozen=True)
class SmoothnessConstants:
    """Lipschitz constant L, smoothness ell, and mismatch bound D_bar."""

    L: float
    ell: float
    D_bar: float


def uniform_team_policy(spec: GameSpec) -> TeamPolicy:
    S = spec.state_count
    return TeamPolicy(tuple(np.full((S, a), 1.0 / a) for a in spec.team_sizes))


def uniform_adversary_policy(spec: GameSpec) -> AdversaryPolicy:
    S, B = spec.state_count, spec.adversary_actions
    return AdversaryPolicy(np.full((S, B), 1.0 / B))


def team_policy_from_vector(spec: GameSpec, vec: np.ndarray) -> TeamPolicy:
    """Inverse of TeamPolicy.as_vector for this game's block sizes."""
    S = spec.state_count
    blocks = []
    offset = 0
    for a in spec.team_sizes:
        blocks.append(vec[offset : offset + S * a].reshape(S, a))
        offset += S * a
    if offset != vec.size:
        raise ValueError(f"team vector has {vec.size} entries, expected {offset}")
    return TeamPolicy(tuple(blocks))


def joint_policy_vector(x: TeamPolicy, y: AdversaryPolicy) -> np.ndarray:
    """Concatenated (team, adversary) coordinates; used for joint-policy norms."""
    return np.concatenate([x.as_vector(), y.probs.ravel()])


def check_policies(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy | None = None) -> None:
    """Raise ValueError unless the policies are valid probability tables."""
    S = spec.state_count
    if len(x.blocks) != spec.n_players:
        raise ValueError(
            f"team policy has {len(x.blocks)} blocks, expected {spec.n_players}"
        )
    for k, (block, a) in enumerate(zip(x.blocks, spec.team_sizes)):
        if block.shape != (S, a):
            raise ValueError(f"block {k} has shape {block.shape}, expected {(S, a)}")
        if (block < 0.0).any() or np.abs(block.sum(axis=1) - 1.0).max() > _POLICY_SUM_TOL:
            raise ValueError(f"block {k} is not a per-state distribution")
    if y is not None:
        if y.probs.shape != (S, spec.adversary_actions):
            raise ValueError(
                f"adversary policy has shape {y.probs.shape}, "
                f"expected {(S, spec.adversary_actions)}"
            )
        if (y.probs < 0.0).any() or np.abs(y.probs.sum(axis=1) - 1.0).max() > _POLICY_SUM_TOL:
            raise ValueError("adversary policy is not a per-state distribution")


# ---------------------------------------------------------------------------
# Induced chains and marginalization
# ---------------------------------------------------------------------------

def joint_action_distribution(spec: GameSpec, x: TeamPolicy) -> np.ndarray:
    """(S, A_joint) table of joint team-action probabilities under x."""
    digits = spec.action_digits
    w = np.ones((spec.state_count, spec.joint_action_count))
    for k, block in enumerate(x.blocks):
        w *= block[:, digits[:, k]]
    return w


def _weights_excluding(spec: GameSpec, x: TeamPolicy, k: int) -> np.ndarray:
    """(S, A_joint) product of all blocks except player k's."""
    digits = spec.action_digits
    w = np.ones((spec.state_count, spec.joint_action_count))
    for other, block in enumerate(x.blocks):
        if other != k:
            w *= block[:, digits[:, other]]
    return w


def _digit_mask(spec: GameSpec, k: int) -> np.ndarray:
    """(A_joint, A_k) one-hot selector: mask[j, a] = 1 iff digit_k(j) = a."""
    digits = spec.action_digits[:, k]
    mask = np.zeros((spec.joint_action_count, spec.team_sizes[k]))
    mask[np.arange(spec.joint_action_count), digits] = 1.0
    return mask


def induced_transition(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> np.ndarray:
    """Row-stochastic S x S matrix of the chain induced by (x, y)."""
    w = joint_action_distribution(spec, x)
    return np.einsum("sj,sb,sjbt->st", w, y.probs, spec.transition, optimize=True)


def induced_reward(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> np.ndarray:
    """Per-state expected adversary reward under (x, y)."""
    w = joint_action_distribution(spec, x)
    return np.einsum("sj,sb,sjb->s", w, y.probs, spec.reward, optimize=True)


def marginal_reward_table(spec: GameSpec, x: TeamPolicy) -> np.ndarray:
    """(S, B) table r(s, x, b), the reward marginalized over the team only."""
    w = joint_action_distribution(spec, x)
    return np.einsum("sj,sjb->sb", w, spec.reward, optimize=True)


def marginal_transition_table(spec: GameSpec, x: TeamPolicy) -> np.ndarray:
    """(S, B, S) table P(s' | s, x, b)."""
    w = joint_action_distribution(spec, x)
    return np.einsum("sj,sjbt->sbt", w, spec.transition, optimize=True)


def marginal_reward(spec: GameSpec, s: int, x: TeamPolicy, b: int) -> float:
    """r(s, x, b) = E_{a ~ x_s}[r(s, a, b)]."""
    w = joint_action_distribution(spec, x)
    return float(w[s] @ spec.reward[s, :, b])


def marginal_transition(spec: GameSpec, s: int, x: TeamPolicy, b: int) -> np.ndarray:
    """Distribution over next states from s when the team plays x and the adversary b."""
    w = joint_action_distribution(spec, x)
    return w[s] @ spec.transition[s, :, b, :]


# ---------------------------------------------------------------------------
# Values and visitation
# ---------------------------------------------------------------------------

def value_vector(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> np.ndarray:
    """Exact policy evaluation: solve (I - gamma P(x,y)) v = r(x,y).

    I - gamma P is strictly diagonally dominant for gamma < 1, so the dense
    solve cannot fail; the residual is checked against 1e-10 * S anyway.
    """
    P = induced_transition(spec, x, y)
    r = induced_reward(spec, x, y)
    M = np.eye(spec.state_count) - spec.discount * P
    v = np.linalg.solve(M, r)
    residual = float(np.abs(M @ v - r).max())
    if residual > 1e-10 * spec.state_count:
        raise RuntimeError(f"policy evaluation residual {residual:g} is out of tolerance")
    return v


def value_rho(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> float:
    """V_rho(x, y) = E_{s ~ rho}[v(s)]."""
    return float(spec.initial_dist @ value_vector(spec, x, y))


def visitation(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> np.ndarray:
    """Unnormalized discounted state occupancy: d' = rho' (I - gamma P)^{-1}.

    Sums to 1/(1 - gamma); satisfies rho(s) <= d(s) <= 1/(1 - gamma).
    """
    P = induced_transition(spec, x, y)
    M = np.eye(spec.state_count) - spec.discount * P
    return np.linalg.solve(M.T, spec.initial_dist)


# ---------------------------------------------------------------------------
# Best responses
# ---------------------------------------------------------------------------

def _value_iteration(r: np.ndarray, P: np.ndarray, gamma: float, maximize: bool):
    """Solve the (S, actions) MDP given tables r[s, u] and P[s, u, s'].

    Returns (v, greedy) where greedy takes the optimizing action per state,
    ties broken toward the lowest index.  With gamma = 0 a single sweep is
    exact.  For gamma > 0 the loop stops when the sup-norm change drops to
    VI_TOL * (1 - gamma) / (2 gamma), which bounds the distance from the
    fixed point by VI_TOL / 2.
    """
    reduce = np.max if maximize else np.min
    pick = np.argmax if maximize else np.argmin

    v = np.zeros(r.shape[0])
    if gamma == 0.0:
        q = r
        v = reduce(q, axis=1)
        return v, pick(q, axis=1)

    threshold = VI_TOL * (1.0 - gamma) / (2.0 * gamma)
    for _ in range(_VI_MAX_SWEEPS):
        q = r + gamma * (P @ v)
        v_next = reduce(q, axis=1)
        delta = float(np.abs(v_next - v).max())
        v = v_next
        if delta <= threshold:
            break
    else:
        raise RuntimeError("value iteration failed to converge")
    q = r + gamma * (P @ v)
    return v, pick(q, axis=1)


def adversary_best_response(spec: GameSpec, x: TeamPolicy):
    """Best adversary policy against a fixed team policy x.

    The adversary faces the single-agent MDP with rewards r(s, x, b) and
    transitions P(s' | s, x, b); value iteration gives its optimal value
    vector v_hat, and one greedy extraction yields a deterministic policy.
    rho' v_hat equals phi(x) = max_y V_rho(x, y) up to the VI tolerance.

    Returns (y_star, v_hat).
    """
    r_x = marginal_reward_table(spec, x)
    P_x = marginal_transition_table(spec, x)
    v_hat, greedy = _value_iteration(r_x, P_x, spec.discount, maximize=True)
    probs = np.zeros((spec.state_count, spec.adversary_actions))
    probs[np.arange(spec.state_count), greedy] = 1.0
    return AdversaryPolicy(probs), v_hat


def team_player_best_response(spec: GameSpec, k: int, x_minus_k: TeamPolicy, y: AdversaryPolicy):
    """Player k's best deviation while everyone else stays put.

    Team members are paid -r/n, so the deviating player faces the MDP over
    its own A_k actions that MINIMIZES the adversary's value.  x_minus_k
    supplies the frozen teammates; its block k is ignored.  Returns the
    deterministic table (S, A_k) and the minimized value rho' v.
    """
    w = _weights_excluding(spec, x_minus_k, k)
    mask = _digit_mask(spec, k)
    # U[s, j] and PT[s, j, s']: reward and transition mixed over b ~ y only.
    U = np.einsum("sb,sjb->sj", y.probs, spec.reward, optimize=True)
    PT = np.einsum("sb,sjbt->sjt", y.probs, spec.transition, optimize=True)
    r_k = np.einsum("sj,sj,ja->sa", w, U, mask, optimize=True)
    P_k = np.einsum("sj,sjt,ja->sat", w, PT, mask, optimize=True)
    v_min, greedy = _value_iteration(r_k, P_k, spec.discount, maximize=False)
    table = np.zeros((spec.state_count, spec.team_sizes[k]))
    table[np.arange(spec.state_count), greedy] = 1.0
    return table, float(spec.initial_dist @ v_min)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def policy_gradient(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> np.ndarray:
    """Exact gradient of V_rho(x, y) in all team coordinates.

    dV/dx_{k,s,a} = d(s) * Qbar_k(s, a) with the unnormalized visitation d
    and Qbar_k(s, a) the expected one-step-plus-continuation payoff when
    player k pins action a and everyone else follows (x_{-k}, y):

        Qbar_k(s,a) = E[ r(s,(a;a_{-k}),b) + gamma sum_{s'} P(s'|...) v(s') ]

    The identity holds for the multilinear extension off the simplex too,
    which is what the finite-difference oracle checks.
    """
    v = value_vector(spec, x, y)
    d = visitation(spec, x, y)
    # W[s, j]: payoff of joint action j mixed over b ~ y, with continuation.
    W = np.einsum("sb,sjb->sj", y.probs, spec.reward, optimize=True)
    W = W + spec.discount * np.einsum(
        "sb,sjbt,t->sj", y.probs, spec.transition, v, optimize=True
    )
    parts = []
    for k in range(spec.n_players):
        w = _weights_excluding(spec, x, k)
        qbar = (w * W) @ _digit_mask(spec, k)
        parts.append((d[:, None] * qbar).ravel())
    return np.concatenate(parts)


def adversary_policy_gradient(spec: GameSpec, x: TeamPolicy, y: AdversaryPolicy) -> np.ndarray:
    """Gradient of V_rho in the adversary's coordinates, flattened (S*B,).

    dV/dy_{s,b} = d(s) * (r(s,x,b) + gamma sum_{s'} P(s'|s,x,b) v(s')).
    Together with policy_gradient this makes up the full joint gradient,
    which the smoothness certificates measure.
    """
    v = value_vector(spec, x, y)
    d = visitation(spec, x, y)
    q = marginal_reward_table(spec, x) + spec.discount * (
        marginal_transition_table(spec, x) @ v
    )
    return (d[:, None] * q).ravel()


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def _project_simplex_rows(mat: np.ndarray) -> np.ndarray:
    """Project each row of `mat` onto the probability simplex.

    Sort-and-threshold: with u the row sorted in descending order and
    css its cumulative sum, the threshold is tau = (css_rho - 1) / rho at
    the largest rho with u_rho > (css_rho - 1) / rho; the projection is
    max(row - tau, 0).
    """
    m, d = mat.shape
    u = np.sort(mat, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1)
    idx = np.arange(1, d + 1)
    cond = u > (css - 1.0) / idx
    rho = d - np.argmax(cond[:, ::-1], axis=1)  # last column where cond holds
    tau = (css[np.arange(m), rho - 1] - 1.0) / rho
    return np.maximum(mat - tau[:, None], 0.0)


def project_product_simplex(spec: GameSpec, z: np.ndarray) -> TeamPolicy:
    """Euclidean projection of flat team coordinates onto the product of simplices.

    Each (player, state) block is projected independently, so the operator
    is nonexpansive on the whole team vector.
    """
    S = spec.state_count
    blocks = []
    offset = 0
    for a in spec.team_sizes:
        block = z[offset : offset + S * a].reshape(S, a)
        blocks.append(_project_simplex_rows(block))
        offset += S * a
    if offset != z.size:
        raise ValueError(f"team vector has {z.size} entries, expected {offset}")
    return TeamPolicy(tuple(blocks))


# ---------------------------------------------------------------------------
# Smoothness constants
# ---------------------------------------------------------------------------

def smoothness_constants(spec: GameSpec) -> SmoothnessConstants:
    """L, ell, and the mismatch bound D_bar for this game.

        L     = sqrt(sum_k A_k + B) / (1 - gamma)^2
        ell   = 2 (sum_k A_k + B) / (1 - gamma)^3
        D_bar = 1 / ((1 - gamma) * min_s rho(s))

    V_rho is L-Lipschitz and ell-smooth in the joint policy; D_bar upper
    bounds the distribution mismatch coefficient since d(s) <= 1/(1-gamma).
    """
    total = spec.sum_team_actions + spec.adversary_actions
    one_minus = 1.0 - spec.discount
    L = np.sqrt(total) / one_minus**2
    ell = 2.0 * total / one_minus**3
    D_bar = 1.0 / (one_minus * float(spec.initial_dist.min()))
    return SmoothnessConstants(L=float(L), ell=float(ell), D_bar=float(D_bar))
