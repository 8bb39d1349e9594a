"""Shared fixtures: the matching-pennies game and random-game generators.

Random games use Dirichlet transition rows, rewards uniform in (0.05, 0.95)
so value bounds have real margin, and an initial distribution mixed with
uniform so it always has full support.
"""

from __future__ import annotations

import numpy as np
import pytest

from atmg import AdversaryPolicy, GameSpec, TeamPolicy


def make_random_game(
    rng: np.random.Generator,
    state_count: int,
    team_sizes: tuple[int, ...],
    adversary_actions: int,
    discount: float,
) -> GameSpec:
    A_joint = int(np.prod(team_sizes))
    S, B = state_count, adversary_actions
    reward = rng.uniform(0.05, 0.95, size=(S, A_joint, B))
    transition = rng.dirichlet(np.ones(S), size=(S, A_joint, B))
    rho = 0.5 * rng.dirichlet(np.ones(S)) + 0.5 / S
    return GameSpec(
        state_count=S,
        team_sizes=team_sizes,
        adversary_actions=B,
        reward=reward,
        transition=transition,
        discount=discount,
        initial_dist=rho,
    )


def random_game_dims(rng: np.random.Generator) -> tuple[int, tuple[int, ...], int]:
    S = int(rng.integers(1, 6))
    n = int(rng.integers(1, 3))
    team_sizes = tuple(int(rng.integers(2, 4)) for _ in range(n))
    B = int(rng.integers(2, 4))
    return S, team_sizes, B


def random_policies(
    rng: np.random.Generator, spec: GameSpec
) -> tuple[TeamPolicy, AdversaryPolicy]:
    blocks = tuple(
        rng.dirichlet(np.ones(a), size=spec.state_count) for a in spec.team_sizes
    )
    probs = rng.dirichlet(np.ones(spec.adversary_actions), size=spec.state_count)
    return TeamPolicy(blocks=blocks), AdversaryPolicy(probs=probs)


def pennies_game() -> GameSpec:
    reward = np.array([[[0.9, 0.1], [0.1, 0.9]]])
    transition = np.ones((1, 2, 2, 1))
    return GameSpec(
        state_count=1,
        team_sizes=(2,),
        adversary_actions=2,
        reward=reward,
        transition=transition,
        discount=0.0,
        initial_dist=np.array([1.0]),
    )


@pytest.fixture
def pennies() -> GameSpec:
    return pennies_game()


@pytest.fixture(scope="session")
def gridworld2() -> GameSpec:
    from atmg import grid_world

    return grid_world(2)
