"""
file: theory_oracle.py
brief: exact value computations on goal-navigation grid worlds, used to check how far a context-unaware
       policy can fall behind a context-aware one
note: positions are start + D * (basis @ k) for integer lattice offsets k; moves are +-1 along each
      lattice axis or stay; a goal is reached when the Euclidean distance to its centre is below tau * D.
      Values follow the step convention value = gamma^steps with at least one step taken.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np  # pylint: disable=import-error
import pandas as pd  # pylint: disable=import-error

from .msg_utils import msg_step

BRANCHES = ("far", "close")
MAX_GOALS = 12
# the far-branch premise asks for pairwise separations above this many goal radii
FAR_SEPARATION = 4.0


class PremiseError(ValueError):
    """A world does not satisfy the separation premise of the requested branch."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


@dataclass
class _Grid:
    offsets: np.ndarray  # (M, d) lattice offsets
    positions: np.ndarray  # (M, d) world coordinates
    neighbours: np.ndarray  # (M, 2d + 1) next cell per move, moves into walls stay put
    goal_bits: np.ndarray  # (M,) bit i set when the cell lies in goal i
    start: int
    diameter: int


@dataclass(eq=False)
class GoalCmdp:
    """Deterministic navigation world; each context is one goal centre."""

    goals: np.ndarray
    step_length: float = 1.0
    tau: int = 1
    gamma: float = 0.9
    start: np.ndarray | None = None
    blocked: frozenset = frozenset()
    basis: np.ndarray | None = None
    margin: int | None = None

    def __post_init__(self):
        self.goals = np.atleast_2d(np.asarray(self.goals, dtype=np.float64))
        dim = self.goals.shape[1]
        self.start = np.zeros(dim) if self.start is None else np.asarray(self.start, dtype=np.float64)
        self.basis = np.eye(dim) if self.basis is None else np.asarray(self.basis, dtype=np.float64)
        self.blocked = frozenset(tuple(int(v) for v in cell) for cell in self.blocked)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.step_length <= 0 or self.tau < 1:
            raise ValueError("step_length must be positive and tau at least 1")
        if not 1 <= len(self.goals) <= MAX_GOALS:
            raise ValueError(f"between 1 and {MAX_GOALS} goals supported, got {len(self.goals)}")
        if self.start.shape != (dim,) or self.basis.shape != (dim, dim):
            raise ValueError(f"start and basis must match the goal dimension {dim}")
        if tuple([0] * dim) in self.blocked:
            raise ValueError("the start cell is blocked")

    @property
    def dim(self) -> int:
        return self.goals.shape[1]

    @property
    def n_goals(self) -> int:
        return len(self.goals)

    @property
    def radius(self) -> float:
        return self.tau * self.step_length

    def lattice_coordinates(self, points) -> np.ndarray:
        return np.linalg.solve(self.basis, (np.atleast_2d(points) - self.start).T).T / self.step_length

    @cached_property
    def grid(self) -> _Grid:
        margin = self.tau + 2 if self.margin is None else self.margin
        corners = np.vstack([self.lattice_coordinates(self.goals), np.zeros((1, self.dim))])
        low = np.floor(corners.min(axis=0)).astype(int) - margin
        high = np.ceil(corners.max(axis=0)).astype(int) + margin
        box = tuple(int(v) for v in high - low + 1)

        offsets = np.array(list(itertools.product(*(range(lo, hi + 1) for lo, hi in zip(low, high)))))
        keep = np.array([tuple(cell) not in self.blocked for cell in offsets], dtype=bool)
        offsets = offsets[keep]
        lookup = np.full(box, -1, dtype=np.int64)
        lookup[tuple((offsets - low).T)] = np.arange(len(offsets))

        moves = [np.zeros(self.dim, dtype=int)]
        for axis in range(self.dim):
            for sign in (1, -1):
                step = np.zeros(self.dim, dtype=int)
                step[axis] = sign
                moves.append(step)
        neighbours = np.empty((len(offsets), len(moves)), dtype=np.int64)
        for j, move in enumerate(moves):
            target = offsets + move - low
            inside = np.all((target >= 0) & (target < np.array(box)), axis=1)
            idx = np.full(len(offsets), -1, dtype=np.int64)
            idx[inside] = lookup[tuple(target[inside].T)]
            neighbours[:, j] = np.where(idx >= 0, idx, np.arange(len(offsets)))

        positions = self.start + self.step_length * offsets @ self.basis.T
        distances = np.linalg.norm(positions[:, None, :] - self.goals[None, :, :], axis=2)
        goal_bits = ((distances < self.radius) * (1 << np.arange(self.n_goals))).sum(axis=1)
        start = int(lookup[tuple(-low)])
        return _Grid(offsets, positions, neighbours, goal_bits.astype(np.int64), start, int(sum(box)))

    def in_goal(self, index: int) -> np.ndarray:
        return (self.grid.goal_bits >> index) & 1 == 1


def alpha_upper_bound(n: int, gamma: float, d_min: float) -> float:
    """(1/N) (1 - gamma^(N d_min)) / (1 - gamma^d_min): best unaware-to-aware value ratio for far-apart goals."""
    if n < 1 or d_min < 1:
        raise ValueError(f"need n >= 1 and d_min >= 1, got n={n}, d_min={d_min}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"the bound is singular for gamma={gamma}, expected 0 < gamma < 1")
    g = gamma**d_min
    return (1.0 - g**n) / (n * (1.0 - g))


def min_inter_context_distance(contexts, step_length: float = 1.0) -> int:
    """Fewest steps of length step_length separating any two distinct contexts."""
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if len(contexts) < 2:
        raise ValueError("at least two contexts are needed")
    gaps = [
        np.linalg.norm(contexts[i] - contexts[j]) for i, j in itertools.combinations(range(len(contexts)), 2)
    ]
    gaps = [gap for gap in gaps if gap > 0]
    if not gaps:
        raise ValueError("all contexts are identical")
    # tolerate float noise on exact multiples of the step
    return int(math.ceil(min(gaps) / step_length - 1e-9))


def _bfs(grid: _Grid, source: int) -> np.ndarray:
    dist = np.full(len(grid.offsets), -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source])
    steps = 0
    while len(frontier):
        steps += 1
        nxt = np.unique(grid.neighbours[frontier].ravel())
        nxt = nxt[dist[nxt] < 0]
        dist[nxt] = steps
        frontier = nxt
    return dist


def first_hit_steps(world: GoalCmdp) -> np.ndarray:
    """Shortest number of steps (>= 1) from the start into each goal; -1 when a goal cannot be reached."""
    dist = _bfs(world.grid, world.grid.start)
    hits = np.full(world.n_goals, -1, dtype=np.int64)
    for i in range(world.n_goals):
        reachable = dist[world.in_goal(i) & (dist >= 0)]
        if len(reachable):
            hits[i] = max(1, int(reachable.min()))
    return hits


def optimal_aware_value(world: GoalCmdp) -> np.ndarray:
    """Per-context optimum gamma^beta of a policy that knows the active goal; 0 for unreachable goals."""
    hits = first_hit_steps(world)
    return np.where(hits > 0, world.gamma ** np.maximum(hits, 0), 0.0)


def value_iteration(world: GoalCmdp, context: int, tol: float = 0.0, max_iter: int = 100_000) -> float:
    """Start-state value of the single-goal MDP by plain Bellman iteration."""
    grid = world.grid
    reward = world.in_goal(context).astype(np.float64)
    value = np.zeros(len(grid.offsets))
    for _ in range(max_iter):
        nb = grid.neighbours
        updated = np.max(world.gamma * (reward[nb] + (1.0 - reward[nb]) * value[nb]), axis=1)
        if np.max(np.abs(updated - value)) <= tol:
            value = updated
            break
        value = updated
    return float(value[grid.start])


@dataclass
class UnawareSolution:
    values: np.ndarray
    average: float
    hit_steps: np.ndarray
    path: list = field(default_factory=list)


def _subset_values(world: GoalCmdp) -> np.ndarray:
    """
    W[mask, cell]: best sum over unreached goals of gamma^(steps to first reach them), one trajectory for all.
    Masks are solved from the fullest down; within a mask, iterate until the values stop changing.
    """
    grid = world.grid
    n_masks = 1 << world.n_goals
    nb = grid.neighbours
    bits = grid.goal_bits[nb]
    popcount = np.array([bin(m).count("1") for m in range(n_masks)])
    values = np.zeros((n_masks, len(grid.offsets)))
    for mask in sorted(range(n_masks), key=lambda m: -popcount[m]):
        newly = bits & ~mask
        gain = popcount[newly]
        next_mask = mask | bits
        moved_on = newly > 0
        fixed_part = np.where(moved_on, values[next_mask, nb], 0.0)
        current = values[mask]
        while True:
            candidate = world.gamma * (gain + np.where(moved_on, fixed_part, current[nb]))
            updated = candidate.max(axis=1)
            if np.array_equal(updated, current):
                break
            current = updated
        values[mask] = current
    return values


def best_unaware_value(world: GoalCmdp) -> UnawareSolution:
    """
    Best deterministic context-unaware trajectory from the start

    Returns
    -----------------
    - UnawareSolution with per-context values gamma^(first hit of that goal), 0 for goals the
      trajectory never reaches within 4 x grid diameter x number of goals steps, and their mean
    """
    grid = world.grid
    values = _subset_values(world)
    full = (1 << world.n_goals) - 1
    cap = 4 * grid.diameter * world.n_goals
    hits = np.full(world.n_goals, -1, dtype=np.int64)

    cell, mask, path = grid.start, 0, [grid.start]
    for step in range(1, cap + 1):
        if mask == full or values[mask, cell] <= 0.0:
            break
        nb = grid.neighbours[cell]
        bits = grid.goal_bits[nb]
        gain = np.array([bin(int(b) & ~mask).count("1") for b in bits])
        scores = world.gamma * (gain + values[mask | bits, nb])
        move = int(np.argmax(scores))
        cell = int(nb[move])
        reached = int(grid.goal_bits[cell]) & ~mask
        for i in range(world.n_goals):
            if reached >> i & 1:
                hits[i] = step
        mask |= reached
        path.append(cell)

    per_context = np.where(hits > 0, world.gamma ** np.maximum(hits, 0), 0.0)
    return UnawareSolution(per_context, float(per_context.mean()), hits, path)


def measured_alpha(world: GoalCmdp) -> float:
    """Average unaware value over average aware value."""
    aware = optimal_aware_value(world).mean()
    if aware <= 0.0:
        raise ValueError("no goal is reachable from the start")
    return float(best_unaware_value(world).average / aware)


@dataclass
class BoundReport:
    alpha_measured: float
    alpha_bound: float
    branch: str
    satisfied: bool
    d_min: int | None = None


def check_premise(branch: str, world: GoalCmdp):
    radius = world.radius
    for i, j in itertools.combinations(range(world.n_goals), 2):
        gap = float(np.linalg.norm(world.goals[i] - world.goals[j]))
        if branch == "far" and not gap > FAR_SEPARATION * radius:
            raise PremiseError(
                f"goals {i} and {j} are {gap:g} apart, the far branch needs more than {FAR_SEPARATION * radius:g}",
                (i, j),
            )
        if branch == "close" and not gap < radius:
            raise PremiseError(
                f"goals {i} and {j} are {gap:g} apart, the close branch needs less than {radius:g}", (i, j)
            )


def verify_theorem(branch: str, world: GoalCmdp, starts=None) -> BoundReport:
    """
    Measure alpha and compare it against the branch's bound

    Parameters
    -----------------
    - branch: "far" (alpha <= closed-form bound, measured from the goals' midpoint) or
      "close" (alpha > gamma^tau from every start state)
    - world: goal world satisfying the branch premise
    - starts: close branch only, start states to test (defaults to the world's start)

    Returns
    -----------------
    - BoundReport; for the close branch alpha_measured is the smallest over the starts
    """
    if branch not in BRANCHES:
        raise ValueError(f"unknown branch '{branch}', expected one of {BRANCHES}")
    check_premise(branch, world)
    if branch == "far":
        midpoint = replace(world, start=world.goals.mean(axis=0))
        d_min = min_inter_context_distance(world.goals, world.step_length)
        alpha = measured_alpha(midpoint)
        bound = alpha_upper_bound(world.n_goals, world.gamma, d_min)
        return BoundReport(alpha, bound, branch, bool(alpha <= bound + 1e-12), d_min)

    starts = [world.start] if starts is None else list(starts)
    alpha = min(measured_alpha(replace(world, start=np.asarray(s, dtype=np.float64))) for s in starts)
    bound = world.gamma**world.tau
    return BoundReport(alpha, bound, branch, bool(alpha > bound))


def far_world(n: int, half_width: int, gamma: float, step_length: float = 1.0) -> GoalCmdp:
    """Symmetric goals on lattice points around the origin (tau = 1): a line pair, a triangle or a cross."""
    length = int(half_width)
    if n == 2:
        goals = [(length, 0), (-length, 0)]
    elif n == 3:
        # even length keeps the centroid on the origin lattice point
        length += length % 2
        goals = [(length, 0), (-length // 2, length // 2), (-length // 2, -length // 2)]
    elif n == 4:
        goals = [(length, 0), (-length, 0), (0, length), (0, -length)]
    else:
        raise ValueError(f"far worlds are built for 2, 3 or 4 goals, got {n}")
    return GoalCmdp(np.asarray(goals, dtype=np.float64) * step_length, step_length, 1, gamma)


def far_world_for_dmin(n: int, d_min: int, gamma: float) -> GoalCmdp:
    """Smallest symmetric far world whose minimum separation is at least d_min steps."""
    half_width = 1
    while True:
        world = far_world(n, half_width, gamma)
        gap = min_inter_context_distance(world.goals, world.step_length)
        if gap >= d_min and gap > FAR_SEPARATION * world.tau:
            return world
        half_width += 1


def close_world(n: int, tau: int, gamma: float, rng: np.random.Generator, spread: float = 0.25) -> GoalCmdp:
    """n goals within spread of a random centre; the start is the lattice origin."""
    centre = rng.uniform(-3.0, 3.0, size=2)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    radii = spread * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    goals = centre + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    return GoalCmdp(goals, 1.0, tau, gamma)


def rotation(angle: float) -> np.ndarray:
    return np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])


def sweep_theory(gammas=(0.9, 0.95, 0.99), ns=(2, 3, 4), d_mins=(6, 10), tau: int = 1) -> pd.DataFrame:
    """Far-branch bound check over a grid of discounts, goal counts and separations."""
    rows = []
    total = len(gammas) * len(ns) * len(d_mins)
    for count, (gamma, n, d_min) in enumerate(itertools.product(gammas, ns, d_mins), start=1):
        msg_step(f"Checking far-branch bound ({count}/{total})", count == total)
        world = far_world_for_dmin(n, d_min, gamma)
        if tau != 1:
            world = replace(world, tau=tau, goals=world.goals * tau, step_length=world.step_length)
        report = verify_theorem("far", world)
        rows.append(
            {
                "gamma": gamma,
                "n": n,
                "d_min": report.d_min,
                "tau": world.tau,
                "alpha_measured": report.alpha_measured,
                "alpha_bound": report.alpha_bound,
                "satisfied": report.satisfied,
            }
        )
    return pd.DataFrame(rows, columns=["gamma", "n", "d_min", "tau", "alpha_measured", "alpha_bound", "satisfied"])


def sweep_theory_close(
    gammas=(0.9, 0.95, 0.99), ns=(2, 3, 4), taus=(3, 4, 5), samples: int = 50, seed: int = 0
) -> pd.DataFrame:
    """Close-branch check on random goal clusters, each tested from a handful of random lattice starts."""
    rng = np.random.default_rng(seed)
    rows = []
    for count in range(1, samples + 1):
        msg_step(f"Checking close-branch bound ({count}/{samples})", count == samples)
        gamma = float(rng.choice(gammas))
        n = int(rng.choice(ns))
        tau = int(rng.choice(taus))
        world = close_world(n, tau, gamma, rng)
        starts = rng.integers(-4, 5, size=(3, 2)).astype(np.float64)
        report = verify_theorem("close", world, starts=starts)
        rows.append(
            {
                "gamma": gamma,
                "n": n,
                "d_min": None,
                "tau": tau,
                "alpha_measured": report.alpha_measured,
                "alpha_bound": report.alpha_bound,
                "satisfied": report.satisfied,
            }
        )
    return pd.DataFrame(rows, columns=["gamma", "n", "d_min", "tau", "alpha_measured", "alpha_bound", "satisfied"])
