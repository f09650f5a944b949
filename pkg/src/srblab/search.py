"""Derivative-free optimization primitives shared by the volume and geometry code.

Two kinds of problems show up everywhere:

* suprema/infima of scale-invariant ratios over the unit sphere of a k-dimensional
  coefficient space (operator and projection norms, angles, gap distances). These are
  non-convex; we evaluate a deterministic low-discrepancy grid and polish the best
  candidates with a pattern search, so results are lower (resp. upper) bounds of the
  true sup (resp. inf).
* one-dimensional convex minimization (distance from a point to a subspace, one
  coordinate at a time), solved by bracketed golden-section search, vectorized over a
  batch of independent problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import gamma
from scipy.stats import norm as gaussian
from scipy.stats import qmc

from .config import (
    GOLDEN_ITERATIONS,
    POLISH_CANDIDATES,
    POLISH_STEPS,
    SPHERE_GRID_POINTS,
)

# objective(coeffs) with coeffs of shape (B, n, k) returns values of shape (B, n)
SphereObjective = Callable[[np.ndarray], np.ndarray]
ScalarBatch = Callable[[np.ndarray], np.ndarray]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SphereOptimum:
    value: np.ndarray  # (B,)
    point: np.ndarray  # (B, k) Euclidean-unit coefficient vectors
    polish_gain: np.ndarray  # (B,) improvement of the polish over the raw grid


@lru_cache(maxsize=64)
def _cached_sphere_points(k: int, n: int, seed: int) -> np.ndarray:
    if k == 1:
        points = np.array([[1.0], [-1.0]])
    elif k == 2:
        angles = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        points = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        sampler = qmc.Halton(d=k, scramble=True, seed=seed)
        u = np.clip(sampler.random(n), 1e-12, 1.0 - 1e-12)
        points = gaussian.ppf(u)
        points /= np.linalg.norm(points, axis=1, keepdims=True)
    if k > 1:
        axes = np.eye(k)
        points = np.vstack([points, axes, -axes])
    points.setflags(write=False)
    return points


def sphere_points(k: int, n: int = SPHERE_GRID_POINTS, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform points on the Euclidean unit sphere of R^k.

    The 2k signed coordinate directions are always included.
    """
    return _cached_sphere_points(int(k), int(n), int(seed))


def sphere_area(k: int) -> float:
    return float(2.0 * np.pi ** (k / 2.0) / gamma(k / 2.0))


def _tangent_directions(x: np.ndarray, rng: np.random.Generator, n_random: int) -> np.ndarray:
    """Unit tangent directions at points x of shape (..., k); returns (..., J, k)."""
    k = x.shape[-1]
    eye = np.eye(k)
    axes = eye - x[..., None, :] * x[..., :, None]  # row j: e_j - x_j x
    random = rng.standard_normal(x.shape[:-1] + (n_random, k))
    random -= np.sum(random * x[..., None, :], axis=-1, keepdims=True) * x[..., None, :]
    dirs = np.concatenate([axes, random], axis=-2)
    lengths = np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs / np.maximum(lengths, 1e-300)


def sphere_search(
    objective: SphereObjective,
    k: int,
    *,
    batch: int = 1,
    maximize: bool = True,
    n_grid: int = SPHERE_GRID_POINTS,
    n_candidates: int = POLISH_CANDIDATES,
    polish_steps: int = POLISH_STEPS,
    seed: int = 0,
) -> SphereOptimum:
    """Optimize a scale-invariant objective over the unit sphere of R^k.

    Grid evaluation followed by a pattern-search polish of the best candidates: at
    each step every candidate tries +/- moves along the tangent coordinate directions
    plus two random tangent directions, keeps the best improvement, and halves its
    step when nothing improves.
    """
    sign = 1.0 if maximize else -1.0
    grid = sphere_points(k, n_grid)
    m = grid.shape[0]
    values = sign * objective(np.broadcast_to(grid, (batch, m, k)))
    if k == 1 or polish_steps == 0:
        best = np.argmax(values, axis=1)
        point = grid[best]
        value = sign * values[np.arange(batch), best]
        return SphereOptimum(value=value, point=point, polish_gain=np.zeros(batch))

    n_cand = min(n_candidates, m)
    order = np.argsort(-values, axis=1)[:, :n_cand]
    x = grid[order].copy()  # (B, C, k)
    fx = np.take_along_axis(values, order, axis=1)  # (B, C)
    grid_best = fx[:, 0].copy()
    h = np.full(fx.shape, (sphere_area(k) / m) ** (1.0 / (k - 1)))
    rng = np.random.default_rng(seed)
    for _ in range(polish_steps):
        dirs = _tangent_directions(x, rng, n_random=2)  # (B, C, J, k)
        steps = h[..., None, None] * dirs
        trials = np.concatenate([x[..., None, :] + steps, x[..., None, :] - steps], axis=-2)
        trials /= np.linalg.norm(trials, axis=-1, keepdims=True)
        n_trials = trials.shape[2]
        ft = sign * objective(trials.reshape(batch, n_cand * n_trials, k))
        ft = ft.reshape(batch, n_cand, n_trials)
        j_best = np.argmax(ft, axis=2)
        f_best = np.take_along_axis(ft, j_best[..., None], axis=2)[..., 0]
        improved = f_best > fx
        x_best = np.take_along_axis(trials, j_best[..., None, None], axis=2)[:, :, 0, :]
        x = np.where(improved[..., None], x_best, x)
        fx = np.where(improved, f_best, fx)
        h = np.where(improved, h, 0.5 * h)
    winner = np.argmax(fx, axis=1)
    rows = np.arange(batch)
    return SphereOptimum(
        value=sign * fx[rows, winner],
        point=x[rows, winner],
        polish_gain=fx[rows, winner] - grid_best,
    )


def minimize_convex_1d(
    fun: ScalarBatch,
    center: np.ndarray,
    scale: np.ndarray,
    iterations: int = GOLDEN_ITERATIONS,
) -> tuple[np.ndarray, np.ndarray]:
    """Minimize a batch of convex scalar functions of one variable.

    ``fun`` maps an array s of shape (B,) to values (B,), problem b seeing s[b]. The
    bracket around ``center`` is doubled until both ends are no lower than the
    center, which for convex functions traps a minimizer, then golden-section search
    shrinks it. Returns (argmin, min).
    """
    center = np.asarray(center, dtype=float)
    r = np.maximum(np.asarray(scale, dtype=float), 1e-300)
    f0 = fun(center)
    for _ in range(200):
        fl = fun(center - r)
        fr = fun(center + r)
        trapped = (fl >= f0) & (fr >= f0)
        if trapped.all():
            break
        r = np.where(trapped, r, 2.0 * r)
    a = center - r
    b = center + r
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = fun(c)
    fd = fun(d)
    for _ in range(iterations):
        left = fc < fd
        # left: keep [a, d], old c becomes new d; right: keep [c, b], old d becomes new c
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_point = np.where(left, b - _INV_PHI * (b - a), a + _INV_PHI * (b - a))
        f_new = fun(new_point)
        c, d, fc, fd = (
            np.where(left, new_point, d),
            np.where(left, c, new_point),
            np.where(left, f_new, fd),
            np.where(left, fc, f_new),
        )
    s = 0.5 * (a + b)
    fs = fun(s)
    candidates = np.stack([fs, fc, fd, f0])
    points = np.stack([s, c, d, center])
    pick = np.argmin(candidates, axis=0)
    cols = np.arange(s.shape[0])
    return points[pick, cols], candidates[pick, cols]
