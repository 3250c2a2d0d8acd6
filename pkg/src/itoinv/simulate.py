"""Euler-Maruyama integration: single paths, reproducible ensembles, and the
coupled (normalized-coefficient) representation.

Reproducibility contract: every path's increments come from a generator
seeded by a splittable hash of (master_seed, path index), and the stepping
kernel applies only row-independent operations, so an ensemble is bit
identical for a given configuration regardless of run or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import numpy as np

from .core import DimensionMismatchError, NoisePath, SdeSystem, as_state
from .transforms import CoupledInvariantizedSystem, snap_to_level

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4B7C15
# batch of paths advanced together inside one worker; bounds slab memory
_BLOCK = 4096


class PathAborted(RuntimeError):
    """A trajectory left the admissible region (non-finite state or F <= 0)."""

    def __init__(self, message, step=None, t=None, state=None, reason="non-finite state"):
        super().__init__(message)
        self.step = step
        self.t = t
        self.state = None if state is None else np.asarray(state)
        self.reason = reason


def child_seed(master_seed: int, index: int) -> int:
    """Per-path seed: splitmix64 finalizer of the master advanced index+1 times."""
    z = (int(master_seed) + (index + 1) * _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of `steps` Euler steps on [t0, t1]."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("require t1 > t0")
        if self.steps < 1:
            raise ValueError("require at least one step")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """P paths recorded on a common grid, plus seed and abort metadata."""

    grid: TimeGrid
    n: int
    paths: int
    data: np.ndarray  # (paths, steps+1, n); NaN from the abort step onward
    master_seed: int
    path_seeds: tuple
    aborted: tuple  # of (path index, abort time, reason)

    @property
    def aborted_indices(self) -> set:
        return {rec[0] for rec in self.aborted}

    def alive(self) -> np.ndarray:
        """Indices of paths that never aborted."""
        dead = self.aborted_indices
        return np.array([p for p in range(self.paths) if p not in dead], dtype=int)


def _drift_rows(system: SdeSystem, t: float, X: np.ndarray) -> np.ndarray:
    if system.drift_rows is not None:
        F = np.asarray(system.drift_rows(t, X), dtype=float)
    else:
        F = np.full_like(X, np.nan)
        for i, row in enumerate(X):
            if np.isfinite(row).all():
                F[i] = system.drift(t, row)
    if F.shape != X.shape:
        raise DimensionMismatchError(
            f"batch drift returned shape {F.shape}, expected {X.shape}"
        )
    return F


def _diffusion_rows(system: SdeSystem, t: float, X: np.ndarray) -> np.ndarray:
    want = (X.shape[0], system.n, system.k)
    if system.diffusion_rows is not None:
        G = np.asarray(system.diffusion_rows(t, X), dtype=float)
    else:
        G = np.full(want, np.nan)
        for i, row in enumerate(X):
            if np.isfinite(row).all():
                G[i] = system.diffusion(t, row)
    if G.shape != want:
        raise DimensionMismatchError(
            f"batch diffusion returned shape {G.shape}, expected {want}"
        )
    return G


def _advance(system: SdeSystem, t: float, X: np.ndarray, dW: np.ndarray, dt: float) -> np.ndarray:
    """One EM step on a (P, n) slab with (P, k) increments."""
    F = _drift_rows(system, t, X)
    if system.k == 0:
        return X + dt * F
    G = _diffusion_rows(system, t, X)
    return X + dt * F + np.einsum("pnk,pk->pn", G, dW)


def em_step(system: SdeSystem, t: float, x, dW, dt: float) -> np.ndarray:
    """Single Euler-Maruyama step x + f dt + sigma dW."""
    x = as_state(x)
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if dW.shape != (system.k,):
        raise DimensionMismatchError(f"dW must have length k={system.k}")
    with np.errstate(all="ignore"):
        out = _advance(system, t, x[None, :], dW[None, :], dt)[0]
    if not np.isfinite(out).all():
        raise PathAborted("state became non-finite", t=t, state=out)
    return out


def _check_simulatable(system: SdeSystem, x0: np.ndarray):
    if system.input_dim is not None:
        raise ValueError(
            "system is in pullback form (evaluators take original coordinates); "
            "it describes coefficients only and cannot be stepped"
        )
    if x0.size != system.n:
        raise DimensionMismatchError(
            f"initial state has dimension {x0.size}, system n={system.n}"
        )


def simulate_path(system: SdeSystem, x0, grid: TimeGrid, noise: NoisePath) -> np.ndarray:
    """Iterate em_step along a prepared noise path; returns (steps+1, n)."""
    x0 = as_state(x0)
    _check_simulatable(system, x0)
    if noise.dt != grid.dt:
        raise ValueError(f"noise dt {noise.dt} != grid dt {grid.dt}")
    if noise.increments.shape[0] < grid.steps or noise.increments.shape[1] != system.k:
        raise ValueError("noise path too short or wrong width for this grid")
    out = np.empty((grid.steps + 1, system.n))
    out[0] = x0
    X = x0[None, :].copy()
    dt = grid.dt
    with np.errstate(all="ignore"):
        for s in range(grid.steps):
            t = grid.t0 + s * dt
            X = _advance(system, t, X, noise.increments[s][None, :], dt)
            if not np.isfinite(X).all():
                raise PathAborted(
                    f"state became non-finite at step {s + 1}",
                    step=s + 1,
                    t=t + dt,
                    state=X[0],
                )
            out[s + 1] = X[0]
    return out


def _path_increments(master_seed: int, p: int, steps: int, k: int, dt: float) -> np.ndarray:
    rng = np.random.default_rng(child_seed(master_seed, p))
    return rng.standard_normal((steps, k)) * math.sqrt(dt)


def _run_block(system, x0, grid, master_seed, p_lo, p_hi, data, aborts):
    steps, dt, n, k = grid.steps, grid.dt, system.n, system.k
    count = p_hi - p_lo
    dW = np.empty((count, steps, k))
    for i in range(count):
        dW[i] = _path_increments(master_seed, p_lo + i, steps, k, dt)
    X = np.tile(x0, (count, 1))
    data[p_lo:p_hi, 0] = X
    alive = np.ones(count, dtype=bool)
    with np.errstate(all="ignore"):
        for s in range(steps):
            t = grid.t0 + s * dt
            X = _advance(system, t, X, dW[:, s], dt)
            newly = alive & ~np.isfinite(X).all(axis=1)
            if newly.any():
                for i in np.where(newly)[0]:
                    aborts.append((p_lo + i, t + dt, "non-finite state"))
                alive &= ~newly
            X[~alive] = np.nan
            data[p_lo:p_hi, s + 1] = X


def _dispatch_blocks(run_block, paths: int, workers: int):
    bounds = [(lo, min(lo + _BLOCK, paths)) for lo in range(0, paths, _BLOCK)]
    if workers <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            run_block(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_block, lo, hi) for lo, hi in bounds]
            for f in futures:
                f.result()


def simulate_ensemble(
    system: SdeSystem,
    x0,
    grid: TimeGrid,
    paths: int,
    master_seed: int,
    workers: int = 1,
) -> TrajectoryEnsemble:
    """P independent EM paths; path p is seeded by child_seed(master_seed, p).

    Aborted paths are recorded (index, time, reason) and carry NaN from the
    abort step on; the ensemble itself always completes.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    x0 = as_state(x0)
    _check_simulatable(system, x0)
    data = np.empty((paths, grid.steps + 1, system.n))
    aborts: list = []

    def run_block(lo, hi):
        _run_block(system, x0, grid, master_seed, lo, hi, data, aborts)

    _dispatch_blocks(run_block, paths, workers)
    return TrajectoryEnsemble(
        grid=grid,
        n=system.n,
        paths=paths,
        data=data,
        master_seed=int(master_seed),
        path_seeds=tuple(child_seed(master_seed, p) for p in range(paths)),
        aborted=tuple(sorted(aborts)),
    )


def simulate_coupled(
    coupled: CoupledInvariantizedSystem, y0, grid: TimeGrid, noise: NoisePath
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the coupled representation along one noise path.

    Returns (y_trajectory, x_trajectory), each (steps+1, n); the recorded x
    stream is snapped onto the manifold so F(x) equals the level exactly.
    """
    y0 = as_state(y0)
    manifold = coupled.manifold
    if abs(manifold.value(y0) - manifold.level) > 1e-12:
        raise ValueError("y0 must lie on the manifold (|F(y0) - level| <= 1e-12)")
    if noise.dt != grid.dt:
        raise ValueError(f"noise dt {noise.dt} != grid dt {grid.dt}")
    if noise.increments.shape[0] < grid.steps or noise.increments.shape[1] != coupled.base.k:
        raise ValueError("noise path too short or wrong width for this grid")
    sys_ = coupled.base
    ys = np.empty((grid.steps + 1, sys_.n))
    xs = np.empty_like(ys)
    Y = y0[None, :].copy()
    ys[0] = y0
    dt = grid.dt
    with np.errstate(all="ignore"):
        for s in range(grid.steps + 1):
            X, ok = coupled.normalize_rows(Y)
            if not ok[0]:
                raise PathAborted(
                    f"level function not positive at step {s}",
                    step=s,
                    t=grid.t0 + s * dt,
                    state=Y[0],
                    reason="level function non-positive",
                )
            xs[s] = X[0]
            if s == grid.steps:
                break
            t = grid.t0 + s * dt
            F = _drift_rows(sys_, t, X)
            G = _diffusion_rows(sys_, t, X)
            Y = Y + dt * F + np.einsum("pnk,pk->pn", G, noise.increments[s][None, :])
            if not np.isfinite(Y).all():
                raise PathAborted(
                    f"state became non-finite at step {s + 1}",
                    step=s + 1,
                    t=t + dt,
                    state=Y[0],
                )
            ys[s + 1] = Y[0]
    xs, _ = snap_to_level(xs, manifold)
    return ys, xs


def simulate_coupled_ensemble(
    coupled: CoupledInvariantizedSystem,
    y0,
    grid: TimeGrid,
    paths: int,
    master_seed: int,
    workers: int = 1,
) -> tuple[TrajectoryEnsemble, TrajectoryEnsemble]:
    """Ensemble version of simulate_coupled; returns (y, x) ensembles sharing
    seeds and abort records."""
    if paths < 1:
        raise ValueError("paths must be >= 1")
    y0 = as_state(y0)
    manifold = coupled.manifold
    if abs(manifold.value(y0) - manifold.level) > 1e-12:
        raise ValueError("y0 must lie on the manifold (|F(y0) - level| <= 1e-12)")
    sys_ = coupled.base
    ydata = np.empty((paths, grid.steps + 1, sys_.n))
    xdata = np.empty_like(ydata)
    aborts: list = []

    def run_block(p_lo, p_hi):
        steps, dt, k = grid.steps, grid.dt, sys_.k
        count = p_hi - p_lo
        dW = np.empty((count, steps, k))
        for i in range(count):
            dW[i] = _path_increments(master_seed, p_lo + i, steps, k, dt)
        Y = np.tile(y0, (count, 1))
        ydata[p_lo:p_hi, 0] = Y
        alive = np.ones(count, dtype=bool)
        with np.errstate(all="ignore"):
            for s in range(steps + 1):
                X, ok = coupled.normalize_rows(Y)
                newly = alive & ~ok
                if newly.any():
                    for i in np.where(newly)[0]:
                        aborts.append(
                            (p_lo + i, grid.t0 + s * dt, "level function non-positive")
                        )
                    alive &= ~newly
                X[~alive] = np.nan
                xdata[p_lo:p_hi, s] = X
                if s == steps:
                    break
                t = grid.t0 + s * dt
                F = _drift_rows(sys_, t, X)
                G = _diffusion_rows(sys_, t, X)
                Y = Y + dt * F + np.einsum("pnk,pk->pn", G, dW[:, s])
                newly = alive & ~np.isfinite(Y).all(axis=1)
                if newly.any():
                    for i in np.where(newly)[0]:
                        aborts.append((p_lo + i, t + dt, "non-finite state"))
                    alive &= ~newly
                Y[~alive] = np.nan
                ydata[p_lo:p_hi, s + 1] = Y

    _dispatch_blocks(run_block, paths, workers)
    flat, _ = snap_to_level(xdata.reshape(-1, sys_.n), manifold)
    xdata = flat.reshape(xdata.shape)
    seeds = tuple(child_seed(master_seed, p) for p in range(paths))
    aborted = tuple(sorted(aborts))
    mk = lambda data: TrajectoryEnsemble(
        grid=grid,
        n=sys_.n,
        paths=paths,
        data=data,
        master_seed=int(master_seed),
        path_seeds=seeds,
        aborted=aborted,
    )
    return mk(ydata), mk(xdata)


def write_trajectory_csv(path, ensemble: TrajectoryEnsemble, manifold=None, include_f=None):
    """Write `path,t,x1,...,xn[,F]` rows with 17 significant digits and LF
    line endings. Rows after a path's abort (non-finite states) are omitted.
    The F column is included when a manifold is given unless disabled."""
    include_f = (manifold is not None) if include_f is None else bool(include_f)
    if include_f and manifold is None:
        raise ValueError("include_f requires a manifold")
    times = ensemble.grid.times()
    cols = [f"x{i + 1}" for i in range(ensemble.n)]
    header = "path,t," + ",".join(cols) + (",F" if include_f else "")
    fmt = "%.17g"
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for p in range(ensemble.paths):
            block = ensemble.data[p]
            finite = np.isfinite(block).all(axis=1)
            fvals = manifold.values(block) if include_f else None
            for s in range(len(times)):
                if not finite[s]:
                    continue
                vals = [str(p), fmt % times[s]]
                vals += [fmt % v for v in block[s]]
                if include_f:
                    vals.append(fmt % fvals[s])
                fh.write(",".join(vals) + "\n")
