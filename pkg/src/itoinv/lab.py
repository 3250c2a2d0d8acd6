"""Analysis of invariance loss and restoration: deviation statistics over
ensembles, the F(y) = H(t) growth check, equilibrium residuals, epsilon
scaling of the scale law, and the run orchestration behind the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import invariance, models, transforms
from .core import ManifoldSpec, SdeSystem
from .simulate import (
    TimeGrid,
    TrajectoryEnsemble,
    simulate_coupled_ensemble,
    simulate_ensemble,
    write_trajectory_csv,
)


class AnalysisError(RuntimeError):
    """An analysis routine has no usable data (e.g. every path aborted)."""


class DegenerateScalingError(ValueError):
    """H(t) - 1 vanished for a positive epsilon; the log-log fit is undefined."""


@dataclass(frozen=True)
class DeviationSeries:
    """Per-time statistics of |F(x) - level| over the surviving paths."""

    times: np.ndarray
    mean: np.ndarray
    max: np.ndarray
    var: np.ndarray
    f_mean: np.ndarray
    f_var: np.ndarray
    paths_used: int
    paths_aborted: int

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "mean": self.mean.tolist(),
            "max": self.max.tolist(),
            "var": self.var.tolist(),
            "f_mean": self.f_mean.tolist(),
            "f_var": self.f_var.tolist(),
        }


def deviation_stats(ensemble: TrajectoryEnsemble, manifold: ManifoldSpec) -> DeviationSeries:
    """Quantify drift off the manifold: mean/max/variance of |F - level| and
    the mean and variance of F itself, per output time. Aborted paths are
    excluded and counted."""
    alive = ensemble.alive()
    if alive.size == 0:
        raise AnalysisError("all paths aborted; no deviation statistics available")
    data = ensemble.data[alive]  # (P', T, n)
    P, T, n = data.shape
    fvals = manifold.values(data.reshape(-1, n)).reshape(P, T)
    dev = np.abs(fvals - manifold.level)
    return DeviationSeries(
        times=ensemble.grid.times(),
        mean=dev.mean(axis=0),
        max=dev.max(axis=0),
        var=dev.var(axis=0),
        f_mean=fvals.mean(axis=0),
        f_var=fvals.var(axis=0),
        paths_used=int(P),
        paths_aborted=ensemble.paths - int(P),
    )


@dataclass(frozen=True)
class FGrowthResult:
    """Sup-deviation of F(y_t) from the scale law H(t), optionally with the
    dt-halving convergence ratio against a refined run."""

    sup_dev: float
    H: np.ndarray
    ratio: Optional[float] = None

    def to_dict(self) -> dict:
        out = {"sup_dev": self.sup_dev, "H": self.H.tolist()}
        if self.ratio is not None:
            out["ratio"] = self.ratio
        return out


def _sup_dev(ensemble: TrajectoryEnsemble, manifold, law) -> tuple[float, np.ndarray]:
    alive = ensemble.alive()
    if alive.size == 0:
        raise AnalysisError("all paths aborted; no growth statistics available")
    data = ensemble.data[alive]
    P, T, n = data.shape
    fvals = manifold.values(data.reshape(-1, n)).reshape(P, T)
    Hvals = np.array([law.H(t) for t in ensemble.grid.times()])
    return float(np.abs(fvals - Hvals[None, :]).max()), Hvals


def f_growth_check(
    ensemble: TrajectoryEnsemble,
    manifold: ManifoldSpec,
    law: transforms.ScaleLaw,
    refined: Optional[TrajectoryEnsemble] = None,
) -> FGrowthResult:
    """Max over paths and times of |F(y_t) - H(t)| for a coupled y-ensemble.

    When `refined` (same horizon, smaller dt) is supplied, also reports the
    ratio coarse/refined of the sup-deviations."""
    sup, Hvals = _sup_dev(ensemble, manifold, law)
    ratio = None
    if refined is not None:
        g, r = ensemble.grid, refined.grid
        if (g.t0, g.t1) != (r.t0, r.t1) or r.dt >= g.dt:
            raise ValueError("refined ensemble must share the horizon with smaller dt")
        sup_ref, _ = _sup_dev(refined, manifold, law)
        if sup_ref == 0.0:
            raise AnalysisError("refined sup-deviation is zero; ratio undefined")
        ratio = sup / sup_ref
    return FGrowthResult(sup_dev=sup, H=Hvals, ratio=ratio)


EQUILIBRIUM_TOL = 1e-12


@dataclass(frozen=True)
class EquilibriumRecord:
    point: np.ndarray
    drift_norm: float
    diffusion_norm: float  # max over noise columns of the column norm
    flag: str  # stochastic-equilibrium | diffusion-fixed | neither

    def to_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "drift_norm": self.drift_norm,
            "diffusion_norm": self.diffusion_norm,
            "flag": self.flag,
        }


def equilibrium_residuals(
    system: SdeSystem,
    points: Sequence,
    t_list: Sequence[float] = (0.0,),
    tol: float = EQUILIBRIUM_TOL,
) -> list[EquilibriumRecord]:
    """Drift norm and worst diffusion-column norm at candidate points, maxed
    over the probe times. A point is a stochastic equilibrium only if both
    vanish; diffusion-fixed points keep a nonzero (transformed) drift."""
    records = []
    for point in np.atleast_2d(np.asarray(points, dtype=float)):
        dn, gn = 0.0, 0.0
        for t in t_list:
            f, sig = system.coefficients(float(t), point)
            dn = max(dn, float(np.linalg.norm(f)))
            if system.k:
                gn = max(gn, float(np.linalg.norm(sig, axis=0).max()))
        if dn <= tol and gn <= tol:
            flag = "stochastic-equilibrium"
        elif gn <= tol:
            flag = "diffusion-fixed"
        else:
            flag = "neither"
        records.append(
            EquilibriumRecord(point=point.copy(), drift_norm=dn, diffusion_norm=gn, flag=flag)
        )
    return records


@dataclass(frozen=True)
class EpsScalingResult:
    slope: float
    eps: tuple
    gaps: tuple  # H(t; eps) - 1 per eps

    def to_dict(self) -> dict:
        return {"slope": self.slope, "eps": list(self.eps), "H_minus_1": list(self.gaps)}


def epsilon_scaling_check(
    family: Callable[[float], SdeSystem],
    manifold: ManifoldSpec,
    eps_list: Sequence[float],
    t: float,
    sampler=None,
    tol=None,
) -> EpsScalingResult:
    """Fit the log-log slope of H(t; eps) - 1 against eps for a noise family.

    For families whose diffusion scales linearly in eps the law is exact and
    the slope is 2 to rounding."""
    eps_list = tuple(float(e) for e in eps_list)
    if len(set(eps_list)) < 2 or any(e <= 0 for e in eps_list):
        raise ValueError("need at least two distinct positive epsilon values")
    gaps = []
    for eps in eps_list:
        system = family(eps)
        law = transforms.scale_law_from_correction(system, manifold, sampler=sampler, tol=tol)
        gap = law.H(t) - 1.0
        if gap == 0.0:
            raise DegenerateScalingError(
                f"H(t={t}; eps={eps}) - 1 == 0; scaling fit is degenerate"
            )
        gaps.append(gap)
    slope = float(np.polyfit(np.log(eps_list), np.log(np.abs(gaps)), 1)[0])
    return EpsScalingResult(slope=slope, eps=eps_list, gaps=tuple(gaps))


# --------------------------------------------------------------------------
# Run configuration and orchestration


class ConfigError(ValueError):
    """The run configuration failed validation."""


TRANSFORMS = ("none", "projection", "invariantization", "coupled")
ABORT_FRACTION_LIMIT = 0.01


@dataclass
class RunConfig:
    model: str
    params: dict = field(default_factory=dict)
    transform: str = "none"
    t0: float = 0.0
    t1: float = 1.0
    steps: int = 1000
    paths: int = 100
    master_seed: int = 12345
    initial_state: Optional[tuple] = None
    csv_path: Optional[str] = None
    summary_path: Optional[str] = None
    figures_dir: Optional[str] = None
    check_tolerance: Optional[float] = None
    run_check: bool = False
    equilibria: object = None  # True for model-implied points, or a point list
    workers: int = 1
    csv_f_column: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {
            "model", "params", "transform", "grid", "paths", "master_seed",
            "initial_state", "outputs", "check", "equilibria", "workers",
            "csv_f_column",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "model" not in doc:
            raise ConfigError("config requires a 'model' field")
        grid = doc.get("grid", {})
        outputs = doc.get("outputs", {})
        check = doc.get("check")
        cfg = cls(
            model=str(doc["model"]),
            params=dict(doc.get("params", {})),
            transform=str(doc.get("transform", "none")),
            t0=float(grid.get("t0", 0.0)),
            t1=float(grid.get("t1", 1.0)),
            steps=int(grid.get("steps", 1000)),
            paths=int(doc.get("paths", 100)),
            master_seed=int(doc.get("master_seed", 12345)),
            initial_state=(
                tuple(float(v) for v in doc["initial_state"])
                if "initial_state" in doc and doc["initial_state"] is not None
                else None
            ),
            csv_path=outputs.get("csv"),
            summary_path=outputs.get("summary"),
            figures_dir=outputs.get("figures"),
            check_tolerance=(None if not check else check.get("tolerance")),
            run_check=check is not None,
            equilibria=doc.get("equilibria"),
            workers=int(doc.get("workers", 1)),
            csv_f_column=bool(doc.get("csv_f_column", True)),
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.model not in models.REGISTRY:
            raise ConfigError(
                f"unknown model id {self.model!r}; known: {sorted(models.REGISTRY)}"
            )
        if self.transform not in TRANSFORMS:
            raise ConfigError(
                f"unknown transform {self.transform!r}; known: {TRANSFORMS}"
            )
        if self.t1 <= self.t0:
            raise ConfigError("grid requires t1 > t0")
        if self.steps < 1 or self.paths < 1:
            raise ConfigError("steps and paths must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def resolve_state(self, manifold: ManifoldSpec) -> np.ndarray:
        entry = models.REGISTRY[self.model]
        x0 = np.asarray(
            self.initial_state if self.initial_state is not None else entry.default_state,
            dtype=float,
        )
        if x0.size != manifold.n:
            raise ConfigError(
                f"initial state dimension {x0.size} does not match model dimension {manifold.n}"
            )
        if self.transform != "none" and abs(manifold.value(x0) - manifold.level) > 1e-9:
            raise ConfigError(
                "transforms require an on-manifold initial state (|F - level| <= 1e-9)"
            )
        return x0

    def grid(self) -> TimeGrid:
        return TimeGrid(t0=self.t0, t1=self.t1, steps=self.steps)


@dataclass
class RunResult:
    summary: dict
    ensemble: TrajectoryEnsemble  # the recorded (output) stream
    manifold: ManifoldSpec
    law: Optional[transforms.ScaleLaw] = None
    y_ensemble: Optional[TrajectoryEnsemble] = None
    artifacts: list = field(default_factory=list)


def _project_ensemble(ensemble: TrajectoryEnsemble, manifold: ManifoldSpec) -> TrajectoryEnsemble:
    """Map every recorded state through the normalization, marking rows with
    nonpositive F as aborts."""
    P, T, n = ensemble.data.shape
    flat = ensemble.data.reshape(-1, n)
    X, ok = transforms.normalize_rows(flat, manifold)
    X, _ = transforms.snap_to_level(X, manifold)
    bad = (~ok) & np.isfinite(flat).all(axis=1)
    aborts = list(ensemble.aborted)
    if bad.any():
        times = ensemble.grid.times()
        firsts: dict = {}
        for idx in np.where(bad)[0]:
            p, s = divmod(int(idx), T)
            if p not in firsts or s < firsts[p]:
                firsts[p] = s
        # quarantine each path from its first off-domain point on
        Xr = X.reshape(P, T, n)
        for p, s in firsts.items():
            Xr[p, s:] = np.nan
            aborts.append((p, float(times[s]), "level function non-positive"))
        X = Xr.reshape(-1, n)
    return TrajectoryEnsemble(
        grid=ensemble.grid,
        n=n,
        paths=P,
        data=X.reshape(P, T, n),
        master_seed=ensemble.master_seed,
        path_seeds=ensemble.path_seeds,
        aborted=tuple(sorted(set(aborts))),
    )


def run(config: RunConfig) -> RunResult:
    """Build the model, apply the requested transform, simulate, and assemble
    the summary document (and CSV/summary/figure files when paths are set)."""
    entry = models.REGISTRY[config.model]
    system = entry.build(config.params)
    manifold = entry.manifold()
    x0 = config.resolve_state(manifold)
    grid = config.grid()

    law = None
    y_ens = None
    if config.transform == "none":
        out_ens = simulate_ensemble(
            system, x0, grid, config.paths, config.master_seed, workers=config.workers
        )
    elif config.transform == "projection":
        base = simulate_ensemble(
            system, x0, grid, config.paths, config.master_seed, workers=config.workers
        )
        out_ens = _project_ensemble(base, manifold)
    elif config.transform == "invariantization":
        law = transforms.scale_law_from_correction(
            system, manifold, tol=config.check_tolerance
        )
        inv = transforms.invariantize(system, manifold, law)
        out_ens = simulate_ensemble(
            inv, x0, grid, config.paths, config.master_seed, workers=config.workers
        )
    else:  # coupled
        law = transforms.scale_law_from_correction(
            system, manifold, tol=config.check_tolerance
        )
        coupled = transforms.coupled_step_representation(system, manifold)
        y_ens, out_ens = simulate_coupled_ensemble(
            coupled, x0, grid, config.paths, config.master_seed, workers=config.workers
        )

    abort_fraction = len(out_ens.aborted_indices) / config.paths
    dev = deviation_stats(out_ens, manifold)

    summary = {
        "run": {
            "model": config.model,
            "params": config.params,
            "transform": config.transform,
            "grid": {"t0": config.t0, "t1": config.t1, "steps": config.steps},
            "paths": config.paths,
            "seed": config.master_seed,
        },
        "deviation": dev.to_dict(),
        "aborted": [
            {"path": int(p), "t": float(t), "reason": r} for p, t, r in out_ens.aborted
        ],
    }
    if y_ens is not None and law is not None:
        growth = f_growth_check(y_ens, manifold, law)
        summary["f_growth"] = growth.to_dict()

    if config.equilibria:
        pts = _equilibrium_points(config, manifold)
        recs = equilibrium_residuals(system, pts, t_list=(grid.t0,))
        summary["equilibria"] = [r.to_dict() for r in recs]

    if config.run_check:
        report = invariance.strong_invariance_report(
            system, manifold, tol=config.check_tolerance
        )
        summary["invariance_report"] = report.to_dict()

    result = RunResult(
        summary=summary, ensemble=out_ens, manifold=manifold, law=law, y_ensemble=y_ens
    )

    if config.csv_path:
        write_trajectory_csv(
            config.csv_path, out_ens, manifold=manifold, include_f=config.csv_f_column
        )
        result.artifacts.append(config.csv_path)
    if config.summary_path:
        Path(config.summary_path).write_text(
            json.dumps(summary, indent=2, sort_keys=False) + "\n"
        )
        result.artifacts.append(config.summary_path)
    if config.figures_dir:
        from .figures import render_run_figures

        made = render_run_figures(config.figures_dir, result)
        result.artifacts.extend(str(p) for p in made)

    if abort_fraction > ABORT_FRACTION_LIMIT:
        raise AnalysisError(
            f"{abort_fraction:.1%} of paths aborted (limit {ABORT_FRACTION_LIMIT:.0%})"
        )
    return result


def _equilibrium_points(config: RunConfig, manifold: ManifoldSpec) -> np.ndarray:
    if config.equilibria is True:
        if config.model.startswith("ll") or config.model == "larmor":
            b = np.asarray(config.params.get("b", (0.0, 0.0, 1.0)), dtype=float)
            nb = np.linalg.norm(b)
            if nb == 0:
                raise ConfigError("equilibria of the spin models need a nonzero field b")
            return np.array([b / nb, -b / nb])
        raise ConfigError(f"model {config.model!r} has no implied equilibrium points")
    return np.atleast_2d(np.asarray(config.equilibria, dtype=float))
