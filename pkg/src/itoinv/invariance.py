"""Strong-invariance checking for level-set manifolds under Ito flows.

A manifold {F = level} is strongly invariant iff, on the manifold, the drift
is tangent, every diffusion column is tangent, and the second-order Ito
correction vanishes. The checks here sample the manifold and report residual
statistics for each condition; `combined_generator_residual` tests the full
dF coefficients instead, which is the right notion for transformed systems
whose drift is deliberately non-tangent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DimensionMismatchError, ManifoldSpec, SdeSystem, ito_correction

# Residuals at or below this floor count as numerically zero.
ZERO_FLOOR = 1e-13

SAMPLER_LEVEL_TOL = 1e-12
DEFAULT_SAMPLE_COUNT = 200
DEFAULT_TIMES_NONAUTONOMOUS = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class ResidualStats:
    """Max and mean of a nonnegative residual over the sample grid."""

    max: float
    mean: float
    samples: int

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "ResidualStats":
        vals = [abs(float(v)) for v in values]
        if not vals:
            raise ValueError("empty sample set")
        # fsum keeps the mean exact, hence independent of sample order
        return cls(max=max(vals), mean=math.fsum(vals) / len(vals), samples=len(vals))

    def to_dict(self) -> dict:
        return {"max": self.max, "mean": self.mean, "samples": self.samples}


def verdict_for(max_residual: float, tol: float) -> str:
    """Tri-state verdict: numerically zero / within tolerance / failing."""
    if max_residual <= min(tol, ZERO_FLOOR):
        return "holds"
    if max_residual <= tol:
        return "holds-within-tolerance"
    return "fails"


@dataclass(frozen=True)
class ConditionCheck:
    stats: ResidualStats
    tolerance: float
    verdict: str

    @classmethod
    def from_values(cls, values, tol: float) -> "ConditionCheck":
        stats = ResidualStats.from_values(values)
        return cls(stats=stats, tolerance=tol, verdict=verdict_for(stats.max, tol))

    @property
    def holds(self) -> bool:
        return self.verdict != "fails"

    def to_dict(self) -> dict:
        return self.stats.to_dict()


@dataclass(frozen=True)
class ManifoldSampler:
    """Reproducible point source on a level-1 manifold.

    strategies:
      gaussian-normalized -- Gaussian draws scaled to unit Euclidean norm
                             (uniform on the sphere; intended for F = sum x_i^2)
      rescale             -- arbitrary Gaussian draws mapped through
                             x -> x / F(x)^(1/q) (any positive homogeneous F)
    """

    manifold: ManifoldSpec
    strategy: str = "rescale"
    seed: int = 0
    count: int = DEFAULT_SAMPLE_COUNT

    def points(self, count: Optional[int] = None) -> np.ndarray:
        count = self.count if count is None else int(count)
        if count < 1:
            raise ValueError("empty sample set")
        if self.manifold.level != 1.0:
            raise ValueError("manifold samplers target level-1 manifolds only")
        rng = np.random.default_rng(self.seed)
        n = self.manifold.n
        out = np.empty((count, n))
        filled = 0
        while filled < count:
            draw = rng.standard_normal((count - filled, n))
            if self.strategy == "gaussian-normalized":
                norms = np.sqrt(np.einsum("pi,pi->p", draw, draw))
                ok = norms > 1e-8
                pts = draw[ok] / norms[ok, None]
            elif self.strategy == "rescale":
                fv = self.manifold.values(draw)
                ok = np.isfinite(fv) & (fv > 1e-8)
                pts = draw[ok] / np.power(fv[ok], 1.0 / self.manifold.q)[:, None]
            else:
                raise ValueError(f"unknown sampling strategy {self.strategy!r}")
            take = min(len(pts), count - filled)
            out[filled : filled + take] = pts[:take]
            filled += take
        defect = np.abs(self.manifold.values(out) - self.manifold.level)
        if defect.max() > SAMPLER_LEVEL_TOL:
            raise RuntimeError(
                f"sampler produced off-manifold point (|F-level| = {defect.max():.3e})"
            )
        return out


@dataclass(frozen=True)
class FixedPointSampler:
    """Sampler wrapping user-supplied points; membership is the caller's duty."""

    pts: np.ndarray
    seed: int = -1

    def points(self, count: Optional[int] = None) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(self.pts, dtype=float))
        if count is not None and count != len(arr):
            raise ValueError("FixedPointSampler holds a fixed number of points")
        if len(arr) == 0:
            raise ValueError("empty sample set")
        return arr.copy()


def default_times(system: SdeSystem) -> tuple:
    return (0.0,) if system.autonomous else DEFAULT_TIMES_NONAUTONOMOUS


def default_tolerance(manifold: ManifoldSpec) -> float:
    # finite-difference Hessians carry ~1e-6 error; analytic ones are exact
    return 1e-9 if manifold.analytic else 1e-5


def _grid(system, manifold, sampler, times):
    if sampler is None:
        sampler = ManifoldSampler(manifold)
    times = default_times(system) if times is None else tuple(float(t) for t in times)
    if not times:
        raise ValueError("times must be nonempty")
    pts = sampler.points()
    if pts.shape[1] != system.n:
        raise DimensionMismatchError(
            f"sample dimension {pts.shape[1]} != system dimension {system.n}"
        )
    return sampler, times, pts


def check_drift_tangency(system, manifold, sampler=None, times=None, tol=None) -> ConditionCheck:
    """Residuals of grad F . f over on-manifold samples and times."""
    sampler, times, pts = _grid(system, manifold, sampler, times)
    tol = default_tolerance(manifold) if tol is None else float(tol)
    vals = []
    for t in times:
        for x in pts:
            f, _ = system.coefficients(t, x)
            vals.append(float(manifold.grad(x) @ f))
    return ConditionCheck.from_values(vals, tol)


def check_diffusion_tangency(system, manifold, sampler=None, times=None, tol=None) -> ConditionCheck:
    """Per-sample max over noise columns of |grad F . sigma_col|."""
    sampler, times, pts = _grid(system, manifold, sampler, times)
    tol = default_tolerance(manifold) if tol is None else float(tol)
    vals = []
    for t in times:
        for x in pts:
            _, sig = system.coefficients(t, x)
            if system.k == 0:
                vals.append(0.0)
            else:
                vals.append(float(np.abs(manifold.grad(x) @ sig).max()))
    return ConditionCheck.from_values(vals, tol)


def check_correction_vanishes(system, manifold, sampler=None, times=None, tol=None) -> ConditionCheck:
    """Residuals of the second-order Ito term (1/2) trace(sigma sigma^T Hess F)."""
    sampler, times, pts = _grid(system, manifold, sampler, times)
    tol = default_tolerance(manifold) if tol is None else float(tol)
    vals = [
        ito_correction(manifold, system, t, x) for t in times for x in pts
    ]
    return ConditionCheck.from_values(vals, tol)


@dataclass(frozen=True)
class CombinedResiduals:
    """Drift and noise coefficients of dF(x_t) over the sample grid."""

    drift: ResidualStats
    noise: ResidualStats

    def to_dict(self) -> dict:
        return {"drift": self.drift.to_dict(), "noise": self.noise.to_dict()}


def combined_generator_residual(system, manifold, sampler=None, times=None) -> CombinedResiduals:
    """Full dF coefficients: |grad F . f + correction| and ||grad F . sigma||.

    This is the invariance test appropriate for systems whose drift is not
    tangent but whose generator annihilates F (e.g. invariantized systems).
    """
    sampler, times, pts = _grid(system, manifold, sampler, times)
    drift_vals, noise_vals = [], []
    for t in times:
        for x in pts:
            f, sig = system.coefficients(t, x)
            g = manifold.grad(x)
            corr = ito_correction(manifold, system, t, x)
            drift_vals.append(float(g @ f) + corr)
            noise_vals.append(
                0.0 if system.k == 0 else float(np.linalg.norm(g @ sig))
            )
    return CombinedResiduals(
        drift=ResidualStats.from_values(drift_vals),
        noise=ResidualStats.from_values(noise_vals),
    )


def sphere_diffusion_norm(system, sampler, times=None) -> ResidualStats:
    """Frobenius norm of sigma at on-sphere samples.

    For F = sum x_i^2 the correction is half the squared Frobenius norm times
    2, so the sphere is strongly invariant (given drift tangency) iff this
    statistic vanishes.
    """
    times = default_times(system) if times is None else tuple(float(t) for t in times)
    if not times:
        raise ValueError("times must be nonempty")
    pts = sampler.points()
    vals = []
    for t in times:
        for x in pts:
            _, sig = system.coefficients(t, x)
            vals.append(float(np.linalg.norm(sig)))
    return ResidualStats.from_values(vals)


@dataclass(frozen=True)
class InvarianceReport:
    """Bundled residuals for the three strong-invariance conditions plus the
    combined-generator residuals, with per-condition verdicts."""

    drift_tangency: ConditionCheck
    diffusion_tangency: ConditionCheck
    correction: ConditionCheck
    combined: CombinedResiduals
    tolerance: float
    samples: int
    times: tuple
    seed: int

    @property
    def overall(self) -> str:
        ok = (
            self.drift_tangency.holds
            and self.diffusion_tangency.holds
            and self.correction.holds
        )
        return "invariant" if ok else "not-invariant"

    def to_dict(self) -> dict:
        return {
            "drift_tangency": self.drift_tangency.to_dict(),
            "diffusion_tangency": self.diffusion_tangency.to_dict(),
            "ito_correction": self.correction.to_dict(),
            "combined_generator": self.combined.to_dict(),
            "verdict": {
                "drift_tangency": self.drift_tangency.verdict,
                "diffusion_tangency": self.diffusion_tangency.verdict,
                "ito_correction": self.correction.verdict,
                "overall": self.overall,
            },
            "tolerance": self.tolerance,
            "samples": self.samples,
            "times": list(self.times),
            "seed": self.seed,
        }


def strong_invariance_report(system, manifold, sampler=None, times=None, tol=None) -> InvarianceReport:
    """Run all three conditions on one sample grid and bundle the verdicts."""
    if sampler is None:
        sampler = ManifoldSampler(manifold)
    times = default_times(system) if times is None else tuple(float(t) for t in times)
    tol = default_tolerance(manifold) if tol is None else float(tol)
    pts = sampler.points()
    fixed = FixedPointSampler(pts, seed=getattr(sampler, "seed", -1))
    drift = check_drift_tangency(system, manifold, fixed, times, tol)
    diff = check_diffusion_tangency(system, manifold, fixed, times, tol)
    corr = check_correction_vanishes(system, manifold, fixed, times, tol)
    combined = combined_generator_residual(system, manifold, fixed, times)
    return InvarianceReport(
        drift_tangency=drift,
        diffusion_tangency=diff,
        correction=corr,
        combined=combined,
        tolerance=tol,
        samples=len(pts),
        times=times,
        seed=int(getattr(sampler, "seed", -1)),
    )
