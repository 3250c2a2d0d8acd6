"""Invariance-restoring transforms for homogeneous level-1 manifolds.

Two constructions are provided. `projected_sde` applies the generic Ito
change of variables to the normalization map x -> x / F(x)^(1/q); the result
is exact but lives in pullback form. `invariantize` rescales time and state
through the scale law H(t) = 1 + integral of h, where h is the (state
independent) drift of F along the coupled representation; the coupled
representation itself, which advances raw coordinates with coefficients
frozen at the normalized state, is available as a simulatable object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from . import invariance
from .core import (
    DifferentiableMap,
    DomainError,
    ManifoldSpec,
    SdeSystem,
    ito_correction,
    ito_transform,
)

QUADRATURE_ABS_TOL = 1e-10


class NotInvariantizableError(ValueError):
    """The scale-law preconditions fail: tangency is violated or the F-drift
    is state-dependent on the manifold. Carries the measured spread."""

    def __init__(self, message, spread=None):
        super().__init__(message)
        self.spread = spread


class HorizonError(ValueError):
    """H(t) <= 0 was encountered; the transform is valid only while H > 0."""


def project_state(x, manifold: ManifoldSpec) -> np.ndarray:
    """Normalize x onto {F = 1} via x / F(x)^(1/q); requires F(x) > 0."""
    x = np.asarray(x, dtype=float)
    F = manifold.value(x)
    if not F > 0.0:
        raise DomainError(f"F(x) = {F} is not positive at x = {x.tolist()}", point=x)
    return x / np.power(F, 1.0 / manifold.q)


def normalize_rows(Y: np.ndarray, manifold: ManifoldSpec):
    """Row-wise projection of a (P, n) slab; returns (X, ok) where ok flags
    rows with finite, positive F. Bad rows come back as NaN."""
    Y = np.asarray(Y, dtype=float)
    F = manifold.values(Y)
    ok = np.isfinite(F) & (F > 0.0) & np.isfinite(Y).all(axis=1)
    X = np.full_like(Y, np.nan)
    if ok.any():
        X[ok] = Y[ok] / np.power(F[ok], 1.0 / manifold.q)[:, None]
    return X, ok


def _ulp_steps(col: np.ndarray, k: int) -> np.ndarray:
    target = np.inf if k > 0 else -np.inf
    out = col
    for _ in range(abs(k)):
        out = np.nextafter(out, target)
    return out


def snap_to_level(X: np.ndarray, manifold: ManifoldSpec) -> tuple[np.ndarray, int]:
    """Nudge rows of X by ulps so that F evaluates to the level exactly.

    Points within rounding of the manifold generally miss the level by an ulp
    or two; this routine first sweeps single-coordinate ulp steps and then
    rebuilds the smallest-magnitude coordinate as a square-root complement,
    whose step granularity is finer than the rounding capture window around
    the level. Returns (snapped copy, number of rows left inexact). Rows with
    non-finite entries are ignored.
    """
    X = np.array(X, dtype=float, copy=True)
    level = manifold.level
    n = X.shape[1]

    def bad_rows() -> np.ndarray:
        finite = np.isfinite(X).all(axis=1)
        off = np.zeros(len(X), dtype=bool)
        if finite.any():
            off[finite] = manifold.values(X[finite]) != level
        return np.where(off)[0]

    bad = bad_rows()
    if bad.size == 0:
        return X, 0

    # pass 1: single-coordinate ulp sweep, dominant coordinates first
    for knob in range(n):
        idx = bad
        cols = np.argsort(-np.abs(X[idx]), axis=1)[:, knob]
        for k in (1, -1, 2, -2):
            if idx.size == 0:
                break
            r = np.arange(idx.size)
            cand = X[idx].copy()
            cand[r, cols] = _ulp_steps(cand[r, cols], k)
            hit = manifold.values(cand) == level
            if hit.any():
                X[idx[hit]] = cand[hit]
                idx, cols = idx[~hit], cols[~hit]
        bad = bad_rows()
        if bad.size == 0:
            return X, 0

    # pass 2: rebuild one coordinate from the level constraint, smallest first
    for knob in range(n - 1, -1, -1):
        sub = X[bad]
        cols = np.argsort(-np.abs(sub), axis=1)[:, knob]
        r = np.arange(bad.size)
        chosen = sub[r, cols]
        others = sub.copy()
        others[r, cols] = 0.0
        rest = level - manifold.values(others)
        keep = rest >= 0.0
        idx, cols = bad[keep], cols[keep]
        rebuilt = np.copysign(np.sqrt(rest[keep]), chosen[keep])
        for k in (0, 1, -1, 2, -2, 3, -3):
            if idx.size == 0:
                break
            cand = X[idx].copy()
            cand[np.arange(idx.size), cols] = _ulp_steps(rebuilt, k)
            hit = manifold.values(cand) == level
            if hit.any():
                X[idx[hit]] = cand[hit]
                still = ~hit
                idx, cols, rebuilt = idx[still], cols[still], rebuilt[still]
        bad = bad_rows()
        if bad.size == 0:
            return X, 0
    return X, int(bad.size)


def normalization_map(manifold: ManifoldSpec) -> DifferentiableMap:
    """g(x) = x F(x)^(-1/q) with analytic Jacobian/Hessian in terms of the
    manifold's gradient and Hessian evaluators."""
    n, q = manifold.n, manifold.q

    def value(x):
        return project_state(x, manifold)

    def _powers(x):
        F = manifold.value(x)
        if not F > 0.0:
            raise DomainError(f"F(x) = {F} is not positive at x = {x.tolist()}", point=x)
        return F

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        F = _powers(x)
        u = F ** (-1.0 / q)
        du = (-(1.0 / q) * F ** (-(1.0 + q) / q)) * manifold.grad(x)
        return u * np.eye(n) + np.outer(x, du)

    def hessian(x):
        x = np.asarray(x, dtype=float)
        F = _powers(x)
        gF = manifold.grad(x)
        HF = manifold.hess(x)
        du = (-(1.0 / q) * F ** (-(1.0 + q) / q)) * gF
        Hu = (
            -(1.0 / q) * F ** (-(1.0 + q) / q) * HF
            + ((1.0 + q) / q**2) * F ** (-(1.0 + 2.0 * q) / q) * np.outer(gF, gF)
        )
        out = np.empty((n, n, n))
        for k in range(n):
            ek = np.zeros(n)
            ek[k] = 1.0
            out[k] = np.outer(ek, du) + np.outer(du, ek) + x[k] * Hu
        return out

    return DifferentiableMap(n=n, m=n, value=value, jacobian=jacobian, hessian=hessian)


def projected_sde(system: SdeSystem, manifold: ManifoldSpec) -> SdeSystem:
    """The SDE of y = x / F(x)^(1/q), via the generic Ito change of variables.

    Returned in pullback form: the evaluators take original coordinates x.
    """
    if manifold.level != 1.0:
        raise ValueError("projection requires a level-1 homogeneous manifold")
    return ito_transform(system, normalization_map(manifold))


@dataclass(frozen=True)
class ScaleLaw:
    """The pair (h, H) with H(t) = 1 + integral_0^t h(s) ds and H(0) = 1."""

    h: Callable[[float], float]
    H: Callable[[float], float]
    form: str

    @classmethod
    def constant(cls, h0: float) -> "ScaleLaw":
        h0 = float(h0)
        return cls(h=lambda t: h0, H=lambda t: 1.0 + h0 * t, form="closed-form-constant-h")

    @classmethod
    def closed_form(cls, h: Callable, H: Callable) -> "ScaleLaw":
        return cls(h=h, H=H, form="closed-form-general")

    @classmethod
    def from_function(cls, h: Callable) -> "ScaleLaw":
        def H(t):
            if t == 0.0:
                return 1.0
            integral, _ = quad(h, 0.0, t, epsabs=QUADRATURE_ABS_TOL, limit=200)
            return 1.0 + integral

        return cls(h=h, H=H, form="numeric-quadrature")


def _f_drift_values(system, manifold, pts, t):
    """Drift coefficient of dF at each sample: grad F . f + Ito correction."""
    vals = []
    for x in pts:
        f, _ = system.coefficients(t, x)
        vals.append(float(manifold.grad(x) @ f) + ito_correction(manifold, system, t, x))
    return vals


def scale_law_from_correction(system, manifold, sampler=None, tol=None) -> ScaleLaw:
    """Extract h(t) = dF-drift from on-manifold samples, verifying that it is
    state-independent (spread over samples within tol) and that the system is
    tangent enough for the construction to apply.

    Autonomous systems give the constant-h closed form; otherwise h is
    evaluated per query time and H by adaptive quadrature.
    """
    if sampler is None:
        sampler = invariance.ManifoldSampler(manifold)
    tol = invariance.default_tolerance(manifold) if tol is None else float(tol)

    times = invariance.default_times(system)
    pts = sampler.points()
    fixed = invariance.FixedPointSampler(pts, seed=getattr(sampler, "seed", -1))
    drift = invariance.check_drift_tangency(system, manifold, fixed, times, tol)
    if not drift.holds:
        raise NotInvariantizableError(
            f"drift is not tangent on the manifold (max residual {drift.stats.max:.3e})",
            spread=drift.stats.max,
        )
    diff = invariance.check_diffusion_tangency(system, manifold, fixed, times, tol)
    if not diff.holds:
        raise NotInvariantizableError(
            f"diffusion is not tangent on the manifold (max residual {diff.stats.max:.3e})",
            spread=diff.stats.max,
        )

    def h_at(t: float) -> float:
        vals = _f_drift_values(system, manifold, pts, t)
        spread = max(vals) - min(vals)
        if spread > tol:
            raise NotInvariantizableError(
                f"dF drift is state-dependent on the manifold at t={t} "
                f"(spread {spread:.3e} > tol {tol:.1e}); "
                "the scale law would be random",
                spread=spread,
            )
        return math.fsum(vals) / len(vals)

    if system.autonomous:
        return ScaleLaw.constant(h_at(0.0))
    return ScaleLaw.from_function(h_at)


def invariantize(system: SdeSystem, manifold: ManifoldSpec, law: ScaleLaw) -> SdeSystem:
    """The invariantized system:
    dx = [-(1/q)(h/H) x + H^(-1/q) f(t, x)] dt + H^(-1/q) sigma(t, x) dW."""
    if manifold.level != 1.0:
        raise ValueError("invariantization requires a level-1 homogeneous manifold")
    q = manifold.q

    def scales(t):
        H = float(law.H(t))
        if H <= 0.0:
            raise HorizonError(f"H({t}) = {H} <= 0; law valid only while H > 0")
        return H, H ** (-1.0 / q)

    def drift(t, x):
        H, s = scales(t)
        return x * (-(law.h(t) / (q * H))) + s * system.drift(t, x)

    def diffusion(t, x):
        _, s = scales(t)
        return s * np.asarray(system.diffusion(t, x), dtype=float)

    drift_rows = None
    diffusion_rows = None
    if system.drift_rows is not None:

        def drift_rows(t, X):
            H, s = scales(t)
            return X * (-(law.h(t) / (q * H))) + s * system.drift_rows(t, X)

    if system.diffusion_rows is not None:

        def diffusion_rows(t, X):
            _, s = scales(t)
            return s * np.asarray(system.diffusion_rows(t, X), dtype=float)

    return SdeSystem(
        n=system.n,
        k=system.k,
        drift=drift,
        diffusion=diffusion,
        autonomous=False,
        drift_rows=drift_rows,
        diffusion_rows=diffusion_rows,
    )


@dataclass(frozen=True)
class CoupledInvariantizedSystem:
    """The coupled representation: y advances with base coefficients frozen at
    the normalized state x = y / F(y)^(1/q); both streams are observable."""

    base: SdeSystem
    manifold: ManifoldSpec

    def normalize(self, y) -> np.ndarray:
        return project_state(y, self.manifold)

    def normalize_rows(self, Y):
        return normalize_rows(Y, self.manifold)

    def step(self, t: float, y, dW, dt: float) -> np.ndarray:
        """One Euler-Maruyama step of the y process."""
        x = self.normalize(y)
        f, sig = self.base.coefficients(t, x)
        dW = np.asarray(dW, dtype=float)
        return np.asarray(y, dtype=float) + f * dt + sig @ dW


def coupled_step_representation(system: SdeSystem, manifold: ManifoldSpec) -> CoupledInvariantizedSystem:
    if manifold.level != 1.0:
        raise ValueError("the coupled representation requires a level-1 manifold")
    if system.input_dim is not None:
        raise ValueError("cannot couple a pullback-form system")
    if manifold.n != system.n:
        raise ValueError("manifold and system dimensions differ")
    return CoupledInvariantizedSystem(base=system, manifold=manifold)


def describe_at(system: SdeSystem, t: float, x, law: Optional[ScaleLaw] = None) -> dict:
    """Coefficients of a (possibly transformed) system at one (t, x), as a
    JSON-ready document with fields t, x, drift, diffusion, H, h."""
    x = np.asarray(x, dtype=float)
    f, sig = system.coefficients(t, x)
    return {
        "t": float(t),
        "x": x.tolist(),
        "drift": f.tolist(),
        "diffusion": sig.tolist(),
        "H": None if law is None else float(law.H(t)),
        "h": None if law is None else float(law.h(t)),
    }
