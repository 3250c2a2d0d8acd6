"""Core data model: SDE systems, level-set manifolds, noise paths, and the
stochastic-calculus primitives (finite differences, Ito correction, Ito
change of variables) the rest of the package is built on."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

# Step scales balancing truncation against round-off for central differences.
GRAD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)
HESS_STEP = float(np.finfo(float).eps) ** 0.25


class EvaluationError(ValueError):
    """A scalar field returned a non-finite value; carries the offending point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


class DimensionMismatchError(ValueError):
    """An evaluator produced output whose shape violates the system contract."""


class DomainError(ValueError):
    """A point left the domain an operation requires (e.g. F(x) <= 0)."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


def as_state(x) -> np.ndarray:
    """Validate and return a state vector as a 1-D float64 array.

    Raises EvaluationError if any component is NaN or infinite.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"state must be 1-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise EvaluationError("state vector has non-finite components", point=arr)
    return arr


def _fd_steps(x: np.ndarray, scale: float) -> np.ndarray:
    # per-coordinate step, relative for large coordinates, absolute near zero
    return scale * np.maximum(1.0, np.abs(x))


def _eval_scalar(F, x) -> float:
    v = float(F(x))
    if not math.isfinite(v):
        raise EvaluationError("scalar field evaluated to a non-finite value", point=x)
    return v


def grad_fd(F: Callable[[np.ndarray], float], x, step: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar field at x."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.full(n, step, dtype=float) if step is not None else _fd_steps(x, GRAD_STEP)
    if np.any(h <= 0):
        raise ValueError("finite-difference step must be positive")
    g = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        g[i] = (_eval_scalar(F, x + e) - _eval_scalar(F, x - e)) / (2.0 * h[i])
    return g


def hess_fd(F: Callable[[np.ndarray], float], x, step: float | None = None) -> np.ndarray:
    """Central-difference Hessian of a scalar field at x, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.full(n, step, dtype=float) if step is not None else _fd_steps(x, HESS_STEP)
    if np.any(h <= 0):
        raise ValueError("finite-difference step must be positive")
    H = np.empty((n, n))
    f0 = _eval_scalar(F, x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (_eval_scalar(F, x + 2 * ei) - 2.0 * f0 + _eval_scalar(F, x - 2 * ei)) / (
            4.0 * h[i] * h[i]
        )
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            pij = (
                _eval_scalar(F, x + ei + ej)
                - _eval_scalar(F, x + ei - ej)
                - _eval_scalar(F, x - ei + ej)
                + _eval_scalar(F, x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            H[i, j] = pij
            H[j, i] = pij
    return 0.5 * (H + H.T)


@dataclass(frozen=True)
class SdeSystem:
    """An Ito diffusion dX = f(t, X) dt + sigma(t, X) dW.

    `drift` maps (t, x) to a length-n vector, `diffusion` maps (t, x) to an
    n-by-k matrix. Evaluators must be pure. The optional `drift_rows` /
    `diffusion_rows` evaluate whole (P, n) batches at one t and exist for the
    ensemble integrator; when absent the engine falls back to a per-row loop.

    `input_dim` is None for ordinary systems whose evaluators take their own
    state. A transformed system returned in pullback form (see ito_transform)
    sets input_dim to the dimension of the ORIGINAL coordinates its evaluators
    expect; such a system describes coefficients of the image process but
    cannot be stepped in its own coordinates.
    """

    n: int
    k: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    autonomous: bool = False
    drift_rows: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    diffusion_rows: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    input_dim: Optional[int] = None

    def coefficients(self, t: float, x) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate (drift, diffusion) at (t, x) with shape checks."""
        x = np.asarray(x, dtype=float)
        f = np.asarray(self.drift(t, x), dtype=float)
        sig = np.asarray(self.diffusion(t, x), dtype=float)
        if f.shape != (self.n,):
            raise DimensionMismatchError(
                f"drift returned shape {f.shape}, expected ({self.n},)"
            )
        if sig.shape != (self.n, self.k):
            raise DimensionMismatchError(
                f"diffusion returned shape {sig.shape}, expected ({self.n}, {self.k})"
            )
        return f, sig


@dataclass(frozen=True)
class ManifoldSpec:
    """A codimension-1 level set M = {x : F(x) = level} of a smooth F.

    For the transform machinery F must be homogeneous of degree q and
    strictly positive away from the origin, with level 1. Pure invariance
    checking accepts any level. Analytic `gradient` / `hessian` evaluators
    take precedence; central finite differences are the fallback. `f_rows`
    optionally evaluates F on a (P, n) batch of row vectors.
    """

    n: int
    F: Callable[[np.ndarray], float]
    q: int = 2
    level: float = 1.0
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    f_rows: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "level-set"

    @property
    def analytic(self) -> bool:
        return self.gradient is not None and self.hessian is not None

    def value(self, x) -> float:
        return _eval_scalar(self.F, np.asarray(x, dtype=float))

    def values(self, X: np.ndarray) -> np.ndarray:
        """F evaluated on each row of a (P, n) array."""
        X = np.asarray(X, dtype=float)
        if self.f_rows is not None:
            return np.asarray(self.f_rows(X), dtype=float)
        return np.array([self.F(row) for row in X], dtype=float)

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return grad_fd(self.F, x)

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hessian is not None:
            H = np.asarray(self.hessian(x), dtype=float)
            return 0.5 * (H + H.T)
        return hess_fd(self.F, x)

    def homogeneity_defect(self, x, lam: float) -> float:
        """Relative defect |F(lam x) - lam^q F(x)| / max(1, |lam^q F(x)|)."""
        x = np.asarray(x, dtype=float)
        ref = lam**self.q * self.value(x)
        return abs(self.value(lam * x) - ref) / max(1.0, abs(ref))


@dataclass(frozen=True)
class NoisePath:
    """Pre-drawn Brownian increments: a T-by-k matrix of N(0, dt) entries."""

    dt: float
    increments: np.ndarray
    seed: int

    @classmethod
    def generate(cls, seed: int, steps: int, k: int, dt: float) -> "NoisePath":
        """Draw increments reproducibly; the same seed gives identical entries."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        rng = np.random.default_rng(seed)
        inc = rng.standard_normal((steps, k)) * math.sqrt(dt)
        return cls(dt=dt, increments=inc, seed=seed)


@dataclass(frozen=True)
class DifferentiableMap:
    """A map g: R^n -> R^m with per-component derivative evaluators.

    `jacobian(x)` returns the (m, n) matrix of first derivatives and
    `hessian(x)` the (m, n, n) stack of componentwise Hessians; finite
    differences fill in whichever evaluator is missing.
    """

    n: int
    m: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def jac(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float)
        rows = [grad_fd(lambda p, i=i: float(self.value(p)[i]), x) for i in range(self.m)]
        return np.vstack(rows)

    def hess(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(x), dtype=float)
        comps = [hess_fd(lambda p, i=i: float(self.value(p)[i]), x) for i in range(self.m)]
        return np.stack(comps)


def identity_map(n: int) -> DifferentiableMap:
    eye = np.eye(n)
    zero = np.zeros((n, n, n))
    return DifferentiableMap(
        n=n,
        m=n,
        value=lambda x: np.asarray(x, dtype=float),
        jacobian=lambda x: eye,
        hessian=lambda x: zero,
    )


def scalar_map(manifold: ManifoldSpec) -> DifferentiableMap:
    """The level function of a manifold viewed as a map R^n -> R^1."""
    return DifferentiableMap(
        n=manifold.n,
        m=1,
        value=lambda x: np.array([manifold.F(np.asarray(x, dtype=float))]),
        jacobian=lambda x: manifold.grad(x)[None, :],
        hessian=lambda x: manifold.hess(x)[None, :, :],
    )


def ito_correction(manifold: ManifoldSpec, system: SdeSystem, t: float, x) -> float:
    """The second-order Ito term (1/2) trace(sigma sigma^T Hess F) at (t, x)."""
    x = np.asarray(x, dtype=float)
    if x.size != system.n or manifold.n != system.n:
        raise DimensionMismatchError(
            f"dimension mismatch: state {x.size}, system n={system.n}, manifold n={manifold.n}"
        )
    _, sig = system.coefficients(t, x)
    H = manifold.hess(x)
    return 0.5 * float(np.einsum("ij,il,jl->", H, sig, sig))


def ito_transform(system: SdeSystem, g: DifferentiableMap) -> SdeSystem:
    """The SDE satisfied by z = g(x) under the Ito change of variables.

    drift_m   = sum_i dg_m/dx_i f_i + (1/2) sum_ij d2g_m/dx_i dx_j (sigma sigma^T)_ij
    diff_(m,l) = sum_i dg_m/dx_i sigma_(i,l)

    g is not assumed invertible, so the returned evaluators are closures over
    the ORIGINAL coordinates (pullback form, input_dim = n of the source
    system); they describe the coefficients of z but cannot be iterated in z.
    """
    if g.n != system.n:
        raise DimensionMismatchError(
            f"map expects dimension {g.n}, system has n={system.n}"
        )

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        f, sig = system.coefficients(t, x)
        jac = g.jac(x)
        hess = g.hess(x)
        a = sig @ sig.T
        return jac @ f + 0.5 * np.einsum("mij,ij->m", hess, a)

    def diffusion(t, x):
        x = np.asarray(x, dtype=float)
        _, sig = system.coefficients(t, x)
        return g.jac(x) @ sig

    return SdeSystem(
        n=g.m,
        k=system.k,
        drift=drift,
        diffusion=diffusion,
        autonomous=system.autonomous,
        input_dim=system.n,
    )
