"""Built-in model library: the planar Kubo oscillator family and the
single-spin Landau-Lifshitz family, with analytic manifold derivatives and
batch-capable coefficient evaluators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ManifoldSpec, SdeSystem


def cross(u, v):
    """Right-handed cross product in R^3, broadcasting over leading axes."""
    return np.cross(u, v)


def sphere_manifold(n: int) -> ManifoldSpec:
    """The unit level set of F(x) = sum x_i^2 (circle for n=2, sphere for n=3)."""
    eye2 = 2.0 * np.eye(n)

    def F(x):
        x = np.asarray(x, dtype=float)
        return float(np.einsum("i,i->", x, x))

    return ManifoldSpec(
        n=n,
        F=F,
        q=2,
        level=1.0,
        gradient=lambda x: 2.0 * np.asarray(x, dtype=float),
        hessian=lambda x: eye2,
        f_rows=lambda X: np.einsum("pi,pi->p", X, X),
        name=f"sphere{n}",
    )


@dataclass(frozen=True)
class KuboParams:
    """Rotation rate a and noise intensity sigma of the planar Kubo oscillator."""

    a: float = 2.0
    sigma: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.sigma)):
            raise ValueError("Kubo parameters must be finite")


@dataclass(frozen=True)
class LLParams:
    """Effective field b, damping alpha and noise amplitude epsilon.

    alpha = 0 is admitted as the undamped (Larmor) limit; equilibria at
    +-b/|b| require a nonzero field.
    """

    b: tuple = (0.0, 0.0, 1.0)
    alpha: float = 0.5
    epsilon: float = 0.1

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.shape != (3,) or not np.isfinite(b).all():
            raise ValueError("b must be a finite 3-vector")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and >= 0")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError("epsilon must be finite and >= 0")

    @property
    def field(self) -> np.ndarray:
        return np.asarray(self.b, dtype=float)


def rotation_generator(k: float) -> np.ndarray:
    """The antisymmetric 2x2 matrix [[0, -k], [k, 0]]."""
    return np.array([[0.0, -k], [k, 0.0]])


def kubo_system(p: KuboParams) -> SdeSystem:
    """dX = J_a X dt + J_sigma X dW with scalar noise (n=2, k=1)."""
    Ja = rotation_generator(p.a)
    Js = rotation_generator(p.sigma)

    def drift(t, x):
        return Ja @ x

    def diffusion(t, x):
        return (Js @ x)[:, None]

    return SdeSystem(
        n=2,
        k=1,
        drift=drift,
        diffusion=diffusion,
        autonomous=True,
        drift_rows=lambda t, X: X @ Ja.T,
        diffusion_rows=lambda t, X: (X @ Js.T)[:, :, None],
    )


def kubo_invariantized_closed_form(p: KuboParams) -> SdeSystem:
    """The unit-circle-preserving Kubo system: time-decayed rotation drift
    with diagonal contraction -sigma^2/(2 H) and noise scaled by 1/sqrt(H),
    H(t) = sigma^2 t + 1."""
    a, s = p.a, p.sigma
    Js = rotation_generator(s)

    def tilde(t):
        H = s * s * t + 1.0
        rH = np.sqrt(H)
        d = -s * s / (2.0 * H)
        o = a / rH
        return np.array([[d, -o], [o, d]]), rH

    def drift(t, x):
        M, _ = tilde(t)
        return M @ x

    def diffusion(t, x):
        _, rH = tilde(t)
        return ((Js @ x) / rH)[:, None]

    return SdeSystem(
        n=2,
        k=1,
        drift=drift,
        diffusion=diffusion,
        autonomous=False,
        drift_rows=lambda t, X: X @ tilde(t)[0].T,
        diffusion_rows=lambda t, X: ((X @ Js.T) / tilde(t)[1])[:, :, None],
    )


def _ll_drift_fn(b: np.ndarray, alpha: float) -> Callable:
    def drift(t, x):
        xb = np.cross(x, b)
        return -xb - alpha * np.cross(x, xb)

    return drift


def ll_sigma_matrix(p: LLParams, x) -> np.ndarray:
    """The 3x3 matrix of the field-noise operator v -> -x^v - alpha x^(x^v),
    before epsilon scaling. Broadcasts: x of shape (..., 3) gives (..., 3, 3)."""
    x = np.asarray(x, dtype=float)
    a = p.alpha
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    z = np.zeros_like(x1)
    rows = [
        [a * (x3 * x3 + x2 * x2), x3 - a * x1 * x2, -x2 - a * x3 * x1],
        [-x3 - a * x1 * x2, a * (x3 * x3 + x1 * x1), x1 - a * x3 * x2],
        [x2 - a * x1 * x3, -x1 - a * x3 * x2, a * (x2 * x2 + x1 * x1)],
    ]
    out = np.stack([np.stack([e + z for e in r], axis=-1) for r in rows], axis=-2)
    return out


def ll_deterministic(p: LLParams) -> SdeSystem:
    """dmu/dt = -mu^b - alpha mu^(mu^b), no noise (n=3, k=0)."""
    b = p.field
    drift = _ll_drift_fn(b, p.alpha)
    empty = np.zeros((3, 0))

    return SdeSystem(
        n=3,
        k=0,
        drift=drift,
        diffusion=lambda t, x: empty,
        autonomous=True,
        drift_rows=drift,
        diffusion_rows=lambda t, X: np.zeros((X.shape[0], 3, 0)),
    )


def ll_stochastic(p: LLParams) -> SdeSystem:
    """Field-noise Ito perturbation of the Landau-Lifshitz flow:
    drift as ll_deterministic, diffusion epsilon * ll_sigma_matrix (k=3)."""
    b = p.field
    eps = p.epsilon
    drift = _ll_drift_fn(b, p.alpha)

    def diffusion(t, x):
        return eps * ll_sigma_matrix(p, x)

    return SdeSystem(
        n=3,
        k=3,
        drift=drift,
        diffusion=diffusion,
        autonomous=True,
        drift_rows=drift,
        diffusion_rows=lambda t, X: eps * ll_sigma_matrix(p, X),
    )


def ll_growth_rate(p: LLParams) -> float:
    """The constant drift 2 eps^2 (alpha^2 + 1) of F along the raw noisy flow."""
    return 2.0 * p.epsilon**2 * (p.alpha**2 + 1.0)


def _ll_scale(p: LLParams, t):
    h = ll_growth_rate(p)
    H = h * t + 1.0
    return h, H, np.sqrt(H)


def ll_invariantized(p: LLParams) -> SdeSystem:
    """Sphere-preserving rescaled system: drift -(1/2)(h/H) x + f(x)/sqrt(H),
    diffusion eps sigma(x)/sqrt(H), with H(t) = 2 eps^2 (alpha^2+1) t + 1."""
    base_drift = _ll_drift_fn(p.field, p.alpha)
    eps = p.epsilon

    def drift(t, x):
        h, H, rH = _ll_scale(p, t)
        return x * (-0.5 * (h / H)) + base_drift(t, x) / rH

    def diffusion(t, x):
        _, _, rH = _ll_scale(p, t)
        return (eps / rH) * ll_sigma_matrix(p, x)

    return SdeSystem(
        n=3,
        k=3,
        drift=drift,
        diffusion=diffusion,
        autonomous=False,
        drift_rows=drift,
        diffusion_rows=lambda t, X: (eps / _ll_scale(p, t)[2]) * ll_sigma_matrix(p, X),
    )


def ll_modified(p: LLParams) -> SdeSystem:
    """Variant of ll_invariantized with scalar noise along the field direction:
    the single diffusion column is eps sigma(x) b / sqrt(H) (n=3, k=1)."""
    b = p.field
    eps = p.epsilon
    inv_drift = ll_invariantized(p).drift

    def diffusion(t, x):
        _, _, rH = _ll_scale(p, t)
        col = (eps / rH) * (ll_sigma_matrix(p, x) @ b)
        return col[:, None]

    def diffusion_rows(t, X):
        _, _, rH = _ll_scale(p, t)
        cols = (eps / rH) * np.einsum("pij,j->pi", ll_sigma_matrix(p, X), b)
        return cols[:, :, None]

    return SdeSystem(
        n=3,
        k=1,
        drift=inv_drift,
        diffusion=diffusion,
        autonomous=False,
        drift_rows=inv_drift,
        diffusion_rows=diffusion_rows,
    )


def larmor_system(b) -> SdeSystem:
    """Undamped precession dmu/dt = -mu^b: the alpha = 0 deterministic limit."""
    b = np.asarray(b, dtype=float)
    if b.shape != (3,):
        raise ValueError("b must be a 3-vector")
    return ll_deterministic(LLParams(b=tuple(b), alpha=0.0, epsilon=0.0))


@dataclass(frozen=True)
class ModelEntry:
    """Registry record: how to build a model and its implied manifold."""

    build: Callable[[dict], SdeSystem]
    manifold: Callable[[], ManifoldSpec]
    schema: dict
    default_state: tuple
    eps_param: str | None = None


def _kubo_params(params: dict) -> KuboParams:
    return KuboParams(
        a=float(params.get("a", 2.0)), sigma=float(params.get("sigma", 0.5))
    )


def _ll_params(params: dict) -> LLParams:
    return LLParams(
        b=tuple(float(v) for v in params.get("b", (0.0, 0.0, 1.0))),
        alpha=float(params.get("alpha", 0.5)),
        epsilon=float(params.get("epsilon", 0.1)),
    )


_KUBO_SCHEMA = {
    "a": {"type": "number", "default": 2.0, "description": "rotation rate"},
    "sigma": {"type": "number", "default": 0.5, "description": "noise intensity"},
}
_LL_SCHEMA = {
    "b": {
        "type": "array",
        "items": "number",
        "default": [0.0, 0.0, 1.0],
        "description": "effective field",
    },
    "alpha": {"type": "number", "default": 0.5, "description": "damping"},
    "epsilon": {"type": "number", "default": 0.1, "description": "noise amplitude"},
}
_LARMOR_SCHEMA = {
    "b": {
        "type": "array",
        "items": "number",
        "default": [0.0, 0.0, 1.0],
        "description": "effective field",
    },
}

REGISTRY: dict[str, ModelEntry] = {
    "kubo": ModelEntry(
        build=lambda params: kubo_system(_kubo_params(params)),
        manifold=lambda: sphere_manifold(2),
        schema=_KUBO_SCHEMA,
        default_state=(1.0, 0.0),
        eps_param="sigma",
    ),
    "kubo-invariantized": ModelEntry(
        build=lambda params: kubo_invariantized_closed_form(_kubo_params(params)),
        manifold=lambda: sphere_manifold(2),
        schema=_KUBO_SCHEMA,
        default_state=(1.0, 0.0),
    ),
    "ll": ModelEntry(
        build=lambda params: ll_deterministic(_ll_params(params)),
        manifold=lambda: sphere_manifold(3),
        schema=_LL_SCHEMA,
        default_state=(1.0, 0.0, 0.0),
    ),
    "ll-stochastic": ModelEntry(
        build=lambda params: ll_stochastic(_ll_params(params)),
        manifold=lambda: sphere_manifold(3),
        schema=_LL_SCHEMA,
        default_state=(1.0, 0.0, 0.0),
        eps_param="epsilon",
    ),
    "ll-invariantized": ModelEntry(
        build=lambda params: ll_invariantized(_ll_params(params)),
        manifold=lambda: sphere_manifold(3),
        schema=_LL_SCHEMA,
        default_state=(1.0, 0.0, 0.0),
    ),
    "ll-modified": ModelEntry(
        build=lambda params: ll_modified(_ll_params(params)),
        manifold=lambda: sphere_manifold(3),
        schema=_LL_SCHEMA,
        default_state=(1.0, 0.0, 0.0),
    ),
    "larmor": ModelEntry(
        build=lambda params: larmor_system(params.get("b", (0.0, 0.0, 1.0))),
        manifold=lambda: sphere_manifold(3),
        schema=_LARMOR_SCHEMA,
        default_state=(1.0, 0.0, 0.0),
    ),
}


def build_model(model_id: str, params: dict | None = None) -> SdeSystem:
    if model_id not in REGISTRY:
        raise KeyError(f"unknown model id {model_id!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[model_id].build(params or {})


def model_manifold(model_id: str) -> ManifoldSpec:
    if model_id not in REGISTRY:
        raise KeyError(f"unknown model id {model_id!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[model_id].manifold()
