"""Problem definitions: coefficient bundles, structure metadata, oracle catalog.

A problem is the decoupled pair

    X_t = x0 + int_0^t b(X_s) ds + int_0^t sigma(X_s) dW_s
    Y_t = h(X_T) + int_t^T f(s, X_s, Y_s, Z_s) ds
               + int_t^T g(s, X_s, Y_s) d<-B_s  -  int_t^T Z_s dW_s

with Y scalar and Z a row integrand against the d-dimensional W.  The
integral against B is backward Ito (right-endpoint evaluation).

Coefficient callables are vectorized over a leading sample axis:

    drift(x)            x: (M, d)        -> (M, d)
    diffusion(x)        x: (M, d)        -> (M, d, d) or (d, d)
    driver_f(t, x, y, z)                 -> (M,)
    driver_g(t, x, y)                    -> (M, dim_b)
    terminal(x)                          -> (M,)

They must be pure; ProblemSpec instances are immutable and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CatalogError

__all__ = [
    "StructureFlags",
    "ProblemSpec",
    "OracleSolution",
    "LipschitzReport",
    "builtin_problem",
    "affine_problem",
    "lipschitz_spot_check",
    "verify_structure_flags",
    "CATALOG_NAMES",
]

CATALOG_NAMES = ("P0", "P1", "P2", "P3", "GBM")


@dataclass(frozen=True)
class StructureFlags:
    """Structural facts about the coefficients.

    All five are required for the exact conditional-expectation backend:
    affine drift, constant diffusion, affine f and g, polynomial h.
    """

    drift_affine: bool = False
    diffusion_constant: bool = False
    f_affine: bool = False
    g_affine: bool = False
    h_polynomial: bool = False

    @property
    def all_set(self) -> bool:
        return (
            self.drift_affine
            and self.diffusion_constant
            and self.f_affine
            and self.g_affine
            and self.h_polynomial
        )


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    dim_x: int
    dim_b: int
    horizon: float
    x0: np.ndarray
    drift: Callable
    diffusion: Callable
    driver_f: Callable
    driver_g: Callable
    terminal: Callable
    lipschitz_c: float
    flags: StructureFlags = field(default_factory=StructureFlags)
    # Max degree of h; needed by the exact backend when h_polynomial is set.
    h_degree: int | None = None
    # Which exact forward simulator applies: "none", "bm_drift" or "gbm".
    exact_sim: str = "none"

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_b < 1:
            raise ValueError("dim_x and dim_b must be >= 1")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.lipschitz_c <= 0.0:
            raise ValueError("lipschitz_c must be positive")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.size != self.dim_x:
            raise ValueError(f"x0 has length {x0.size}, expected {self.dim_x}")
        object.__setattr__(self, "x0", x0)
        if self.exact_sim not in ("none", "bm_drift", "gbm"):
            raise ValueError(f"unknown exact_sim kind {self.exact_sim!r}")


@dataclass(frozen=True, eq=False)
class OracleSolution:
    """Reference solution used by the error metrics.

    ``closed_form`` oracles carry pointwise evaluators

        y_true(t, w_prefix, b_tail) -> float
        z_true(t, w_prefix, b_tail) -> (d,)

    where ``w_prefix`` holds the W grid values up to and including t (shape
    (k, d)) and ``b_tail`` is B_T - B_t.  The grid evaluators are the
    vectorized equivalents used in bulk computations.  For the
    ``fine_grid_reference`` kind the evaluators are None and reference values
    come from a refined run of the scheme itself.
    """

    kind: str
    y_true: Callable | None = None
    z_true: Callable | None = None
    y_on_grid: Callable | None = None
    z_on_grid: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("closed_form", "fine_grid_reference"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.kind == "closed_form" and (self.y_true is None or self.z_true is None):
            raise ValueError("closed_form oracle needs y_true and z_true")


def _const_diffusion(matrix: np.ndarray) -> Callable:
    matrix = np.asarray(matrix, dtype=float)

    def diffusion(x):
        return matrix

    return diffusion


def _brownian_identity_spec(name: str, driver_g: Callable, lipschitz_c: float = 1.0) -> ProblemSpec:
    """X = W problem: b = 0, sigma = 1, h = id, f = 0, with the given g."""
    return ProblemSpec(
        name=name,
        dim_x=1,
        dim_b=1,
        horizon=1.0,
        x0=np.zeros(1),
        drift=lambda x: np.zeros_like(x),
        diffusion=_const_diffusion(np.eye(1)),
        driver_f=lambda t, x, y, z: np.zeros(x.shape[0]),
        driver_g=driver_g,
        terminal=lambda x: x[:, 0],
        lipschitz_c=lipschitz_c,
        flags=StructureFlags(True, True, True, True, True),
        h_degree=1,
        exact_sim="bm_drift",
    )


def _oracle_p0() -> OracleSolution:
    return OracleSolution(
        kind="closed_form",
        y_true=lambda t, w_prefix, b_tail: float(w_prefix[-1, 0]),
        z_true=lambda t, w_prefix, b_tail: np.ones(1),
        y_on_grid=lambda part, w, tails: w[:, :, 0].copy(),
        z_on_grid=lambda part, w, tails: np.ones(w.shape),
    )


def _oracle_p1(beta: float) -> OracleSolution:
    return OracleSolution(
        kind="closed_form",
        y_true=lambda t, w_prefix, b_tail: float(w_prefix[-1, 0] + beta * b_tail[0]),
        z_true=lambda t, w_prefix, b_tail: np.ones(1),
        y_on_grid=lambda part, w, tails: w[:, :, 0] + beta * tails[None, :, 0],
        z_on_grid=lambda part, w, tails: np.ones(w.shape),
    )


def _oracle_p2(beta: float, horizon: float) -> OracleSolution:
    # Backward stochastic exponential of beta * B, written on the tail
    # B_T - B_t.  The exponent sign is derived, not read off a reference;
    # metrics.p2_closed_form_gap cross-checks it against a fine-grid run.
    def expo(t, b_tail):
        return np.exp(beta * b_tail - 0.5 * beta * beta * (horizon - t))

    def y_true(t, w_prefix, b_tail):
        return float(w_prefix[-1, 0] * expo(t, b_tail[0]))

    def z_true(t, w_prefix, b_tail):
        return np.array([expo(t, b_tail[0])])

    def m_on_grid(part, tails):
        return expo(part.times, tails[:, 0])

    return OracleSolution(
        kind="closed_form",
        y_true=y_true,
        z_true=z_true,
        y_on_grid=lambda part, w, tails: w[:, :, 0] * m_on_grid(part, tails)[None, :],
        z_on_grid=lambda part, w, tails: np.broadcast_to(
            m_on_grid(part, tails)[None, :, None], w.shape
        ).copy(),
    )


def _p3_spec() -> ProblemSpec:
    return ProblemSpec(
        name="P3",
        dim_x=1,
        dim_b=1,
        horizon=1.0,
        x0=np.zeros(1),
        drift=lambda x: 0.1 * x,
        diffusion=_const_diffusion(np.eye(1)),
        driver_f=lambda t, x, y, z: 0.2 * y + 0.1 * z[:, 0],
        driver_g=lambda t, x, y: (0.3 + 0.2 * y)[:, None],
        terminal=lambda x: x[:, 0] ** 2,
        lipschitz_c=2.0,
        flags=StructureFlags(True, True, True, True, True),
        h_degree=2,
        exact_sim="none",
    )


def _gbm_spec(mu: float = 0.1, nu: float = 0.5) -> ProblemSpec:
    return ProblemSpec(
        name="GBM",
        dim_x=1,
        dim_b=1,
        horizon=1.0,
        x0=np.ones(1),
        drift=lambda x: mu * x,
        diffusion=lambda x: nu * x[:, :, None] * np.eye(1)[None, :, :],
        driver_f=lambda t, x, y, z: np.zeros(x.shape[0]),
        driver_g=lambda t, x, y: np.zeros((x.shape[0], 1)),
        terminal=lambda x: x[:, 0],
        lipschitz_c=1.0,
        flags=StructureFlags(True, False, True, True, True),
        h_degree=1,
        exact_sim="gbm",
    )


def builtin_problem(name: str) -> tuple[ProblemSpec, OracleSolution | None]:
    """Return a catalog problem and its oracle (None when there is no oracle).

    P0  X = W, h = id, f = 0, g = 0.        Y_t = W_t, Z = 1 (scheme exact).
    P1  as P0 with g == 0.5.                Y_t = W_t + 0.5 (B_T - B_t), Z = 1.
    P2  as P0 with g = 0.5 y.               Y_t = W_t M_t with M_t the backward
                                            exponential of 0.5 B (closed form,
                                            gated by a fine-grid cross-check).
    P3  b = 0.1x, sigma = 1, h = x^2,       fine-grid reference only.
        f = 0.2y + 0.1z, g = 0.3 + 0.2y.
    GBM b = 0.1x, sigma = 0.5x, forward-only problem for the Euler study.
    """
    beta = 0.5
    if name == "P0":
        spec = _brownian_identity_spec(
            "P0", lambda t, x, y: np.zeros((x.shape[0], 1))
        )
        return spec, _oracle_p0()
    if name == "P1":
        spec = _brownian_identity_spec(
            "P1", lambda t, x, y: np.full((x.shape[0], 1), beta)
        )
        return spec, _oracle_p1(beta)
    if name == "P2":
        spec = _brownian_identity_spec("P2", lambda t, x, y: beta * y[:, None])
        return spec, _oracle_p2(beta, spec.horizon)
    if name == "P3":
        return _p3_spec(), OracleSolution(kind="fine_grid_reference")
    if name == "GBM":
        return _gbm_spec(), None
    raise CatalogError(
        f"unknown problem {name!r}; available: {', '.join(CATALOG_NAMES)}"
    )


def affine_problem(
    *,
    horizon: float = 1.0,
    x0: float = 0.0,
    b0: float = 0.0,
    b1: float = 0.0,
    sigma: float = 1.0,
    f0: float = 0.0,
    fx: float = 0.0,
    fy: float = 0.0,
    fz: float = 0.0,
    g0: float = 0.0,
    gx: float = 0.0,
    gy: float = 0.0,
    h_coeffs: tuple[float, ...] = (0.0, 1.0),
    lipschitz_c: float | None = None,
    name: str = "inline",
) -> ProblemSpec:
    """Build a one-dimensional problem from an affine coefficient table.

    b(x) = b0 + b1 x, sigma const, f = f0 + fx x + fy y + fz z,
    g = g0 + gx x + gy y (dim_b = 1), h given by polynomial coefficients in
    ascending degree.  All structure flags are set, so the exact backend
    applies whenever the Picard contraction allows.
    """
    h = np.asarray(h_coeffs, dtype=float)
    if h.size < 1:
        raise ValueError("h_coeffs must contain at least one coefficient")
    if lipschitz_c is None:
        lipschitz_c = max(
            1.0,
            abs(b1),
            np.hypot(fx, np.hypot(fy, fz)),
            np.hypot(gx, gy),
        )
    poly = np.polynomial.polynomial
    return ProblemSpec(
        name=name,
        dim_x=1,
        dim_b=1,
        horizon=horizon,
        x0=np.array([x0]),
        drift=lambda x: b0 + b1 * x,
        diffusion=_const_diffusion(np.array([[sigma]])),
        driver_f=lambda t, x, y, z: f0 + fx * x[:, 0] + fy * y + fz * z[:, 0],
        driver_g=lambda t, x, y: (g0 + gx * x[:, 0] + gy * y)[:, None],
        terminal=lambda x: poly.polyval(x[:, 0], h),
        lipschitz_c=float(lipschitz_c),
        flags=StructureFlags(True, True, True, True, True),
        h_degree=h.size - 1,
        exact_sim="bm_drift" if b1 == 0.0 else "none",
    )


@dataclass(frozen=True)
class LipschitzReport:
    """Maximum observed difference quotients over the sampled box.

    ``forward`` combines drift and diffusion as in the joint forward
    condition; the others are plain quotients |df| / |d(args)|.  A quotient
    above the declared constant is a diagnostic, not an exception.  Note that
    a polynomial terminal of degree >= 2 (P3) has unbounded quotient, so its
    ``h`` entry will legitimately flag on a large box.
    """

    forward: float
    f: float
    g: float
    h: float
    lipschitz_c: float

    @property
    def violations(self) -> tuple[str, ...]:
        names = ("forward", "f", "g", "h")
        vals = (self.forward, self.f, self.g, self.h)
        return tuple(n for n, v in zip(names, vals) if v > self.lipschitz_c)

    @property
    def max_ratio(self) -> float:
        return max(self.forward, self.f, self.g, self.h)


def lipschitz_spot_check(
    spec: ProblemSpec, trials: int = 10_000, seed: int = 0, box: float = 10.0
) -> LipschitzReport:
    """Sample random argument pairs in [-box, box] and record max quotients."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = _spot_rng(seed)
    d = spec.dim_x
    x = rng.uniform(-box, box, (trials, d))
    xp = rng.uniform(-box, box, (trials, d))
    dx = np.linalg.norm(x - xp, axis=1)
    keep = dx > 1e-9
    x, xp, dx = x[keep], xp[keep], dx[keep]
    m = x.shape[0]

    db = np.linalg.norm(
        np.broadcast_to(np.asarray(spec.drift(x), float), (m, d))
        - np.broadcast_to(np.asarray(spec.drift(xp), float), (m, d)),
        axis=1,
    )
    sig = np.broadcast_to(np.asarray(spec.diffusion(x), float), (m, d, d))
    sigp = np.broadcast_to(np.asarray(spec.diffusion(xp), float), (m, d, d))
    dsig = np.sqrt(((sig - sigp) ** 2).sum(axis=(1, 2)))
    forward = float(np.max((db + dsig) / dx))

    t = rng.uniform(0.0, spec.horizon, m)
    tp = rng.uniform(0.0, spec.horizon, m)
    y = rng.uniform(-box, box, m)
    yp = rng.uniform(-box, box, m)
    z = rng.uniform(-box, box, (m, d))
    zp = rng.uniform(-box, box, (m, d))

    dist_f = np.sqrt(
        (t - tp) ** 2 + dx**2 + (y - yp) ** 2 + ((z - zp) ** 2).sum(axis=1)
    )
    df = np.abs(
        np.asarray(spec.driver_f(0.0, x, y, z), float)
        - np.asarray(spec.driver_f(0.0, xp, yp, zp), float)
    )
    # f is probed at one time slice plus a pure time sweep; H2 makes the time
    # dependence part of the same constant.
    df_t = np.abs(
        np.asarray(spec.driver_f(spec.horizon, x, y, z), float)
        - np.asarray(spec.driver_f(0.0, x, y, z), float)
    )
    ratio_f = float(max(np.max(df / dist_f), np.max(df_t) / spec.horizon))

    dist_g = np.sqrt(dx**2 + (y - yp) ** 2)
    dg = np.linalg.norm(
        np.asarray(spec.driver_g(0.0, x, y), float)
        - np.asarray(spec.driver_g(0.0, xp, yp), float),
        axis=1,
    )
    dg_t = np.linalg.norm(
        np.asarray(spec.driver_g(spec.horizon, x, y), float)
        - np.asarray(spec.driver_g(0.0, x, y), float),
        axis=1,
    )
    ratio_g = float(max(np.max(dg / dist_g), np.max(dg_t) / spec.horizon))

    dh = np.abs(
        np.asarray(spec.terminal(x), float) - np.asarray(spec.terminal(xp), float)
    )
    ratio_h = float(np.max(dh / dx))

    return LipschitzReport(forward, ratio_f, ratio_g, ratio_h, spec.lipschitz_c)


def verify_structure_flags(spec: ProblemSpec, trials: int = 16, seed: int = 0) -> None:
    """Raise ValueError if a set structure flag contradicts sampled values."""
    rng = _spot_rng(seed)
    d = spec.dim_x
    x = rng.uniform(-3.0, 3.0, (trials, d))
    xp = rng.uniform(-3.0, 3.0, (trials, d))
    flags = spec.flags

    def midpoint_gap(fn):
        half = fn((x + xp) / 2.0)
        return np.max(np.abs(half - 0.5 * (fn(x) + fn(xp))))

    if flags.drift_affine:
        gap = midpoint_gap(lambda u: np.asarray(spec.drift(u), float))
        if gap > 1e-8:
            raise ValueError(f"drift_affine flag inconsistent (midpoint gap {gap:.2e})")
    if flags.diffusion_constant:
        sig = np.broadcast_to(np.asarray(spec.diffusion(x), float), (trials, d, d))
        sigp = np.broadcast_to(np.asarray(spec.diffusion(xp), float), (trials, d, d))
        gap = np.max(np.abs(sig - sigp))
        if gap > 1e-8:
            raise ValueError(f"diffusion_constant flag inconsistent (gap {gap:.2e})")
    if flags.f_affine:
        y = rng.uniform(-3.0, 3.0, trials)
        yp = rng.uniform(-3.0, 3.0, trials)
        z = rng.uniform(-3.0, 3.0, (trials, d))
        zp = rng.uniform(-3.0, 3.0, (trials, d))
        for t in (0.0, 0.5 * spec.horizon, spec.horizon):
            half = np.asarray(
                spec.driver_f(t, (x + xp) / 2, (y + yp) / 2, (z + zp) / 2), float
            )
            ends = 0.5 * (
                np.asarray(spec.driver_f(t, x, y, z), float)
                + np.asarray(spec.driver_f(t, xp, yp, zp), float)
            )
            if np.max(np.abs(half - ends)) > 1e-8:
                raise ValueError("f_affine flag inconsistent with sampled values")
    if flags.g_affine:
        y = rng.uniform(-3.0, 3.0, trials)
        yp = rng.uniform(-3.0, 3.0, trials)
        for t in (0.0, 0.5 * spec.horizon, spec.horizon):
            half = np.asarray(spec.driver_g(t, (x + xp) / 2, (y + yp) / 2), float)
            ends = 0.5 * (
                np.asarray(spec.driver_g(t, x, y), float)
                + np.asarray(spec.driver_g(t, xp, yp), float)
            )
            if np.max(np.abs(half - ends)) > 1e-8:
                raise ValueError("g_affine flag inconsistent with sampled values")
    if flags.h_polynomial:
        if spec.h_degree is None:
            raise ValueError("h_polynomial flag set but h_degree missing")
        if d == 1:
            # The (k+1)-th forward difference of a degree-k polynomial is 0.
            k = spec.h_degree + 1
            base = rng.uniform(-2.0, 2.0, trials)
            acc = np.zeros(trials)
            scale = np.zeros(trials)
            for j in range(k + 1):
                coef = (-1.0) ** (k - j) * _binom(k, j)
                vals = np.asarray(spec.terminal((base + j)[:, None]), float)
                acc += coef * vals
                scale = np.maximum(scale, np.abs(vals))
            if np.max(np.abs(acc) / np.maximum(1.0, scale)) > 1e-7:
                raise ValueError(
                    f"h_polynomial flag inconsistent with degree {spec.h_degree}"
                )


def _binom(n: int, k: int) -> float:
    out = 1.0
    for j in range(1, k + 1):
        out = out * (n - k + j) / j
    return out


def _spot_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 2))))
