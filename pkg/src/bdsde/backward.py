"""Backward recursion of the discrete-time scheme.

Starting from Y_n = h(X_T) and Z_n = 0, each step i = n..1 computes, with
E_{i-1}[.] the conditional expectation given X_{t_{i-1}} and the full B-path,

    Z_{i-1} = E_{i-1}[ (Y_i + g(t_i, X_i, Y_i) . dB_i) dW_i ] / dt_i
    Y_{i-1} = E_{i-1}[  Y_i + g(t_i, X_i, Y_i) . dB_i ]
              + dt_i f(t_{i-1}, X_{i-1}, Y_{i-1}, Z_{i-1})

Endpoint placement is deliberate and fixed: g sits at the right endpoint with
right-endpoint states (backward Ito evaluation), f at the left endpoint, and
the Y-step is implicit, solved by Picard iteration (contractive once
dt * Lipschitz(f) < 1).  The Z-step runs first because f consumes Z_{i-1}.

Since the B-path is fixed, the B-increment factors are constants under
E_{i-1} and pass through the fits linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .condexp import (
    BasisSpec,
    FittedConditional,
    lsmc_fit,
    probe_affine_forward,
    probe_backward_driver,
    probe_driver,
    probe_terminal_polynomial,
    propagate_polynomial,
)
from .errors import CapabilityError, ConfigError, ConvergenceError
from .forward import ForwardPaths
from .paths import Partition, PathBundle
from .probdef import ProblemSpec

__all__ = [
    "PicardConfig",
    "SchemeSolution",
    "StepFits",
    "ExactBackend",
    "LsmcBackend",
    "make_backend",
    "backward_solve",
    "picard_solve",
    "tilde_z",
]


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-12
    max_iters: int = 100

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class ExactBackend:
    """Exact Gaussian-moment polynomial propagation (needs all structure flags)."""

    name: str = "exact"


@dataclass(frozen=True)
class LsmcBackend:
    """Least-squares Monte Carlo regression on the current state."""

    basis: BasisSpec = field(default_factory=BasisSpec)
    name: str = "lsmc"


def make_backend(name: str, basis: BasisSpec | None = None):
    if name == "exact":
        return ExactBackend()
    if name == "lsmc":
        return LsmcBackend(basis or BasisSpec())
    raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True, eq=False)
class StepFits:
    """Fitted conditionals used to step from t_i to t_{i-1}."""

    y_fit: FittedConditional
    z_fits: tuple[FittedConditional, ...]


@dataclass(frozen=True, eq=False)
class SchemeSolution:
    """Per-sample grid values of the scheme; fitted per-step handles retained.

    y has shape (samples, n+1); z has shape (samples, n+1, d) with z[:, n] = 0.
    fitted[j] and picard_iters[j] describe the step that produced time index j.
    """

    y: np.ndarray
    z: np.ndarray
    fitted: tuple[StepFits, ...]
    picard_iters: np.ndarray
    backend: str


def backward_solve(
    spec: ProblemSpec,
    partition: Partition,
    bundle: PathBundle,
    forward: ForwardPaths,
    backend,
    picard: PicardConfig | None = None,
) -> SchemeSolution:
    """Run the backward recursion over the whole grid."""
    picard = picard or PicardConfig()
    if partition.mesh * spec.lipschitz_c >= 1.0:
        raise ConfigError(
            f"mesh {partition.mesh:g} times Lipschitz constant "
            f"{spec.lipschitz_c:g} must be < 1 for the implicit step"
        )
    if bundle.dim_b != spec.dim_b:
        raise ValueError(
            f"bundle dim_b={bundle.dim_b} does not match problem dim_b={spec.dim_b}"
        )
    if isinstance(backend, ExactBackend):
        return _solve_exact(spec, partition, bundle, forward, picard)
    if isinstance(backend, LsmcBackend):
        return _solve_lsmc(spec, partition, bundle, forward, backend.basis, picard)
    raise TypeError(f"unknown backend object {backend!r}")


def _poly_fit_handle(coeffs: np.ndarray) -> FittedConditional:
    coeffs = np.asarray(coeffs, dtype=float)
    return FittedConditional(
        exponents=np.arange(coeffs.size)[:, None],
        coefficients=coeffs,
        kind="exact",
    )


def _coeff_gap(a: np.ndarray, b: np.ndarray) -> float:
    width = max(a.size, b.size)
    pa = np.zeros(width)
    pa[: a.size] = a
    pb = np.zeros(width)
    pb[: b.size] = b
    return float(np.max(np.abs(pa - pb)))


def _solve_exact(spec, partition, bundle, forward, picard) -> SchemeSolution:
    af = probe_affine_forward(spec)
    h_coeffs = probe_terminal_polynomial(spec)
    n = partition.n
    times = partition.times
    deltas = partition.deltas

    y_polys: list[np.ndarray] = [np.zeros(1)] * (n + 1)
    z_polys: list[np.ndarray] = [np.zeros(1)] * n
    fits: list[StepFits] = [None] * n  # type: ignore[list-item]
    iters = np.zeros(n, dtype=int)
    y_polys[n] = h_coeffs

    p = h_coeffs
    for i in range(n, 0, -1):
        dt = deltas[i - 1]
        db = bundle.dB[i - 1]
        gc = probe_backward_driver(spec, times[i])
        # U(x) = p(x) (1 + gy.dB) + (g0.dB) + (gx.dB) x, a polynomial because
        # the B-increment is a fixed constant at this point.
        u = p * (1.0 + float(gc.gy @ db))
        u = npoly.polyadd(u, np.array([float(gc.g0 @ db), float(gc.gx @ db)]))
        c_poly = propagate_polynomial(u, af.intercept, af.slope, af.sigma, dt)
        z_poly = (
            propagate_polynomial(u, af.intercept, af.slope, af.sigma, dt, weight=1)
            / dt
        )
        fc = probe_driver(spec, times[i - 1])
        base = npoly.polyadd(
            c_poly,
            dt * npoly.polyadd(np.array([fc.f0, fc.fx]), fc.fz * z_poly),
        )
        # Picard on the coefficient vector; the map is affine with factor dt*fy.
        prev = c_poly
        converged = False
        for it in range(1, picard.max_iters + 1):
            nxt = npoly.polyadd(base, (dt * fc.fy) * prev)
            gap = _coeff_gap(nxt, prev)
            prev = nxt
            iters[i - 1] = it
            if gap <= picard.tol * max(1.0, float(np.max(np.abs(nxt)))):
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"implicit step did not converge at step {i}", step_index=i
            )
        p = prev
        y_polys[i - 1] = p
        z_polys[i - 1] = z_poly
        fits[i - 1] = StepFits(_poly_fit_handle(c_poly), (_poly_fit_handle(z_poly),))

    x_grid = forward.values
    m = x_grid.shape[0]
    y = np.empty((m, n + 1))
    z = np.zeros((m, n + 1, spec.dim_x))
    y[:, n] = np.asarray(spec.terminal(x_grid[:, n, :]), dtype=float)
    for j in range(n):
        y[:, j] = npoly.polyval(x_grid[:, j, 0], y_polys[j])
        z[:, j, 0] = npoly.polyval(x_grid[:, j, 0], z_polys[j])
    return SchemeSolution(y, z, tuple(fits), iters, backend="exact")


def _picard_values(c_vals, x, z, t, driver_f, dt, cfg, step_index):
    y = c_vals.copy()
    for it in range(1, cfg.max_iters + 1):
        y_next = c_vals + dt * np.asarray(driver_f(t, x, y, z), dtype=float)
        gap = np.abs(y_next - y)
        y = y_next
        if np.all(gap <= cfg.tol * np.maximum(1.0, np.abs(y_next))):
            return y, it
    raise ConvergenceError(
        f"implicit step did not converge at step {step_index}",
        step_index=step_index,
    )


def _solve_lsmc(spec, partition, bundle, forward, basis, picard) -> SchemeSolution:
    x_grid = forward.values
    m, _, d = x_grid.shape
    n = partition.n
    times = partition.times
    deltas = partition.deltas

    y = np.empty((m, n + 1))
    z = np.zeros((m, n + 1, d))
    fits: list[StepFits] = [None] * n  # type: ignore[list-item]
    iters = np.zeros(n, dtype=int)
    y[:, n] = np.asarray(spec.terminal(x_grid[:, n, :]), dtype=float)

    for i in range(n, 0, -1):
        dt = deltas[i - 1]
        db = bundle.dB[i - 1]
        g_vals = np.asarray(
            spec.driver_g(times[i], x_grid[:, i, :], y[:, i]), dtype=float
        )
        u = y[:, i] + (g_vals * db[None, :]).sum(axis=1)
        feats = x_grid[:, i - 1, :]
        z_fits = []
        for k in range(d):
            fit_k = lsmc_fit(feats, u * bundle.dW[:, i - 1, k] / dt, basis)
            z[:, i - 1, k] = fit_k.evaluate(feats)
            z_fits.append(fit_k)
        y_fit = lsmc_fit(feats, u, basis)
        c_vals = y_fit.evaluate(feats)
        y[:, i - 1], iters[i - 1] = _picard_values(
            c_vals, feats, z[:, i - 1, :], times[i - 1], spec.driver_f, dt, picard, i
        )
        fits[i - 1] = StepFits(y_fit, tuple(z_fits))
    return SchemeSolution(y, z, tuple(fits), iters, backend="lsmc")


def picard_solve(
    c: float,
    x: np.ndarray,
    z: np.ndarray,
    t: float,
    driver_f,
    dt: float,
    cfg: PicardConfig | None = None,
) -> float:
    """Solve y = c + dt * f(t, x, y, z) by fixed-point iteration from y = c."""
    cfg = cfg or PicardConfig()
    x_arr = np.asarray(x, dtype=float).reshape(1, -1)
    z_arr = np.asarray(z, dtype=float).reshape(1, -1)
    vals, _ = _picard_values(
        np.array([float(c)]), x_arr, z_arr, t, driver_f, dt, cfg, step_index=0
    )
    return float(vals[0])


def tilde_z(
    z_fine: np.ndarray,
    partition: Partition,
    features: np.ndarray,
    basis: BasisSpec | None = None,
) -> np.ndarray:
    """Best step-constant approximation of Z given the left-endpoint state.

    ``z_fine`` holds Z at the left endpoints of a sub-grid refining each
    coarse step by an integer factor: shape (samples, kappa * n, d).  Each
    coarse step's time average (left-point quadrature of the inner integral,
    divided by the step) is projected onto functions of the left-endpoint
    state in ``features`` (samples, n, d).  Targets that are constant across
    samples are their own conditional expectation and bypass the regression.
    """
    z_fine = np.asarray(z_fine, dtype=float)
    if z_fine.ndim != 3:
        raise ValueError("z_fine must have shape (samples, sub-steps, d)")
    basis = basis or BasisSpec()
    n = partition.n
    m, n_fine, d = z_fine.shape
    if n_fine % n != 0 or n_fine < n:
        raise ValueError(
            f"sub-grid with {n_fine} steps does not refine {n} steps by an integer factor"
        )
    kappa = n_fine // n
    features = np.asarray(features, dtype=float)
    if features.shape[:2] != (m, n):
        raise ValueError("features must have shape (samples, n, d)")
    out = np.empty((m, n, d))
    for i in range(n):
        target = z_fine[:, i * kappa : (i + 1) * kappa, :].mean(axis=1)
        for k in range(d):
            tk = target[:, k]
            if np.ptp(tk) <= 1e-12 * max(1.0, float(np.max(np.abs(tk)))):
                out[:, i, k] = tk
            else:
                fit = lsmc_fit(features[:, i, :], tk, basis)
                out[:, i, k] = fit.evaluate(features[:, i, :])
    return out
