"""Conditional-expectation backends for the backward recursion.

Two ways to realize E[ . | X_{t_{i-1}} = x] once the B-path is fixed:

* least-squares Monte Carlo regression on a polynomial basis of the current
  state (any dimension), and
* an exact propagator for polynomial functionals under the one-dimensional
  Euler transition X' = (1 + b1 dt) x + b0 dt + sigma dW, using central
  Gaussian moments E[dW^k] = (k-1)!! dt^(k/2).

All sample reductions run over fixed chunks with numpy's pairwise summation,
never through threaded BLAS, so fitted coefficients are bit-reproducible
regardless of thread count.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import CapabilityError, ConditioningError
from .probdef import ProblemSpec

__all__ = [
    "DEGREE_GUARD",
    "BasisSpec",
    "FittedConditional",
    "lsmc_fit",
    "condexp_weighted",
    "gaussian_central_moments",
    "gaussian_moment_propagate",
    "propagate_polynomial",
    "AffineForward",
    "DriverCoefficients",
    "BackwardDriverCoefficients",
    "probe_affine_forward",
    "probe_driver",
    "probe_backward_driver",
    "probe_terminal_polynomial",
]

DEGREE_GUARD = 10

_CHUNK = 16384


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial regression basis: all monomials of total degree <= degree."""

    degree: int = 3
    ridge: float = 1e-10
    family: str = "polynomial"

    def __post_init__(self):
        if self.family != "polynomial":
            raise ValueError(f"unsupported basis family {self.family!r}")
        if not 0 <= self.degree <= DEGREE_GUARD:
            raise ValueError(f"degree must be in [0, {DEGREE_GUARD}]")
        if self.ridge < 0.0:
            raise ValueError("ridge must be non-negative")


def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """Exponent rows for all monomials with total degree <= degree (graded order)."""
    rows = [
        exps
        for total in range(degree + 1)
        for exps in itertools.product(range(total + 1), repeat=dim)
        if sum(exps) == total
    ]
    return np.array(rows, dtype=int).reshape(len(rows), dim)


def design_matrix(x: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.prod(x[:, None, :] ** exponents[None, :, :], axis=2)


@dataclass(frozen=True, eq=False)
class FittedConditional:
    """A fitted x -> E[target | x] map: coefficients over monomials."""

    exponents: np.ndarray
    coefficients: np.ndarray
    kind: str  # "lsmc" or "exact"

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        design = design_matrix(x, self.exponents)
        return (design * self.coefficients[None, :]).sum(axis=1)

    __call__ = evaluate

    def as_poly1d(self) -> np.ndarray:
        """Dense 1-d coefficient vector (ascending degree); requires dim 1."""
        if self.exponents.shape[1] != 1:
            raise ValueError("as_poly1d requires one-dimensional features")
        out = np.zeros(int(self.exponents.max()) + 1)
        out[self.exponents[:, 0]] = self.coefficients
        return out


def _chunked_gram(design: np.ndarray) -> np.ndarray:
    m, p = design.shape
    parts = [
        (blk[:, :, None] * blk[:, None, :]).sum(axis=0)
        for blk in np.array_split(design, max(1, -(-m // _CHUNK)), axis=0)
    ]
    return np.sum(np.stack(parts), axis=0)


def _chunked_matvec(design: np.ndarray, targets: np.ndarray) -> np.ndarray:
    m = design.shape[0]
    splits = np.array_split(np.arange(m), max(1, -(-m // _CHUNK)))
    parts = [
        (design[idx] * targets[idx, None]).sum(axis=0) for idx in splits
    ]
    return np.sum(np.stack(parts), axis=0)


def lsmc_fit(features: np.ndarray, targets: np.ndarray, basis: BasisSpec) -> FittedConditional:
    """Ridge-regularized least-squares fit of targets on the monomial basis.

    Requires more samples than basis functions.  Raises ConditioningError,
    carrying the smallest-eigenvalue estimate, when the normal equations
    cannot be solved to 1e-8 relative residual.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    targets = np.asarray(targets, dtype=float)
    m, dim = features.shape
    exponents = monomial_exponents(dim, basis.degree)
    p = exponents.shape[0]
    if m <= p:
        raise ValueError(f"need more samples than basis functions ({m} <= {p})")
    design = design_matrix(features, exponents)
    gram = _chunked_gram(design)
    gram[np.diag_indices_from(gram)] += basis.ridge
    rhs = _chunked_matvec(design, targets)
    try:
        coeffs = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        eig = float(np.linalg.eigvalsh(gram)[0])
        raise ConditioningError(
            f"normal equations singular (smallest eigenvalue {eig:.3e})",
            smallest_eigenvalue=eig,
        ) from None
    resid = np.linalg.norm(gram @ coeffs - rhs)
    denom = np.linalg.norm(rhs)
    if resid > 1e-8 * (denom if denom > 0.0 else 1.0):
        eig = float(np.linalg.eigvalsh(gram)[0])
        raise ConditioningError(
            f"normal equations residual {resid:.3e} exceeds tolerance "
            f"(smallest eigenvalue {eig:.3e})",
            smallest_eigenvalue=eig,
        )
    return FittedConditional(exponents, coeffs, kind="lsmc")


def condexp_weighted(
    features: np.ndarray,
    targets: np.ndarray,
    scale: float,
    basis: BasisSpec,
) -> FittedConditional:
    """Fit of scale * targets.

    ``scale`` is a scalar known at fit time (for the scheme: a function of the
    fixed B-path, e.g. a B-increment), so it passes through the conditional
    expectation linearly: the result equals scale times the fit of targets.
    """
    return lsmc_fit(features, scale * np.asarray(targets, dtype=float), basis)


def gaussian_central_moments(variance: float, order: int) -> np.ndarray:
    """E[G^k] for G ~ N(0, variance), k = 0..order (double-factorial recurrence)."""
    if order < 0:
        raise ValueError("order must be non-negative")
    out = np.zeros(order + 1)
    out[0] = 1.0
    for k in range(2, order + 1, 2):
        out[k] = (k - 1) * variance * out[k - 2]
    return out


def _poly_affine_compose(coeffs: np.ndarray, shift: float, scale: float) -> np.ndarray:
    """q(x) = p(shift + scale x), Horner in coefficient space."""
    out = np.zeros(1)
    lin = np.array([shift, scale])
    for a in np.asarray(coeffs, dtype=float)[::-1]:
        out = np.convolve(out, lin)
        out[0] += a
    return out


def propagate_polynomial(
    coeffs: np.ndarray,
    drift_intercept: float,
    drift_slope: float,
    sigma: float,
    dt: float,
    weight: int = 0,
) -> np.ndarray:
    """E[p(A x + c + sigma W) W^weight] as a polynomial in x.

    A = 1 + drift_slope dt and c = drift_intercept dt form the Euler
    transition; W ~ N(0, dt).  Expanding p around the deterministic part,
    p(v + sigma W) = sum_j p^(j)(v) (sigma W)^j / j!, and integrating W gives
    one central moment per term.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    deg = coeffs.size - 1
    if deg > 2 * DEGREE_GUARD:
        raise ValueError(f"polynomial degree {deg} beyond guard")
    mom = gaussian_central_moments(dt, deg + weight)
    shift = drift_intercept * dt
    scale = 1.0 + drift_slope * dt
    out = np.zeros(1)
    deriv = coeffs
    factorial = 1.0
    for j in range(deg + 1):
        if j > 0:
            deriv = npoly.polyder(deriv)
            factorial *= j
        if deriv.size == 0:
            break
        m = mom[j + weight]
        if m == 0.0:
            continue
        term = (sigma**j / factorial * m) * _poly_affine_compose(deriv, shift, scale)
        out = npoly.polyadd(out, term)
    return out


def gaussian_moment_propagate(
    coeffs: np.ndarray,
    drift_intercept: float,
    drift_slope: float,
    sigma: float,
    dt: float,
) -> np.ndarray:
    """Exact one-step conditional expectation of a polynomial in the state."""
    return propagate_polynomial(coeffs, drift_intercept, drift_slope, sigma, dt, weight=0)


# ---------------------------------------------------------------------------
# Structure probing for the exact backend.  The coefficient callables are
# black boxes; when the structure flags promise affine/constant/polynomial
# shape, the coefficients can be read off exactly from a handful of
# evaluations.  Every probe cross-checks one extra point and raises
# CapabilityError on disagreement.


@dataclass(frozen=True)
class AffineForward:
    intercept: float  # b(x) = intercept + slope * x
    slope: float
    sigma: float


@dataclass(frozen=True)
class DriverCoefficients:
    f0: float  # f(t, x, y, z) = f0 + fx x + fy y + fz z at the probed time
    fx: float
    fy: float
    fz: float


@dataclass(frozen=True)
class BackwardDriverCoefficients:
    g0: np.ndarray  # g(t, x, y) = g0 + gx x + gy y, each of length dim_b
    gx: np.ndarray
    gy: np.ndarray


def _require_dim1(spec: ProblemSpec) -> None:
    if spec.dim_x != 1:
        raise CapabilityError("exact backend implemented for dim_x = 1 only")


def _close(a, b, scale=1.0) -> bool:
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) <= 1e-8 * max(1.0, scale)


def probe_affine_forward(spec: ProblemSpec) -> AffineForward:
    _require_dim1(spec)
    if not (spec.flags.drift_affine and spec.flags.diffusion_constant):
        raise CapabilityError(
            f"problem {spec.name!r} lacks drift_affine/diffusion_constant flags"
        )
    xs = np.array([[0.0], [1.0], [-2.0]])
    b = np.broadcast_to(np.asarray(spec.drift(xs), float), (3, 1))[:, 0]
    intercept, slope = b[0], b[1] - b[0]
    if not _close(b[2], intercept - 2.0 * slope, scale=np.max(np.abs(b))):
        raise CapabilityError("drift is not affine despite drift_affine flag")
    sig = np.broadcast_to(np.asarray(spec.diffusion(xs), float), (3, 1, 1))
    if not _close(sig[1:], sig[0], scale=float(np.max(np.abs(sig)))):
        raise CapabilityError("diffusion is not constant despite flag")
    return AffineForward(float(intercept), float(slope), float(sig[0, 0, 0]))


def probe_driver(spec: ProblemSpec, t: float) -> DriverCoefficients:
    _require_dim1(spec)
    if not spec.flags.f_affine:
        raise CapabilityError(f"problem {spec.name!r} lacks f_affine flag")
    zeros = np.zeros((1, 1))
    zero1 = np.zeros(1)

    def f(x, y, z):
        return float(np.asarray(spec.driver_f(t, x, y, z), float)[0])

    f0 = f(zeros, zero1, zeros)
    fx = f(np.ones((1, 1)), zero1, zeros) - f0
    fy = f(zeros, np.ones(1), zeros) - f0
    fz = f(zeros, zero1, np.ones((1, 1))) - f0
    check = f(np.full((1, 1), 0.7), np.full(1, -1.3), np.full((1, 1), 0.4))
    if not _close(check, f0 + 0.7 * fx - 1.3 * fy + 0.4 * fz, scale=abs(check)):
        raise CapabilityError("driver f is not affine despite f_affine flag")
    return DriverCoefficients(f0, fx, fy, fz)


def probe_backward_driver(spec: ProblemSpec, t: float) -> BackwardDriverCoefficients:
    _require_dim1(spec)
    if not spec.flags.g_affine:
        raise CapabilityError(f"problem {spec.name!r} lacks g_affine flag")
    zeros = np.zeros((1, 1))
    zero1 = np.zeros(1)

    def g(x, y):
        return np.asarray(spec.driver_g(t, x, y), float)[0]

    g0 = g(zeros, zero1)
    gx = g(np.ones((1, 1)), zero1) - g0
    gy = g(zeros, np.ones(1)) - g0
    check = g(np.full((1, 1), -0.6), np.full(1, 0.9))
    if not _close(check, g0 - 0.6 * gx + 0.9 * gy, scale=float(np.max(np.abs(check)))):
        raise CapabilityError("driver g is not affine despite g_affine flag")
    return BackwardDriverCoefficients(g0, gx, gy)


def probe_terminal_polynomial(spec: ProblemSpec) -> np.ndarray:
    """Interpolate h on small integer nodes; exact for polynomial h."""
    _require_dim1(spec)
    if not spec.flags.h_polynomial or spec.h_degree is None:
        raise CapabilityError(
            f"problem {spec.name!r} lacks h_polynomial flag or h_degree"
        )
    if spec.h_degree > DEGREE_GUARD:
        raise CapabilityError(f"terminal degree {spec.h_degree} beyond guard")
    k = spec.h_degree
    nodes = np.zeros(k + 1)
    for j in range(1, k + 1):
        nodes[j] = (j + 1) // 2 * (-1.0 if j % 2 == 0 else 1.0)
    vand = nodes[:, None] ** np.arange(k + 1)[None, :]
    vals = np.asarray(spec.terminal(nodes[:, None]), float)
    coeffs = np.linalg.solve(vand, vals)
    check_x = np.array([[1.5]])
    expect = float(npoly.polyval(1.5, coeffs))
    got = float(np.asarray(spec.terminal(check_x), float)[0])
    if not _close(got, expect, scale=max(abs(got), 1.0)):
        raise CapabilityError("terminal is not the declared-degree polynomial")
    return coeffs
