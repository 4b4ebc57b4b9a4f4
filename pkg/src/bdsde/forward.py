"""Forward diffusion simulators: Euler scheme, interpolation, exact transitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, NumericError
from .paths import Partition, PathBundle, w_values
from .probdef import ProblemSpec

__all__ = ["ForwardPaths", "euler_paths", "euler_interpolate", "exact_paths"]


@dataclass(frozen=True, eq=False)
class ForwardPaths:
    """Grid values of the forward process, shape (samples, n+1, d)."""

    values: np.ndarray
    scheme: str


def _drift_values(spec: ProblemSpec, x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(spec.drift(x), dtype=float), x.shape)


def _diffusion_values(spec: ProblemSpec, x: np.ndarray) -> np.ndarray:
    m, d = x.shape
    sig = np.asarray(spec.diffusion(x), dtype=float)
    return np.broadcast_to(sig, (m, d, d))


def _check_partition(partition: Partition, bundle: PathBundle) -> None:
    if bundle.partition.n != partition.n or not np.array_equal(
        bundle.partition.times, partition.times
    ):
        raise ValueError("bundle was sampled on a different partition")


def euler_paths(spec: ProblemSpec, partition: Partition, bundle: PathBundle) -> ForwardPaths:
    """Euler scheme on the grid: X_i = X_{i-1} + b(X_{i-1}) dt + sigma(X_{i-1}) dW_i."""
    _check_partition(partition, bundle)
    if bundle.dim_w != spec.dim_x:
        raise ValueError(
            f"bundle dim_w={bundle.dim_w} does not match problem dim_x={spec.dim_x}"
        )
    m, n, d = bundle.dW.shape
    deltas = partition.deltas
    out = np.empty((m, n + 1, d))
    out[:, 0, :] = spec.x0
    for i in range(n):
        x = out[:, i, :]
        sig = _diffusion_values(spec, x)
        step = (
            x
            + _drift_values(spec, x) * deltas[i]
            + (sig * bundle.dW[:, i, None, :]).sum(axis=2)
        )
        if not np.all(np.isfinite(step)):
            bad = np.argwhere(~np.isfinite(step))[0]
            raise NumericError(
                f"non-finite forward state at sample {bad[0]}, step {i + 1}"
            )
        out[:, i + 1, :] = step
    return ForwardPaths(out, scheme="euler")


def euler_interpolate(
    spec: ProblemSpec,
    partition: Partition,
    bundle: PathBundle,
    sample: int,
    t: float,
    w_displacement: np.ndarray,
) -> np.ndarray:
    """Continuous Euler extension at time t for one sample.

    ``w_displacement`` is W_t - W_{t_left} for the step containing t; all
    randomness stays with the caller.
    """
    times = partition.times
    if t < 0.0 or t > partition.horizon:
        raise ValueError(f"time {t} outside [0, {partition.horizon}]")
    if t == 0.0:
        return spec.x0.copy()
    i = int(np.searchsorted(times, t, side="left"))
    x = spec.x0[None, :].copy()
    for j in range(i - 1):
        sig = _diffusion_values(spec, x)
        x = (
            x
            + _drift_values(spec, x) * partition.deltas[j]
            + (sig * bundle.dW[sample, j][None, None, :]).sum(axis=2)
        )
    disp = np.asarray(w_displacement, dtype=float).reshape(1, spec.dim_x)
    sig = _diffusion_values(spec, x)
    out = (
        x
        + _drift_values(spec, x) * (t - times[i - 1])
        + (sig * disp[:, None, :]).sum(axis=2)
    )
    return out[0]


def exact_paths(spec: ProblemSpec, partition: Partition, bundle: PathBundle) -> ForwardPaths:
    """Sample the exact grid transition on the same increments as the Euler scheme.

    Supports constant-coefficient problems (Brownian motion with drift) and
    geometric Brownian motion; anything else raises CapabilityError.
    """
    _check_partition(partition, bundle)
    w = w_values(bundle)
    times = partition.times
    if spec.exact_sim == "bm_drift":
        x_probe = spec.x0[None, :]
        b0 = _drift_values(spec, x_probe)[0]
        sig0 = _diffusion_values(spec, x_probe)[0]
        vals = (
            spec.x0[None, None, :]
            + times[None, :, None] * b0[None, None, :]
            + (sig0[None, None, :, :] * w[:, :, None, :]).sum(axis=3)
        )
        return ForwardPaths(vals, scheme="exact")
    if spec.exact_sim == "gbm":
        if spec.dim_x != 1:
            raise CapabilityError("exact GBM transition implemented for d = 1 only")
        probe = np.ones((1, 1))
        mu = float(_drift_values(spec, probe)[0, 0])
        nu = float(_diffusion_values(spec, probe)[0, 0, 0])
        vals = spec.x0[0] * np.exp(
            (mu - 0.5 * nu * nu) * times[None, :, None] + nu * w
        )
        return ForwardPaths(vals, scheme="exact")
    raise CapabilityError(
        f"problem {spec.name!r} has no exact forward simulator (exact_sim={spec.exact_sim!r})"
    )
