"""Time partitions and reproducible generation of the two Brownian drivers.

The forward driver W and the backward driver B are sampled from disjoint
Philox (counter-based) streams, so regeneration with the same key is
bit-identical regardless of how the surrounding computation is threaded.
A bundle holds many W-samples but a single B-path: the backward recursion
conditions on the whole B-path, so averaging over B happens by replicating
bundles over ``b_index``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Partition",
    "PathBundle",
    "make_partition",
    "refine_partition",
    "sample_bundle",
    "aggregate_bundle",
    "w_values",
    "b_values",
    "brownian_tails",
    "brownian_tail",
]

# Sub-stream tags: W is keyed by (seed, W_STREAM) only, so every b_index sees
# the same W-samples; B is keyed by (seed, B_STREAM, b_index).
_W_STREAM = 0
_B_STREAM = 1


@dataclass(frozen=True, eq=False)
class Partition:
    """Time grid 0 = t_0 < t_1 < ... < t_n = T."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("partition needs at least two time points")
        if times[0] != 0.0:
            raise ValueError("partition must start at t = 0")
        if not np.all(np.diff(times) > 0.0):
            raise ValueError("partition times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def mesh(self) -> float:
        return float(np.max(self.deltas))


def make_partition(horizon: float, n: int) -> Partition:
    """Uniform partition of [0, horizon] with n steps."""
    if n < 1:
        raise ValueError(f"need at least one step, got n={n}")
    if horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    return Partition(np.linspace(0.0, float(horizon), n + 1))


def refine_partition(partition: Partition, kappa: int) -> Partition:
    """Split every step of ``partition`` into ``kappa`` equal sub-steps.

    Coarse grid points appear exactly (bitwise) in the refined grid, which
    keeps aggregation and restriction consistent in floating point.
    """
    if kappa < 1:
        raise ValueError(f"refinement factor must be >= 1, got {kappa}")
    left = partition.times[:-1]
    offsets = np.arange(kappa) / kappa
    fine = (left[:, None] + offsets[None, :] * partition.deltas[:, None]).ravel()
    return Partition(np.append(fine, partition.times[-1]))


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Brownian increments on a partition.

    dW has shape (samples, steps, dim_w); dB has shape (steps, dim_b) and is
    one path shared by all W-samples in the bundle.
    """

    partition: Partition
    dW: np.ndarray
    dB: np.ndarray
    seed: int
    b_index: int

    @property
    def n_samples(self) -> int:
        return self.dW.shape[0]

    @property
    def dim_w(self) -> int:
        return self.dW.shape[2]

    @property
    def dim_b(self) -> int:
        return self.dB.shape[1]


def _generator(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def sample_bundle(
    partition: Partition,
    n_samples: int,
    dim_w: int,
    dim_b: int,
    seed: int,
    b_index: int = 0,
) -> PathBundle:
    """Draw a bundle of W-increments and one shared B-path.

    Each increment is centered Gaussian with variance equal to the step it
    spans.  The W-stream depends on ``seed`` only; the B-stream on
    ``(seed, b_index)``, so bundles with different ``b_index`` share dW.
    """
    if n_samples < 1:
        raise ValueError(f"need at least one sample, got {n_samples}")
    if dim_w < 1 or dim_b < 1:
        raise ValueError("dimensions must be positive")
    scale = np.sqrt(partition.deltas)
    dw = _generator(seed, _W_STREAM).standard_normal(
        (n_samples, partition.n, dim_w)
    ) * scale[None, :, None]
    db = _generator(seed, _B_STREAM, b_index).standard_normal(
        (partition.n, dim_b)
    ) * scale[:, None]
    return PathBundle(partition, dw, db, seed=seed, b_index=b_index)


def aggregate_bundle(bundle: PathBundle, kappa: int) -> PathBundle:
    """Sum groups of ``kappa`` consecutive increments onto the coarser grid.

    This is how a coarse bundle is coupled to a fine one: sample at the fine
    resolution, then aggregate.  Summation runs over a fixed axis with a fixed
    grouping, so the result is reproducible.
    """
    n = bundle.partition.n
    if kappa < 1:
        raise ValueError(f"aggregation factor must be >= 1, got {kappa}")
    if n % kappa != 0:
        raise ValueError(f"bundle with {n} steps cannot be aggregated by {kappa}")
    m = n // kappa
    coarse = Partition(bundle.partition.times[::kappa])
    dw = bundle.dW.reshape(bundle.n_samples, m, kappa, bundle.dim_w).sum(axis=2)
    db = bundle.dB.reshape(m, kappa, bundle.dim_b).sum(axis=1)
    return PathBundle(coarse, dw, db, seed=bundle.seed, b_index=bundle.b_index)


def w_values(bundle: PathBundle) -> np.ndarray:
    """Path values W_{t_i}, shape (samples, n+1, dim_w), with W_0 = 0."""
    m, n, d = bundle.dW.shape
    out = np.zeros((m, n + 1, d))
    np.cumsum(bundle.dW, axis=1, out=out[:, 1:, :])
    return out


def b_values(bundle: PathBundle) -> np.ndarray:
    """Path values B_{t_i}, shape (n+1, dim_b), with B_0 = 0."""
    n, l = bundle.dB.shape
    out = np.zeros((n + 1, l))
    np.cumsum(bundle.dB, axis=0, out=out[1:, :])
    return out


def brownian_tails(bundle: PathBundle) -> np.ndarray:
    """All tails B_T - B_{t_i}, shape (n+1, dim_b); the last row is zero.

    Accumulated right to left, so tails[i] - tails[i+1] reproduces the step
    increment exactly in floating point.
    """
    n, l = bundle.dB.shape
    out = np.zeros((n + 1, l))
    out[:-1] = np.cumsum(bundle.dB[::-1], axis=0)[::-1]
    return out


def brownian_tail(bundle: PathBundle, i: int) -> np.ndarray:
    """Tail sum of B-increments strictly after grid index ``i``."""
    n = bundle.partition.n
    if not 0 <= i <= n:
        raise IndexError(f"grid index {i} outside [0, {n}]")
    return brownian_tails(bundle)[i]
