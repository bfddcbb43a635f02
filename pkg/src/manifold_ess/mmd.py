"""Squared MMD between empirical measures and the finite-reference risk.

All discrepancies are V-statistics: the diagonal self-terms are kept, so
that MMD^2 is the squared RKHS norm of the difference of the two empirical
mean embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Chain, ValidationError, as_array
from .kernels import KernelSpec, cross_kernel, pair_kernel

BLOCK = 2048


def kernel_sum(spec: KernelSpec, a: np.ndarray, b: np.ndarray, block: int = BLOCK) -> float:
    """sum_{s,t} k(a_s, b_t), evaluated in row blocks with a fixed reduction order."""
    total = 0.0
    for lo in range(0, a.shape[0], block):
        total += float(cross_kernel(spec, a[lo : lo + block], b).sum())
    return total


def _order_key(x: np.ndarray):
    return (x.shape[0], x.tobytes())


def _check_pair(a: Chain, b: Chain, spec: KernelSpec) -> None:
    if a.manifold != b.manifold or a.dims != b.dims:
        raise ValidationError(f"samples live on different spaces: {a.manifold}{a.dims} vs {b.manifold}{b.dims}")
    if spec.manifold != a.manifold:
        raise ValidationError(f"kernel {spec.family} does not apply to {a.manifold} samples")


@dataclass(frozen=True)
class MmdResult:
    mmd2: float
    n: int
    m: int
    kernel: KernelSpec

    def to_dict(self) -> dict:
        return {"mmd2": self.mmd2, "n": self.n, "m": self.m, "kernel": self.kernel.to_dict()}


def mmd2_empirical(a: Chain, b: Chain, spec: KernelSpec) -> MmdResult:
    """V-statistic MMD^2 between the empirical measures of two samples.

    The cross term is always computed with the two samples in a canonical
    order, so swapping the arguments gives a bit-identical result.
    """
    _check_pair(a, b, spec)
    x, y = a.points, b.points
    n, m = x.shape[0], y.shape[0]
    if _order_key(x) > _order_key(y):
        cross = kernel_sum(spec, y, x)
    else:
        cross = kernel_sum(spec, x, y)
    self_terms = kernel_sum(spec, x, x) / (n * n) + kernel_sum(spec, y, y) / (m * m)
    return MmdResult(self_terms - 2.0 * cross / (n * m), n, m, spec)


class ReferenceEmbedding:
    """Cached kernel statistics of an iid reference sample.

    Holds the reference's self-sum and its one-sample kernel variance
    gamma0_ref = mean(diag K) - mean(K), the diagonal mean of the centered
    reference Gram with divisor m.
    """

    def __init__(self, reference: Chain, spec: KernelSpec):
        if spec.manifold != reference.manifold:
            raise ValidationError(f"kernel {spec.family} does not apply to {reference.manifold} samples")
        self.reference = reference
        self.spec = spec
        pts = reference.points
        self.m = pts.shape[0]
        self.self_sum = kernel_sum(spec, pts, pts)
        diag = pair_kernel(spec, pts, pts)
        self.gamma0 = float(diag.mean() - self.self_sum / (self.m * self.m))

    def mmd2(self, chain: Chain) -> float:
        _check_pair(chain, self.reference, self.spec)
        x = chain.points
        n = x.shape[0]
        cross = kernel_sum(self.spec, x, self.reference.points)
        return kernel_sum(self.spec, x, x) / (n * n) + self.self_sum / (self.m * self.m) - 2.0 * cross / (n * self.m)

    def corrected_risk(self, chain: Chain) -> float:
        """n (MMD^2(chain, reference) - gamma0_ref / m)."""
        return len(chain) * (self.mmd2(chain) - self.gamma0 / self.m)


def corrected_risk_statistic(chain: Chain, reference: Chain | ReferenceEmbedding, spec: KernelSpec | None = None) -> float:
    """Finite-reference corrected risk n {MMD^2(chain, ref) - gamma0_ref / m}.

    Compare with the chain's long-run variance estimate sigma^2; the sign is
    kept, negative values mean reference noise dominates.
    """
    if isinstance(reference, ReferenceEmbedding):
        emb = reference
    else:
        if spec is None:
            raise ValidationError("a kernel spec is required with a raw reference chain")
        if len(reference) <= 1:
            raise ValidationError("reference sample needs m > 1")
        emb = ReferenceEmbedding(reference, spec)
    return emb.corrected_risk(chain)


@dataclass(frozen=True)
class RiskEstimate:
    mean_mmd2: float
    se: float
    values: np.ndarray


def iid_risk_estimate(
    spec: KernelSpec,
    sampler: Callable[[int, np.random.Generator], np.ndarray],
    n: int,
    reps: int,
    reference: Chain | ReferenceEmbedding,
    seeds: Sequence[int] | None = None,
    rng: np.random.Generator | None = None,
) -> RiskEstimate:
    """Monte Carlo mean and standard error of the corrected iid MMD^2 risk.

    Each replication draws ``n`` iid points with ``sampler(n, rng)`` and
    records MMD^2 to the reference minus gamma0_ref / m, whose expectation is
    gamma_0 / n. Replication r uses ``default_rng(seeds[r])`` when ``seeds``
    is given, otherwise consecutive draws from ``rng``.
    """
    if reps < 2:
        raise ValidationError("iid_risk_estimate needs reps >= 2")
    emb = reference if isinstance(reference, ReferenceEmbedding) else ReferenceEmbedding(reference, spec)
    if seeds is not None and len(seeds) != reps:
        raise ValidationError(f"got {len(seeds)} seeds for {reps} replications")
    if seeds is None and rng is None:
        raise ValidationError("pass either seeds or rng")
    vals = np.empty(reps)
    for r in range(reps):
        gen = np.random.default_rng(seeds[r]) if seeds is not None else rng
        sample = Chain(emb.reference.manifold, sampler(n, gen))
        vals[r] = emb.mmd2(sample) - emb.gamma0 / emb.m
    return RiskEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(reps)), vals)


def nearest_mode_frequencies(points, modes) -> np.ndarray:
    """Fraction of points whose nearest mode (largest mu_j^T x) is j; ties go to the lowest j."""
    x = points.points if isinstance(points, Chain) else np.asarray(points, dtype=float)
    mu = np.stack([as_array(m) for m in modes])
    if mu.shape[0] == 0:
        raise ValidationError("need at least one mode")
    labels = np.argmax(x @ mu.T, axis=1)  # argmax returns the first maximum
    return np.bincount(labels, minlength=mu.shape[0]) / x.shape[0]


def mode_tv_error(chain, modes, reference_freqs) -> float:
    """Total variation (1/2) sum_j |freq_j - ref_j| between nearest-mode frequencies."""
    ref = np.asarray(reference_freqs, dtype=float)
    if abs(ref.sum() - 1.0) > 1e-9:
        raise ValidationError(f"reference frequencies sum to {ref.sum():.12g}, not 1")
    freqs = nearest_mode_frequencies(chain, modes)
    if freqs.shape != ref.shape:
        raise ValidationError(f"{freqs.size} modes but {ref.size} reference frequencies")
    return float(0.5 * np.abs(freqs - ref).sum())
