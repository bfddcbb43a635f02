"""Seeded von Mises-Fisher sampling and Metropolis-Hastings chains on S^2.

Random streams
--------------
Every chain draws from ``numpy.random.Generator(PCG64)`` seeded by
``SeedSequence(seed, spawn_key=stream)``. Replication ``r`` of an experiment
uses its own ``stream`` tuple, so replications are reproducible
independently of each other and of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .geometry import Chain, UnitVector, ValidationError, as_array

LOG_4PI = math.log(4.0 * math.pi)
# |mu_xy|^2 below this counts as mu == -e3 exactly
ANTIPODE_TOL = 1e-30


def stream_rng(seed: int, stream: Sequence[int] = ()) -> np.random.Generator:
    """PCG64 generator for ``(seed, stream)``; distinct streams never overlap."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream)))


@dataclass(frozen=True)
class VmfParams:
    """von Mises-Fisher law with mean direction ``mean`` and concentration ``kappa``."""

    mean: UnitVector
    kappa: float

    def __post_init__(self):
        if not isinstance(self.mean, UnitVector):
            object.__setattr__(self, "mean", UnitVector(self.mean))
        if not self.kappa >= 0:
            raise ValidationError(f"vMF concentration must be >= 0, got {self.kappa}")


def log_vmf_normalizer(kappa: float) -> float:
    """log c(kappa) for the vMF density on S^2, c = kappa / (4 pi sinh kappa)."""
    if kappa == 0:
        return -LOG_4PI
    log_sinh = kappa + math.log(-math.expm1(-2.0 * kappa)) - math.log(2.0)
    return math.log(kappa) - LOG_4PI - log_sinh


@dataclass(frozen=True)
class MixtureTarget:
    """Finite mixture sum_j w_j vMF(mu_j, kappa_j) on S^2."""

    components: tuple
    weights: tuple

    def __post_init__(self):
        comps = tuple(c if isinstance(c, VmfParams) else VmfParams(*c) for c in self.components)
        w = np.asarray(self.weights, dtype=float)
        if len(comps) == 0 or w.shape != (len(comps),):
            raise ValidationError(f"need one weight per component, got {w.size} for {len(comps)}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"mixture weights must be a probability vector, got {w.tolist()}")
        dims = {c.mean.dim for c in comps}
        if len(dims) != 1:
            raise ValidationError(f"mixture components have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", tuple(float(v) for v in w))

    @classmethod
    def single(cls, params: VmfParams) -> "MixtureTarget":
        return cls((params,), (1.0,))

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean.coords for c in self.components])

    @property
    def kappas(self) -> np.ndarray:
        return np.array([c.kappa for c in self.components])

    def _offsets(self) -> list[float]:
        return [math.log(w) + log_vmf_normalizer(c.kappa) if w > 0 else -math.inf for w, c in zip(self.weights, self.components)]


def log_density_mixture(target: MixtureTarget, x) -> np.ndarray | float:
    """log sum_j w_j c(kappa_j) exp(kappa_j mu_j^T x), with max-subtraction.

    Accepts one point or a stack of rows.
    """
    xa = as_array(x)
    rows = xa[None] if xa.ndim == 1 else xa
    a = np.asarray(target._offsets())[None, :] + target.kappas[None, :] * (rows @ target.means.T)
    top = a.max(axis=1)
    out = top + np.log(np.exp(a - top[:, None]).sum(axis=1))
    return float(out[0]) if xa.ndim == 1 else out


class _ScalarLogDensity:
    """Pure-Python log density for the sequential MH loop."""

    def __init__(self, target: MixtureTarget):
        self.terms = [
            (off, c.kappa, *map(float, c.mean.coords)) for off, c in zip(target._offsets(), target.components)
        ]

    def __call__(self, y0: float, y1: float, y2: float) -> float:
        vals = [off + k * (m0 * y0 + m1 * y1 + m2 * y2) for off, k, m0, m1, m2 in self.terms]
        if len(vals) == 1:
            return vals[0]
        top = max(vals)
        return top + math.log(sum(math.exp(v - top) for v in vals))


# --------------------------------------------------------------------------
# vMF sampling on S^2
# --------------------------------------------------------------------------


def vmf_cosines(kappa, u) -> np.ndarray:
    """Inverse CDF of W = mu^T X: W = 1 + log(u + (1-u) e^{-2 kappa}) / kappa.

    The log argument 1 + a with a = (1-u) expm1(-2 kappa) is taken through
    log1p when a is small (small kappa or u near 1) and through the sum of
    positive terms u + (1-u) e^{-2 kappa} otherwise, so both tails stay
    accurate; kappa = 0 gives the uniform law W = 2u - 1.
    """
    kappa = np.asarray(kappa, dtype=float)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        a = (1.0 - u) * np.expm1(-2.0 * kappa)
        log_arg = np.where(a > -0.5, np.log1p(a), np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)))
        w = 1.0 + log_arg / kappa
    return np.clip(np.where(kappa > 0, w, 2.0 * u - 1.0), -1.0, 1.0)


def rotate_from_pole(mu: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Apply, row by row, the rotation taking e3 to mu to the vectors z.

    Uses the rotation in the plane of e3 and mu,
    R = c I + [v]_x + v v^T / (1 + c) with v = e3 x mu, c = mu_3, where
    1 + c is computed as |v|^2 / (1 - c) for c < 0. For mu = -e3 exactly
    the 180 degree rotation about e1 is used.
    """
    mu = np.broadcast_to(np.asarray(mu, dtype=float), np.shape(z))
    a, b, c = mu[:, 0], mu[:, 1], mu[:, 2]
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    s = a * a + b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        one_plus_c = np.where(c >= 0, 1.0 + c, s / (1.0 - c))
        f = np.where(s > ANTIPODE_TOL, (-b * z1 + a * z2) / one_plus_c, 0.0)
    out = np.stack(
        [
            c * z1 + a * z3 - b * f,
            c * z2 + b * z3 + a * f,
            c * z3 - b * z2 - a * z1,
        ],
        axis=1,
    )
    flip = (s <= ANTIPODE_TOL) & (c < 0)
    if np.any(flip):
        out[flip] = z[flip] * np.array([1.0, -1.0, -1.0])
    return out


def _rotate_from_pole_scalar(a: float, b: float, c: float, z1: float, z2: float, z3: float):
    s = a * a + b * b
    if s <= ANTIPODE_TOL and c < 0:
        return z1, -z2, -z3
    one_plus_c = 1.0 + c if c >= 0 else s / (1.0 - c)
    f = (-b * z1 + a * z2) / one_plus_c
    return c * z1 + a * z3 - b * f, c * z2 + b * z3 + a * f, c * z3 - b * z2 - a * z1


def _pole_draws(kappa, size: int, rng: np.random.Generator) -> np.ndarray:
    """vMF(e3, kappa) draws; u first, then the azimuth."""
    u = 1.0 - rng.random(size)  # (0, 1]
    phi = 2.0 * math.pi * rng.random(size)
    w = vmf_cosines(kappa, u)
    r = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    return np.stack([r * np.cos(phi), r * np.sin(phi), w], axis=1)


def sample_vmf_s2(params: VmfParams, rng: np.random.Generator, size: int | None = None):
    """Exact vMF draws on S^2 by inverse CDF of the cosine to the mean.

    Returns a :class:`UnitVector` when ``size`` is None, else an (size, 3)
    array of rows.
    """
    if params.mean.dim != 3:
        raise ValidationError(f"vMF sampling is implemented on S^2 only, got d={params.mean.dim}")
    k = 1 if size is None else int(size)
    z = _pole_draws(params.kappa, k, rng)
    x = rotate_from_pole(params.mean.coords, z)
    x /= np.linalg.norm(x, axis=1)[:, None]
    return UnitVector(x[0]) if size is None else x


def sample_mixture(target: MixtureTarget, size: int, rng: np.random.Generator) -> np.ndarray:
    """iid draws from a vMF mixture: component labels first, then one vMF draw each."""
    labels = rng.choice(len(target.components), size=size, p=np.asarray(target.weights))
    z = _pole_draws(target.kappas[labels], size, rng)
    x = rotate_from_pole(target.means[labels], z)
    return x / np.linalg.norm(x, axis=1)[:, None]


def tetrahedron_modes() -> list[UnitVector]:
    """Vertices of a regular tetrahedron inscribed in S^2."""
    s = 1.0 / math.sqrt(3.0)
    verts = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    return [UnitVector(np.array(v, dtype=float) * s) for v in verts]


# --------------------------------------------------------------------------
# Metropolis-Hastings
# --------------------------------------------------------------------------

Proposal = Union[float, MixtureTarget]


@dataclass(frozen=True)
class ChainRunConfig:
    """Settings for one MH run.

    ``proposal`` is a concentration for the random-walk sampler
    (vMF centered at the current state) or a :class:`MixtureTarget` for the
    independence sampler. The initial state is an exact draw from the
    target, made from the chain's own stream before any proposal.
    """

    n_keep: int
    burn_in: int
    seed: int
    target: MixtureTarget
    proposal: Proposal
    stream: tuple = field(default=())

    def __post_init__(self):
        if isinstance(self.target, VmfParams):
            object.__setattr__(self, "target", MixtureTarget.single(self.target))
        if isinstance(self.proposal, VmfParams):
            object.__setattr__(self, "proposal", MixtureTarget.single(self.proposal))
        if int(self.n_keep) < 1:
            raise ValidationError(f"n_keep must be >= 1, got {self.n_keep}")
        if int(self.burn_in) < 0:
            raise ValidationError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.target.means.shape[1] != 3:
            raise ValidationError("samplers are implemented on S^2 only")

    def rng(self) -> np.random.Generator:
        return stream_rng(self.seed, self.stream)


def rwmh_sphere(cfg: ChainRunConfig) -> tuple[Chain, float]:
    """Random-walk Metropolis on S^2 with proposal vMF(x, kappa).

    The proposal density depends on x^T y only, so it is symmetric and the
    acceptance ratio is pi(y)/pi(x). Returns the post-burn-in chain and the
    acceptance rate over post-burn-in proposals.
    """
    if isinstance(cfg.proposal, MixtureTarget):
        raise ValidationError("rwmh_sphere needs a proposal concentration, not a mixture")
    kappa = float(cfg.proposal)
    if not kappa >= 0:
        raise ValidationError(f"proposal concentration must be >= 0, got {kappa}")
    rng = cfg.rng()
    x0 = sample_mixture(cfg.target, 1, rng)[0]
    total = cfg.burn_in + cfg.n_keep
    steps = _pole_draws(kappa, total, rng)
    log_u = np.log(1.0 - rng.random(total))

    logpi = _ScalarLogDensity(cfg.target)
    x = tuple(map(float, x0))
    lp_x = logpi(*x)
    out = np.empty((cfg.n_keep, 3))
    accepted = 0
    for i, (z, lu) in enumerate(zip(steps.tolist(), log_u.tolist())):
        y = _rotate_from_pole_scalar(x[0], x[1], x[2], z[0], z[1], z[2])
        nrm = math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
        y = (y[0] / nrm, y[1] / nrm, y[2] / nrm)
        lp_y = logpi(*y)
        if lu <= lp_y - lp_x:
            x, lp_x = y, lp_y
            if i >= cfg.burn_in:
                accepted += 1
        if i >= cfg.burn_in:
            out[i - cfg.burn_in] = x
    meta = {"sampler": "rwmh", "seed": cfg.seed, "stream": list(cfg.stream), "burn_in": cfg.burn_in, "proposal_kappa": kappa}
    return Chain("sphere", out, meta), accepted / cfg.n_keep


def independence_mh(cfg: ChainRunConfig) -> tuple[Chain, float]:
    """Independence Metropolis-Hastings with a fixed vMF-mixture proposal q.

    Accepts y with probability min{1, pi(y) q(x) / (pi(x) q(y))}.
    """
    if not isinstance(cfg.proposal, MixtureTarget):
        raise ValidationError("independence_mh needs a mixture proposal")
    rng = cfg.rng()
    x0 = sample_mixture(cfg.target, 1, rng)[0]
    total = cfg.burn_in + cfg.n_keep
    props = sample_mixture(cfg.proposal, total, rng)
    log_u = np.log(1.0 - rng.random(total))
    # log importance weight pi/q of every proposal, computed once
    lw_props = (log_density_mixture(cfg.target, props) - log_density_mixture(cfg.proposal, props)).tolist()
    lw_x = log_density_mixture(cfg.target, x0) - log_density_mixture(cfg.proposal, x0)

    idx = np.empty(cfg.n_keep, dtype=np.int64)
    current = -1
    accepted = 0
    for i, (lw_y, lu) in enumerate(zip(lw_props, log_u.tolist())):
        if lu <= lw_y - lw_x:
            current, lw_x = i, lw_y
            if i >= cfg.burn_in:
                accepted += 1
        if i >= cfg.burn_in:
            idx[i - cfg.burn_in] = current
    out = np.where((idx < 0)[:, None], x0[None, :], props[np.maximum(idx, 0)])
    meta = {"sampler": "independence", "seed": cfg.seed, "stream": list(cfg.stream), "burn_in": cfg.burn_in}
    return Chain("sphere", out, meta), accepted / cfg.n_keep
