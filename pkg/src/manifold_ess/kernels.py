"""Positive-definite kernels on manifolds and Gram-matrix assembly.

Sphere kernels are isotropic, ``k(x, y) = psi(x^T y)``, with ``psi`` a
nonnegative Gegenbauer series so that they are positive definite on the
sphere. The remaining families are pullbacks of a Euclidean Gaussian
through an embedding (projectors, matrix log, Cholesky coordinates).

The geodesic Gaussian ``exp(-d_g^2 / h^2)`` is provided only so that its
failure to be positive definite can be demonstrated; constructing it
requires ``unsafe_ok=True`` and the ESS pipeline refuses it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .geometry import (
    Chain,
    ValidationError,
    as_array,
    cholesky_embed,
    projection_embed,
    sym_log,
    uniform_sphere,
)

SPHERE_FAMILIES = ("sphere_poisson", "sphere_gegenbauer", "sphere_linear", "sphere_geodesic_gauss_UNSAFE")
PULLBACK_FAMILIES = ("grassmann_projection_gauss", "spd_log_euclidean_gauss", "correlation_cholesky_gauss")
FAMILIES = SPHERE_FAMILIES + PULLBACK_FAMILIES + ("euclidean_gauss",)

MANIFOLD_OF = {
    "sphere_poisson": "sphere",
    "sphere_gegenbauer": "sphere",
    "sphere_linear": "sphere",
    "sphere_geodesic_gauss_UNSAFE": "sphere",
    "grassmann_projection_gauss": "grassmann",
    "spd_log_euclidean_gauss": "spd",
    "correlation_cholesky_gauss": "correlation",
    "euclidean_gauss": "euclidean",
}

# CLI shorthands
ALIASES = {
    "sphere-poisson": "sphere_poisson",
    "sphere-gegenbauer": "sphere_gegenbauer",
    "sphere-linear": "sphere_linear",
    "geodesic-gauss-unsafe": "sphere_geodesic_gauss_UNSAFE",
    "grassmann-projection-gauss": "grassmann_projection_gauss",
    "spd-log-euclidean-gauss": "spd_log_euclidean_gauss",
    "correlation-cholesky-gauss": "correlation_cholesky_gauss",
    "euclidean-gauss": "euclidean_gauss",
}

SERIES_TOL = 1e-12


def default_truncation(rho: float, tol: float = SERIES_TOL) -> int:
    """Smallest M with rho^(M+1) / (1 - rho) <= tol."""
    m = math.ceil(math.log(tol * (1.0 - rho)) / math.log(rho) - 1.0)
    m = max(m, 1)
    while rho ** (m + 1) / (1.0 - rho) > tol:
        m += 1
    while m > 1 and rho**m / (1.0 - rho) <= tol:
        m -= 1
    return m


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family with its parameters.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    rho : float, optional
        Decay of the Gegenbauer coefficients, ``0 < rho < 1``.
    truncation : int, optional
        Series truncation M for ``sphere_gegenbauer``. Defaults to the
        smallest M whose tail bound is below 1e-12.
    beta : float, optional
        Gaussian scale for the pullback families, ``k = exp(-beta * dist^2)``.
    h : float, optional
        Bandwidth of the unsafe geodesic Gaussian.
    variant : str
        Cholesky coordinates for correlation matrices, ``ecm`` or ``lecm``.
    unsafe_ok : bool
        Must be True to build the geodesic Gaussian.
    """

    family: str
    rho: float | None = None
    truncation: int | None = None
    beta: float | None = None
    h: float | None = None
    variant: str = "ecm"
    unsafe_ok: bool = field(default=False, compare=False)

    def __post_init__(self):
        fam = ALIASES.get(self.family, self.family)
        if fam not in FAMILIES:
            raise ValidationError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam in ("sphere_poisson", "sphere_gegenbauer"):
            if self.rho is None or not 0.0 < self.rho < 1.0:
                raise ValidationError(f"{fam} needs 0 < rho < 1, got {self.rho}")
            if self.truncation is not None and int(self.truncation) < 1:
                raise ValidationError(f"truncation must be >= 1, got {self.truncation}")
        elif fam == "sphere_geodesic_gauss_UNSAFE":
            if not self.unsafe_ok:
                raise ValidationError(
                    "the geodesic Gaussian is not positive definite on the sphere; "
                    "pass unsafe_ok=True to build it for auditing"
                )
            if self.h is None or self.h <= 0:
                raise ValidationError(f"geodesic Gaussian needs h > 0, got {self.h}")
        elif fam in PULLBACK_FAMILIES or fam == "euclidean_gauss":
            if self.beta is None or self.beta <= 0:
                raise ValidationError(f"{fam} needs beta > 0, got {self.beta}")
            if fam == "correlation_cholesky_gauss" and self.variant not in ("ecm", "lecm"):
                raise ValidationError(f"unknown Cholesky variant {self.variant!r}")

    @property
    def manifold(self) -> str:
        return MANIFOLD_OF[self.family]

    @property
    def is_unsafe(self) -> bool:
        return self.family == "sphere_geodesic_gauss_UNSAFE"

    @property
    def series_truncation(self) -> int:
        if self.truncation is not None:
            return int(self.truncation)
        return default_truncation(self.rho)

    @property
    def k0(self) -> float:
        """sup_x k(x, x)."""
        if self.family == "sphere_poisson":
            return 1.0 / (1.0 - self.rho)
        if self.family == "sphere_gegenbauer":
            return (1.0 - self.rho ** (self.series_truncation + 1)) / (1.0 - self.rho)
        return 1.0

    def to_dict(self) -> dict:
        d = {"family": self.family}
        for key in ("rho", "truncation", "beta", "h"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        if self.family == "correlation_cholesky_gauss":
            d["variant"] = self.variant
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, unsafe_ok: bool = False) -> "KernelSpec":
        allowed = {"family", "rho", "truncation", "beta", "h", "variant"}
        extra = set(d) - allowed
        if extra:
            raise ValidationError(f"unknown kernel fields {sorted(extra)}")
        if "family" not in d:
            raise ValidationError("kernel JSON needs a 'family' field")
        return cls(unsafe_ok=unsafe_ok, **d)

    @classmethod
    def from_json(cls, text: str, unsafe_ok: bool = False) -> "KernelSpec":
        return cls.from_dict(json.loads(text), unsafe_ok=unsafe_ok)


# --------------------------------------------------------------------------
# sphere profiles
# --------------------------------------------------------------------------


def gegenbauer_ratios(lam: float, m_max: int, t) -> np.ndarray:
    """Normalized Gegenbauer values C_m(t) / C_m(1) for m = 0..m_max.

    Runs the three-term recurrence directly on the ratio,
    r_{m+1} = (2(m+lam) t r_m - m r_{m-1}) / (m + 2 lam),
    which stays bounded by 1 on [-1, 1]. Returns shape (m_max+1, *t.shape).
    """
    if lam <= 0:
        raise ValidationError(f"Gegenbauer index must be positive, got {lam}")
    t = np.asarray(t, dtype=float)
    out = np.empty((m_max + 1,) + t.shape)
    out[0] = 1.0
    if m_max >= 1:
        out[1] = t
    for m in range(1, m_max):
        out[m + 1] = (2.0 * (m + lam) * t * out[m] - m * out[m - 1]) / (m + 2.0 * lam)
    return out


def gegenbauer_kernel_eval(d: int, rho: float, M: int, t):
    """Partial sum sum_{m<=M} rho^m C_m(t)/C_m(1) with lambda = (d-2)/2.

    The truncation error is at most rho^(M+1) / (1 - rho).
    """
    if d < 3:
        raise ValidationError(f"Gegenbauer sphere kernels need d >= 3, got {d}")
    if M < 1:
        raise ValidationError(f"truncation M must be >= 1, got {M}")
    t_arr = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    lam = (d - 2) / 2.0
    prev, cur = np.ones_like(t_arr), t_arr.copy()
    weight = rho
    acc = 1.0 + weight * cur
    for m in range(1, M):
        prev, cur = cur, (2.0 * (m + lam) * t_arr * cur - m * prev) / (m + 2.0 * lam)
        weight *= rho
        acc = acc + weight * cur
    return float(acc) if np.ndim(t) == 0 else acc


def poisson_s2(rho: float, t, out=None):
    """Closed form sum rho^m P_m(t) = (1 - 2 rho t + rho^2)^(-1/2).

    With ``out`` the evaluation is done in place (``out`` may be ``t``).
    """
    t = np.clip(t, -1.0, 1.0, out=out)
    t *= -2.0 * rho
    t += 1.0 + rho * rho
    np.sqrt(t, out=t)
    return np.reciprocal(t, out=t)


def _sphere_profile(spec: KernelSpec, d: int, t, inplace: bool = False):
    fam = spec.family
    if fam == "sphere_linear":
        return t
    if fam == "sphere_geodesic_gauss_UNSAFE":
        dist = np.arccos(np.clip(t, -1.0, 1.0))
        return np.exp(-(dist**2) / spec.h**2)
    if fam == "sphere_poisson" and d == 3:
        if np.ndim(t) == 0:
            return 1.0 / np.sqrt(1.0 - 2.0 * spec.rho * np.clip(t, -1.0, 1.0) + spec.rho**2)
        return poisson_s2(spec.rho, t, out=t if inplace else None)
    if d < 3:
        raise ValidationError(f"{fam} needs ambient dimension d >= 3, got {d}")
    return gegenbauer_kernel_eval(d, spec.rho, spec.series_truncation, t)


# --------------------------------------------------------------------------
# embeddings for the pullback families
# --------------------------------------------------------------------------


def embedding(spec: KernelSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Map from stacked manifold points to flat Euclidean coordinates.

    The Gaussian on these coordinates with scale :func:`euclidean_beta`
    reproduces the pullback kernel.
    """
    n_pts = lambda p: p.shape[0]  # noqa: E731
    if spec.family == "spd_log_euclidean_gauss":
        return lambda p: sym_log(p).reshape(n_pts(p), -1)
    if spec.family == "grassmann_projection_gauss":
        return lambda p: projection_embed(p).reshape(n_pts(p), -1)
    if spec.family == "correlation_cholesky_gauss":
        variant = spec.variant
        return lambda p: np.asarray(cholesky_embed(p, variant)).reshape(n_pts(p), -1)
    if spec.family == "euclidean_gauss":
        return lambda p: np.asarray(p, dtype=float).reshape(n_pts(p), -1)
    raise ValidationError(f"{spec.family} is not a pullback family")


def euclidean_beta(spec: KernelSpec) -> float:
    # d_pr^2 = ||P - Q||_F^2 / 2, so the 1/2 moves into beta
    if spec.family == "grassmann_projection_gauss":
        return spec.beta / 2.0
    return spec.beta


def transported_spec(spec: KernelSpec):
    """Split a pullback kernel into (embedding, Euclidean Gaussian spec).

    ``kernel_eval(spec, x, y) == kernel_eval(gauss, psi(x), psi(y))`` where
    ``psi, gauss = transported_spec(spec)``.
    """
    if spec.family not in PULLBACK_FAMILIES:
        raise ValidationError(f"{spec.family} is not a pullback family")
    embed = embedding(spec)

    def psi(x):
        x = as_array(x)
        return embed(x[None])[0]

    return psi, KernelSpec("euclidean_gauss", beta=euclidean_beta(spec))


def _check_manifold(spec: KernelSpec, manifold: str) -> None:
    if spec.manifold != manifold:
        raise ValidationError(f"kernel {spec.family} lives on {spec.manifold}, chain is on {manifold}")


def _infer_manifold(spec: KernelSpec, x: np.ndarray) -> None:
    man = spec.manifold
    if man in ("sphere", "euclidean") and x.ndim != 1:
        raise ValidationError(f"{spec.family} expects vectors, got shape {x.shape}")
    if man in ("spd", "correlation", "grassmann") and x.ndim != 2:
        raise ValidationError(f"{spec.family} expects matrices, got shape {x.shape}")


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate k(x, y) for two single points."""
    for p in (x, y):
        man = getattr(p, "manifold", None)
        if man is not None:
            _check_manifold(spec, man)
    xa, ya = as_array(x), as_array(y)
    if xa.shape != ya.shape:
        raise ValidationError(f"dimension mismatch: {xa.shape} vs {ya.shape}")
    _infer_manifold(spec, xa)
    if spec.manifold == "sphere":
        t = float(np.clip(xa @ ya, -1.0, 1.0))
        return float(_sphere_profile(spec, xa.shape[0], np.float64(t)))
    embed = embedding(spec)
    ex, ey = embed(xa[None])[0], embed(ya[None])[0]
    return float(np.exp(-euclidean_beta(spec) * np.sum((ex - ey) ** 2)))


def cross_kernel(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel matrix k(a_s, b_j) between two stacks of raw points."""
    if spec.manifold == "sphere":
        t = a @ b.T
        return np.asarray(_sphere_profile(spec, a.shape[1], t, inplace=True), dtype=float)
    embed = embedding(spec)
    d2 = cdist(embed(a), embed(b), "sqeuclidean")
    return np.exp(-euclidean_beta(spec) * d2)


def mirror_upper(a: np.ndarray, block: int = 256) -> np.ndarray:
    """Overwrite the strict lower triangle of a square array with the upper one, in place."""
    n = a.shape[0]
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        diag = a[lo:hi, lo:hi]
        diag[...] = np.triu(diag) + np.triu(diag, 1).T
        a[hi:, lo:hi] = a[lo:hi, hi:].T
    return a


def pair_kernel(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """k(a_i, b_i) for matched rows of two stacks."""
    if spec.manifold == "sphere":
        t = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
        return np.asarray(_sphere_profile(spec, a.shape[1], t), dtype=float)
    embed = embedding(spec)
    return np.exp(-euclidean_beta(spec) * np.sum((embed(a) - embed(b)) ** 2, axis=1))


def self_kernel(spec: KernelSpec, a: np.ndarray) -> np.ndarray:
    """Exactly symmetric kernel matrix of one stack of raw points.

    The upper triangle of the inner-product (or distance) matrix is
    mirrored before the elementwise profile, so K == K.T bit for bit.
    """
    if spec.manifold == "sphere":
        t = mirror_upper(a @ a.T)
        return np.asarray(_sphere_profile(spec, a.shape[1], t, inplace=True), dtype=float)
    d2 = squareform(pdist(embedding(spec)(a), "sqeuclidean"))
    d2 *= -euclidean_beta(spec)
    return np.exp(d2, out=d2)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    values: np.ndarray
    kernel: KernelSpec

    @property
    def n(self) -> int:
        return self.values.shape[0]


def gram(spec: KernelSpec, chain: Chain) -> GramMatrix:
    """n x n Gram matrix K_st = k(X_s, X_t) of a chain."""
    _check_manifold(spec, chain.manifold)
    k = self_kernel(spec, chain.points)
    k.setflags(write=False)
    return GramMatrix(k, spec)


# --------------------------------------------------------------------------
# positive-definiteness audit
# --------------------------------------------------------------------------


@dataclass
class AuditReport:
    min_eigenvalue: float
    tol: float
    n_points: int
    kernel: KernelSpec

    @property
    def passed(self) -> bool:
        return self.min_eigenvalue >= -self.tol

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "n_points": self.n_points,
            "min_eigenvalue": self.min_eigenvalue,
            "tol": self.tol,
            "pass": self.passed,
        }


def default_audit_tol(n: int, k0: float) -> float:
    """1e-8, widened only when eigen-solver roundoff (~ n K0 eps) could reach it."""
    return max(1e-8, 100.0 * n * k0 * np.finfo(float).eps)


def pd_audit(spec: KernelSpec, points, tol: float | None = None) -> AuditReport:
    """Smallest eigenvalue of the Gram matrix over a point set."""
    pts = points.points if isinstance(points, Chain) else np.stack([as_array(p) for p in points])
    if pts.shape[0] < 2:
        raise ValidationError("pd_audit needs at least two points")
    k = self_kernel(spec, pts)
    if tol is None:
        tol = default_audit_tol(pts.shape[0], spec.k0)
    min_eig = float(np.linalg.eigvalsh(k)[0])
    return AuditReport(min_eig, tol, pts.shape[0], spec)


GEODESIC_SEARCH_H = (0.5, 1.0, 2.0, 4.0)


@dataclass
class GeodesicSearchResult:
    """Outcome of the geodesic-Gaussian failure search.

    ``witnesses`` lists every (h, set index, min eigenvalue) whose Gram has
    min eigenvalue below ``threshold``; ``worst_points`` holds the point set
    of the most negative one.
    """

    threshold: float
    seed: int
    n_sets: int
    set_size: int
    bandwidths: tuple
    min_by_h: dict
    witnesses: list
    worst_points: np.ndarray | None

    @property
    def found(self) -> bool:
        return bool(self.witnesses)

    def to_dict(self) -> dict:
        worst = min(self.witnesses, key=lambda w: w["min_eigenvalue"]) if self.witnesses else None
        return {
            "kernel": "sphere_geodesic_gauss_UNSAFE",
            "bandwidths": list(self.bandwidths),
            "n_sets": self.n_sets,
            "set_size": self.set_size,
            "seed": self.seed,
            "threshold": self.threshold,
            "min_eigenvalue_by_h": {repr(h): v for h, v in self.min_by_h.items()},
            "n_failures": len(self.witnesses),
            "witness": worst,
            "witness_points": None if self.worst_points is None else self.worst_points.tolist(),
            "pass": not self.witnesses,
        }


def geodesic_gauss_search(
    seed: int = 0,
    bandwidths=GEODESIC_SEARCH_H,
    n_sets: int = 50,
    set_size: int = 30,
    threshold: float = -1e-6,
    d: int = 3,
) -> GeodesicSearchResult:
    """Search for Gram matrices of the geodesic Gaussian with negative eigenvalues.

    For each bandwidth h the same ``n_sets`` uniform point sets of size
    ``set_size`` on S^{d-1} are drawn from ``default_rng(seed)``.
    """
    rng = np.random.default_rng(seed)
    sets = [uniform_sphere(set_size, d, rng) for _ in range(n_sets)]
    min_by_h, witnesses = {}, []
    worst_val, worst_pts = np.inf, None
    for h in bandwidths:
        spec = KernelSpec("sphere_geodesic_gauss_UNSAFE", h=float(h), unsafe_ok=True)
        lo = np.inf
        for i, pts in enumerate(sets):
            ev = float(np.linalg.eigvalsh(self_kernel(spec, pts))[0])
            lo = min(lo, ev)
            if ev < threshold:
                witnesses.append({"h": float(h), "set": i, "min_eigenvalue": ev})
                if ev < worst_val:
                    worst_val, worst_pts = ev, pts
        min_by_h[float(h)] = lo
    return GeodesicSearchResult(threshold, seed, n_sets, set_size, tuple(bandwidths), min_by_h, witnesses, worst_pts)
