"""Manifold point types, embeddings and Haar rotations.

Points are immutable wrappers around read-only numpy arrays. Every
constructor validates its input and raises :class:`ValidationError` with a
diagnostic instead of repairing it; the only repair performed is the
renormalization of sphere points whose norm is within ``1e-6`` of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

MANIFOLDS = ("sphere", "spd", "grassmann", "correlation", "euclidean")

UNIT_NORM_SLACK = 1e-6
SYMMETRY_TOL = 1e-8
MIN_EIGENVALUE = 1e-12
FRAME_TOL = 1e-10
UNIT_DIAGONAL_TOL = 1e-10
ROTATION_TOL = 1e-10
DET_TOL = 1e-8


class ValidationError(ValueError):
    """Input data violates the invariants of a manifold type."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# array-level validators, shared by the point types and Chain
# --------------------------------------------------------------------------


def _check_unit_rows(x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValidationError(f"sphere points need ambient dimension >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("sphere point has non-finite coordinates")
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_SLACK)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"point {i} has norm {norms[i]:.10g}, not within {UNIT_NORM_SLACK} of 1")
    # rows already unit to roundoff are kept bit-for-bit (file round trips)
    scale = np.where(np.abs(norms - 1.0) <= 1e-15, 1.0, norms)
    return x / scale[:, None]


def _check_symmetric(a: np.ndarray, what: str) -> None:
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValidationError(f"{what} must be square, got shape {a.shape[1:]}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what} has non-finite entries")
    asym = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2))
    bad = np.flatnonzero(asym > SYMMETRY_TOL)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"{what} {i} is not symmetric (max |A - A^T| = {asym[i]:.3g})")


def _check_positive_spectrum(a: np.ndarray, what: str) -> None:
    lam = np.linalg.eigvalsh(a)[:, 0]
    bad = np.flatnonzero(lam <= MIN_EIGENVALUE)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"{what} {i} has eigenvalue {lam[i]:.6g} <= {MIN_EIGENVALUE}")


def _check_spd(a: np.ndarray) -> np.ndarray:
    _check_symmetric(a, "SPD matrix")
    _check_positive_spectrum(a, "SPD matrix")
    return a


def _check_correlation(a: np.ndarray) -> np.ndarray:
    _check_symmetric(a, "correlation matrix")
    diag_err = np.abs(np.diagonal(a, axis1=1, axis2=2) - 1.0).max(axis=1)
    bad = np.flatnonzero(diag_err > UNIT_DIAGONAL_TOL)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"correlation matrix {i} diagonal deviates from 1 by {diag_err[i]:.3g}")
    _check_positive_spectrum(a, "correlation matrix")
    return a


def _check_frames(u: np.ndarray) -> np.ndarray:
    if u.ndim != 3:
        raise ValidationError(f"Grassmann frames must be m x p matrices, got shape {u.shape[1:]}")
    m, p = u.shape[1:]
    if not 1 <= p < m:
        raise ValidationError(f"Grassmann frame needs 1 <= p < m, got m={m}, p={p}")
    err = np.abs(np.swapaxes(u, 1, 2) @ u - np.eye(p)).max(axis=(1, 2))
    bad = np.flatnonzero(err > FRAME_TOL)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"frame {i} is not orthonormal (max |U^T U - I| = {err[i]:.3g})")
    return u


def validate_points(manifold: str, points) -> np.ndarray:
    """Validate a stacked array of points and return a normalized copy."""
    pts = np.array(points, dtype=float)
    if manifold == "sphere":
        return _check_unit_rows(pts)
    if manifold == "spd":
        return _check_spd(pts)
    if manifold == "correlation":
        return _check_correlation(pts)
    if manifold == "grassmann":
        return _check_frames(pts)
    if manifold == "euclidean":
        if pts.ndim != 2 or not np.all(np.isfinite(pts)):
            raise ValidationError(f"euclidean points must be finite rows, got shape {pts.shape}")
        return pts
    raise ValidationError(f"unknown manifold {manifold!r}; expected one of {MANIFOLDS}")


# --------------------------------------------------------------------------
# point types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UnitVector:
    """A point on the unit sphere S^{d-1} in R^d."""

    coords: np.ndarray

    manifold = "sphere"

    def __post_init__(self):
        x = np.asarray(self.coords, dtype=float)
        if x.ndim != 1:
            raise ValidationError(f"unit vector must be 1-d, got shape {x.shape}")
        object.__setattr__(self, "coords", _frozen(_check_unit_rows(x[None, :])[0]))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self.coords


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """A symmetric positive-definite matrix."""

    entries: np.ndarray

    manifold = "spd"

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", _frozen(_check_spd(a[None])[0]))

    @property
    def array(self) -> np.ndarray:
        return self.entries


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """A full-rank correlation matrix (SPD with unit diagonal)."""

    entries: np.ndarray

    manifold = "correlation"

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", _frozen(_check_correlation(a[None])[0]))

    @property
    def array(self) -> np.ndarray:
        return self.entries


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    """A p-dimensional subspace of R^m, stored as an orthonormal m x p frame."""

    frame: np.ndarray

    manifold = "grassmann"

    def __post_init__(self):
        u = np.asarray(self.frame, dtype=float)
        object.__setattr__(self, "frame", _frozen(_check_frames(u[None])[0]))

    @property
    def array(self) -> np.ndarray:
        return self.frame


@dataclass(frozen=True, eq=False)
class Rotation:
    """A special orthogonal matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.matrix, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValidationError(f"rotation must be square, got shape {q.shape}")
        err = np.abs(q.T @ q - np.eye(q.shape[0])).max()
        if err > ROTATION_TOL:
            raise ValidationError(f"matrix is not orthogonal (max |Q^T Q - I| = {err:.3g})")
        det = np.linalg.det(q)
        if abs(det - 1.0) > DET_TOL:
            raise ValidationError(f"rotation determinant is {det:.10g}, expected +1")
        object.__setattr__(self, "matrix", _frozen(q))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate row vectors: each row x becomes Q x."""
        return np.asarray(points) @ self.matrix.T


_POINT_TYPES = {
    "sphere": UnitVector,
    "spd": SpdMatrix,
    "correlation": CorrelationMatrix,
    "grassmann": GrassmannPoint,
}


def as_array(x) -> np.ndarray:
    """Raw coordinates of a point object or array-like."""
    if hasattr(x, "array"):
        return x.array
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Chain:
    """An ordered, nonempty path of points on one manifold.

    ``points`` is stacked along axis 0 and is read-only after
    construction. ``meta`` carries free-form provenance such as the sampler
    name, seed and discarded burn-in.
    """

    manifold: str
    points: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim < 2 or pts.shape[0] == 0:
            raise ValidationError("chain must contain at least one point")
        object.__setattr__(self, "points", _frozen(validate_points(self.manifold, pts)))

    @classmethod
    def from_points(cls, points: Sequence, meta: dict | None = None) -> "Chain":
        points = list(points)
        if not points:
            raise ValidationError("chain must contain at least one point")
        manifold = getattr(points[0], "manifold", None)
        if manifold is None or any(getattr(p, "manifold", None) != manifold for p in points):
            raise ValidationError("all chain points must be point objects of one manifold type")
        shapes = {p.array.shape for p in points}
        if len(shapes) != 1:
            raise ValidationError(f"chain points have mixed ambient dimensions {sorted(shapes)}")
        return cls(manifold, np.stack([p.array for p in points]), dict(meta or {}))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.points.shape[1:])

    def point(self, i: int):
        cls = _POINT_TYPES.get(self.manifold)
        return self.points[i] if cls is None else cls(self.points[i])

    def reversed(self) -> "Chain":
        return Chain(self.manifold, self.points[::-1], dict(self.meta))

    def rotated(self, q: Rotation) -> "Chain":
        if self.manifold != "sphere":
            raise ValidationError("only sphere chains can be rotated")
        return Chain(self.manifold, q.apply(self.points), dict(self.meta))


# --------------------------------------------------------------------------
# geometric maps
# --------------------------------------------------------------------------


def _spectral_map(a: np.ndarray, fn) -> np.ndarray:
    lam, v = np.linalg.eigh(a)
    out = (v * fn(lam)[..., None, :]) @ np.swapaxes(v, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def sym_log(a) -> np.ndarray:
    """Matrix logarithm of an SPD matrix (or a stack of them).

    Uses the symmetric eigendecomposition A = V diag(lam) V^T, so the
    result is V diag(log lam) V^T, symmetrized.
    """
    a = np.asarray(as_array(a), dtype=float)
    stack = a[None] if a.ndim == 2 else a
    _check_spd(stack)
    out = _spectral_map(stack, np.log)
    return out[0] if a.ndim == 2 else out


def sym_exp(s) -> np.ndarray:
    """Matrix exponential of a symmetric matrix (or a stack of them)."""
    s = np.asarray(s, dtype=float)
    stack = s[None] if s.ndim == 2 else s
    _check_symmetric(stack, "symmetric matrix")
    out = _spectral_map(stack, np.exp)
    return out[0] if s.ndim == 2 else out


def projection_embed(u) -> np.ndarray:
    """Projector U U^T of a Grassmann frame (or stack of frames)."""
    u = as_array(u)
    return u @ np.swapaxes(u, -1, -2)


def projection_distance(u, v) -> float:
    """d_pr([U],[V]) = ||U U^T - V V^T||_F / sqrt(2)."""
    return float(np.linalg.norm(projection_embed(u) - projection_embed(v)) / np.sqrt(2.0))


def cholesky_embed(c, variant: str = "ecm") -> np.ndarray:
    """Euclidean coordinates of a correlation matrix via its Cholesky factor.

    ``ecm`` returns the strictly-lower triangle of L (row-major). ``lecm``
    prepends the logs of L's diagonal, giving m + m(m-1)/2 coordinates.
    Accepts a single matrix or a stack.
    """
    c = np.asarray(as_array(c), dtype=float)
    stack = c[None] if c.ndim == 2 else c
    if variant not in ("ecm", "lecm"):
        raise ValidationError(f"unknown Cholesky variant {variant!r}; expected 'ecm' or 'lecm'")
    try:
        low = np.linalg.cholesky(stack)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"Cholesky factorization failed: matrix is not numerically PD ({exc})")
    m = stack.shape[-1]
    rows, cols = np.tril_indices(m, -1)
    strict = low[:, rows, cols]
    if variant == "lecm":
        diag = np.log(np.diagonal(low, axis1=1, axis2=2))
        strict = np.concatenate([diag, strict], axis=1)
    return strict[0] if c.ndim == 2 else strict


def cholesky_factor(c) -> np.ndarray:
    """Lower Cholesky factor with positive diagonal."""
    try:
        return np.linalg.cholesky(as_array(c))
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"Cholesky factorization failed: {exc}")


def haar_rotation(d: int, rng: np.random.Generator) -> Rotation:
    """Draw a Haar-distributed element of SO(d).

    QR of a standard Gaussian matrix, with column signs fixed so that R has
    a positive diagonal; one column is flipped if the determinant is -1.
    """
    if d < 2:
        raise ValidationError(f"rotation dimension must be >= 2, got {d}")
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Rotation(q)


def sphere_geodesic_distance(x, y) -> float:
    x, y = as_array(x), as_array(y)
    if x.shape != y.shape:
        raise ValidationError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.arccos(np.clip(x @ y, -1.0, 1.0)))


def uniform_sphere(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """n iid uniform points on S^{d-1}, as rows."""
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1)[:, None]


def stack_points(points: Iterable) -> np.ndarray:
    return np.stack([as_array(p) for p in points])
