"""Kernel effective sample size from a Gram matrix.

The pipeline is ``gram -> center_gram -> lag_covariances ->
long_run_variance``; :func:`kernel_ess` runs it and packages the result in
an :class:`EssReport`. The same lag-window machinery gives ordinary scalar
ESS (:func:`scalar_ess`) and the per-eigendirection decomposition for the
linear kernel (:func:`harmonic_mean_diagnostic`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .geometry import Chain, ValidationError
from .kernels import KernelSpec, cross_kernel, gram, pair_kernel

MIN_CHAIN_LENGTH = 4
DEGENERATE_GAMMA0 = 1e-14


class DegenerateChainError(ValueError):
    """The empirical feature variance is zero, so ESS is undefined."""


# --------------------------------------------------------------------------
# lag windows
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    """Lag window and bandwidth.

    ``window`` is ``"bartlett"`` (w(u) = 1 - u), ``"truncated"`` (w = 1) or
    ``"custom"``, in which case ``weights`` holds w(l/(b+1)) for l = 1..b
    directly. ``bandwidth="auto"`` resolves to floor(n^(1/3)).
    """

    window: str = "bartlett"
    bandwidth: int | str = "auto"
    weights: tuple | None = None

    def __post_init__(self):
        if self.window not in ("bartlett", "truncated", "custom"):
            raise ValidationError(f"unknown lag window {self.window!r}")
        if self.bandwidth != "auto":
            b = self.bandwidth
            if isinstance(b, bool) or not isinstance(b, (int, float, np.integer, np.floating)) or int(b) != b or b < 0:
                raise ValidationError(f"bandwidth must be 'auto' or a nonnegative int, got {self.bandwidth!r}")
        if self.window == "custom":
            if self.weights is None:
                raise ValidationError("custom window needs a weight table")
            w = np.asarray(self.weights, dtype=float)
            if not np.all(np.isfinite(w)):
                raise ValidationError("custom window weights must be finite")
            object.__setattr__(self, "weights", tuple(float(v) for v in w))
            if self.bandwidth != "auto" and len(self.weights) != self.bandwidth:
                raise ValidationError(f"custom table has {len(self.weights)} weights for bandwidth {self.bandwidth}")

    def resolve(self, n: int) -> int:
        if self.bandwidth == "auto":
            b = len(self.weights) if self.window == "custom" else auto_bandwidth(n)
        else:
            b = int(self.bandwidth)
        if b >= n:
            raise ValidationError(f"bandwidth {b} must be smaller than the chain length {n}")
        return b

    def lag_weights(self, b: int) -> np.ndarray:
        """Weights w(l / (b + 1)) for l = 1..b."""
        if self.window == "custom":
            if len(self.weights) != b:
                raise ValidationError(f"custom table has {len(self.weights)} weights, bandwidth is {b}")
            return np.asarray(self.weights)
        u = np.arange(1, b + 1) / (b + 1.0)
        if self.window == "bartlett":
            return 1.0 - u
        return np.ones(b)


def auto_bandwidth(n: int) -> int:
    """floor(n^(1/3)), computed exactly in integers."""
    b = int(round(n ** (1.0 / 3.0)))
    while b**3 > n:
        b -= 1
    while (b + 1) ** 3 <= n:
        b += 1
    return b


# --------------------------------------------------------------------------
# Gram centering and lags
# --------------------------------------------------------------------------


def center_gram(k) -> np.ndarray:
    """H K H with H = I - 11^T / n.

    Written as K_st - r_s - r_t + g with row means r and grand mean g,
    which avoids two dense matrix products.
    """
    k = np.asarray(getattr(k, "values", k), dtype=float)
    r = k.mean(axis=1)
    g = r.mean()
    kt = k - r[:, None] - r[None, :] + g
    return 0.5 * (kt + kt.T)


@dataclass(frozen=True)
class LagCovariances:
    gammas: np.ndarray
    n: int

    @property
    def b(self) -> int:
        return len(self.gammas) - 1

    @property
    def gamma0(self) -> float:
        return float(self.gammas[0])


def lag_covariances(ktilde, b: int) -> LagCovariances:
    """gamma_l = mean of the l-th superdiagonal of the centered Gram, l = 0..b."""
    ktilde = np.asarray(ktilde, dtype=float)
    n = ktilde.shape[0]
    if not 0 <= b < n:
        raise ValidationError(f"need 0 <= b < n, got b={b}, n={n}")
    gammas = np.array([np.diagonal(ktilde, offset=lag).mean() for lag in range(b + 1)])
    return LagCovariances(gammas, n)


def lag_covariances_streaming(spec: KernelSpec, chain: Chain, b: int, block: int = 2048) -> LagCovariances:
    """Same lags as the dense path, with O(n (b + block)) memory.

    Row sums of K are accumulated block by block; the superdiagonals are
    centered on the fly with K~_st = K_st - r_s - r_t + g.
    """
    pts = chain.points
    n = pts.shape[0]
    if not 0 <= b < n:
        raise ValidationError(f"need 0 <= b < n, got b={b}, n={n}")
    row_sums = np.zeros(n)
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        for lo2 in range(0, n, block):
            hi2 = min(n, lo2 + block)
            row_sums[lo:hi] += cross_kernel(spec, pts[lo:hi], pts[lo2:hi2]).sum(axis=1)
    r = row_sums / n
    g = r.mean()
    gammas = np.empty(b + 1)
    for lag in range(b + 1):
        diag = pair_kernel(spec, pts[: n - lag], pts[lag:])
        gammas[lag] = np.mean(diag - r[: n - lag] - r[lag:] + g)
    return LagCovariances(gammas, n)


def long_run_variance(lags: LagCovariances, w: WindowSpec) -> float:
    """sigma^2 = gamma_0 + 2 sum_{l=1}^{b} w(l/(b+1)) gamma_l. May be <= 0."""
    b = lags.b
    if b == 0:
        return float(lags.gammas[0])
    return float(lags.gammas[0] + 2.0 * np.dot(w.lag_weights(b), lags.gammas[1:]))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EssReport:
    n: int
    gamma0: float
    sigma2: float
    bandwidth: int
    window: str = "bartlett"

    @property
    def status(self) -> str:
        return "ok" if self.sigma2 > 0 else "unstable_sigma"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def ess(self) -> float | None:
        return self.n * self.gamma0 / self.sigma2 if self.ok else None

    @property
    def tau(self) -> float | None:
        return self.sigma2 / self.gamma0 if self.ok else None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "gamma0": self.gamma0,
            "sigma2": self.sigma2,
            "ess": self.ess,
            "tau": self.tau,
            "bandwidth": self.bandwidth,
            "window": self.window,
            "status": self.status,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EssReport":
        try:
            return cls(int(d["n"]), float(d["gamma0"]), float(d["sigma2"]), int(d["bandwidth"]), d.get("window", "bartlett"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed ESS report: {exc}")


def centered_lags(k: np.ndarray, b: int) -> LagCovariances:
    """Lags of H K H without forming it: K~_st = K_st - r_s - r_t + g."""
    n = k.shape[0]
    if not 0 <= b < n:
        raise ValidationError(f"need 0 <= b < n, got b={b}, n={n}")
    r = k.mean(axis=1)
    g = r.mean()
    gammas = np.array([np.mean(np.diagonal(k, offset=lag) - r[: n - lag] - r[lag:] + g) for lag in range(b + 1)])
    return LagCovariances(gammas, n)


def ess_from_gram(k, w: WindowSpec, k0: float = 1.0) -> tuple[EssReport, LagCovariances]:
    """Run centering, lags and the lag window on a precomputed Gram matrix."""
    k = np.asarray(getattr(k, "values", k), dtype=float)
    n = k.shape[0]
    if n < MIN_CHAIN_LENGTH:
        raise ValidationError(f"kernel ESS needs at least {MIN_CHAIN_LENGTH} points, got {n}")
    b = w.resolve(n)
    lags = centered_lags(k, b)
    if lags.gamma0 <= DEGENERATE_GAMMA0 * k0:
        raise DegenerateChainError(f"zero feature variance (gamma0 = {lags.gamma0:.3g}); the chain is constant under this kernel")
    return EssReport(n, lags.gamma0, long_run_variance(lags, w), b, w.window), lags


def kernel_ess(chain: Chain, spec: KernelSpec, w: WindowSpec | None = None) -> EssReport:
    """Lag-window estimate of the kernel ESS of a chain.

    Parameters
    ----------
    chain : Chain
        At least four points on the kernel's manifold.
    spec : KernelSpec
        A positive-definite kernel; the geodesic Gaussian is rejected.
    w : WindowSpec, optional
        Defaults to Bartlett with bandwidth floor(n^(1/3)).

    Returns
    -------
    EssReport
        ``status == "unstable_sigma"`` when the windowed long-run variance
        is not positive; ``ess`` and ``tau`` are then ``None``.
    """
    if spec.is_unsafe:
        raise ValidationError("the geodesic Gaussian is not positive definite; refusing to compute ESS with it")
    w = w or WindowSpec()
    report, _ = ess_from_gram(gram(spec, chain), w, spec.k0)
    return report


def exact_population_ess(gammas: Sequence[float], n: int) -> float:
    """n^2 gamma_0 / (n gamma_0 + 2 sum_{l=1}^{n-1} (n - l) gamma_l).

    Missing lags beyond ``len(gammas)`` are taken as zero. Returns ``inf``
    when the denominator vanishes.
    """
    g = np.asarray(gammas, dtype=float)
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if g.size == 0 or g[0] <= 0:
        raise ValidationError("exact ESS needs gamma_0 > 0")
    lag = np.arange(1, min(n, g.size))
    denom = n * g[0] + 2.0 * np.sum((n - lag) * g[lag])
    scale = n * g[0] + 2.0 * np.sum((n - lag) * np.abs(g[lag]))
    if abs(denom) <= 1e-14 * scale:
        return math.inf
    if denom < 0:
        raise ValidationError(f"negative risk ({denom:.6g}); not an autocovariance sequence of a PSD kernel")
    return float(n * n * g[0] / denom)


def _scalar_lags(y: np.ndarray, b: int) -> np.ndarray:
    n = y.shape[0]
    return np.array([np.dot(y[: n - lag], y[lag:]) / (n - lag) for lag in range(b + 1)])


def scalar_ess(series, w: WindowSpec | None = None) -> EssReport:
    """Ordinary lag-window ESS of a real series, n gamma_0 / sigma^2."""
    w = w or WindowSpec()
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValidationError(f"series must be 1-d, got shape {y.shape}")
    n = y.shape[0]
    if n < MIN_CHAIN_LENGTH:
        raise ValidationError(f"scalar ESS needs at least {MIN_CHAIN_LENGTH} values, got {n}")
    b = w.resolve(n)
    scale = float(np.max(np.abs(y)))
    yc = y - y.mean()
    gammas = _scalar_lags(yc, b)
    if scale == 0.0 or gammas[0] <= (1e-12 * scale) ** 2:
        raise DegenerateChainError("zero variance: the series is constant")
    lags = LagCovariances(gammas, n)
    return EssReport(n, float(gammas[0]), long_run_variance(lags, w), b, w.window)


def coordinate_ess(points: np.ndarray, w: WindowSpec | None = None) -> np.ndarray:
    """Scalar ESS of each coordinate series; NaN where sigma^2 <= 0."""
    out = []
    for j in range(points.shape[1]):
        rep = scalar_ess(points[:, j], w)
        out.append(rep.ess if rep.ok else np.nan)
    return np.array(out)


@dataclass
class HarmonicMeanReport:
    kernel_ess_linear: float | None
    weighted_harmonic_mean: float
    eigenvalues: np.ndarray
    sigma2: np.ndarray
    ess: np.ndarray
    kernel_report: EssReport

    @property
    def relative_gap(self) -> float:
        return abs(self.kernel_ess_linear - self.weighted_harmonic_mean) / abs(self.kernel_ess_linear)

    def to_dict(self) -> dict:
        return {
            "kernel_ess_linear": self.kernel_ess_linear,
            "weighted_harmonic_mean": self.weighted_harmonic_mean,
            "per_direction": [
                {"eigenvalue": float(l), "sigma2": float(s), "ess": float(e)}
                for l, s, e in zip(self.eigenvalues, self.sigma2, self.ess)
            ],
        }


def harmonic_mean_diagnostic(chain: Chain, w: WindowSpec | None = None) -> HarmonicMeanReport:
    """Kernel ESS of the linear kernel against its eigendirection decomposition.

    With k(x, y) = x^T y the centered features are the centered coordinates
    Z, and the centered Gram is Z Z^T. Rotating Z into the eigenbasis of the
    empirical covariance splits every lag mean into per-direction lag means,
    so the kernel ESS equals the lambda-weighted harmonic mean of the
    per-direction ESS values exactly (up to roundoff).
    """
    if chain.manifold != "sphere":
        raise ValidationError("the harmonic-mean diagnostic needs a sphere chain")
    w = w or WindowSpec()
    report = kernel_ess(chain, KernelSpec("sphere_linear"), w)
    x = chain.points
    n = x.shape[0]
    b = w.resolve(n)
    z = x - x.mean(axis=0)
    lam, vecs = np.linalg.eigh(z.T @ z / n)
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    if lam[0] <= 0:
        raise DegenerateChainError("degenerate covariance: all eigenvalues are zero")
    keep = lam > 1e-12 * lam[0]
    proj = z @ vecs[:, keep]
    sig = np.empty(proj.shape[1])
    for j in range(proj.shape[1]):
        sig[j] = long_run_variance(LagCovariances(_scalar_lags(proj[:, j], b), n), w)
    lam_k = lam[keep]
    with np.errstate(divide="ignore"):
        ess_j = np.where(sig == 0.0, np.inf, n * lam_k / sig)
    # directions with infinite ESS contribute nothing to the denominator
    inv = np.where(np.isinf(ess_j), 0.0, lam_k / ess_j)
    hm = float(lam_k.sum() / inv.sum())
    return HarmonicMeanReport(report.ess, hm, lam_k, sig, ess_j, report)


@dataclass(frozen=True)
class PrecisionResult:
    risk: float
    epsilon: float
    required_ess: float
    ess: float
    pass_risk: bool
    pass_ess: bool

    @property
    def passed(self) -> bool:
        return self.pass_risk

    def to_dict(self) -> dict:
        return {
            "risk": self.risk,
            "epsilon": self.epsilon,
            "tolerance": self.epsilon**2,
            "required_ess": self.required_ess,
            "ess": self.ess,
            "pass_risk": self.pass_risk,
            "pass_ess": self.pass_ess,
        }


def precision_check(report: EssReport, epsilon: float) -> PrecisionResult:
    """Kernel-MMD stopping rule: sigma^2 / n <= eps^2, i.e. ESS >= gamma_0 / eps^2.

    Both inequalities are decided in exact rational arithmetic on the
    stored floats, so boundary cases cannot split them.
    """
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if not report.ok:
        raise ValidationError("precision rule needs a report with positive long-run variance")
    eps2 = Fraction(epsilon) ** 2
    gamma0, sigma2 = Fraction(report.gamma0), Fraction(report.sigma2)
    pass_risk = sigma2 / report.n <= eps2
    pass_ess = report.n * gamma0 / sigma2 >= gamma0 / eps2
    assert pass_risk == pass_ess
    return PrecisionResult(
        report.sigma2 / report.n, epsilon, report.gamma0 / epsilon**2, report.ess, bool(pass_risk), bool(pass_ess)
    )
