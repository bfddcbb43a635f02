"""Seeded runners for the rotation and spherical-mixture experiments.

Every random quantity comes from its own PCG64 stream derived from
``(master_seed, stream)``:

====================  ==========================
stream                use
====================  ==========================
``(0,)``              rotation experiment chain
``(1, r)``            r-th Haar rotation
``(2, s, r)``         mixture chain r of sampler s
``(3,)``              iid mixture reference
====================  ==========================

so replications are reproducible one at a time and in any order.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .estimator import WindowSpec, coordinate_ess, ess_from_gram
from .geometry import Chain, ValidationError, haar_rotation
from .kernels import KernelSpec, gram
from .mmd import ReferenceEmbedding, nearest_mode_frequencies, mode_tv_error
from .samplers import (
    ChainRunConfig,
    MixtureTarget,
    VmfParams,
    independence_mh,
    rwmh_sphere,
    sample_mixture,
    stream_rng,
    tetrahedron_modes,
)

EXPERIMENTS = ("rotation", "mixture")
SAMPLERS = ("independence", "local")
THREADS_ENV = "MANIFOLD_ESS_THREADS"


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment; :func:`preset` gives the reference settings.

    Fields not used by an experiment are ignored by its runner
    (``rotations`` and ``kappa_prop`` by the mixture, ``replications``,
    ``m_ref``, ``weights``, ``kappa_loc`` and ``kappa_ind`` by the rotation).
    """

    experiment: str
    master_seed: int = 0
    n_keep: int = 3000
    burn_in: int = 1000
    bandwidth: Any = "auto"
    rhos: tuple = (0.75,)
    kappa_target: float = 12.0
    kappa_prop: float = 35.0
    rotations: int = 80
    replications: int = 20
    m_ref: int = 8000
    weights: tuple = (0.4, 0.3, 0.2, 0.1)
    kappa_loc: float = 90.0
    kappa_ind: float = 12.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        object.__setattr__(self, "rhos", tuple(float(r) for r in self.rhos))
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        for name in ("master_seed", "n_keep", "burn_in", "rotations", "replications", "m_ref"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ValidationError(f"{name} must be an integer, got {value!r}")
        if self.n_keep < 4:
            raise ValidationError(f"n_keep must be >= 4, got {self.n_keep}")
        if self.burn_in < 0 or self.master_seed < 0:
            raise ValidationError("burn_in and master_seed must be >= 0")
        if self.rotations < 1 or self.replications < 1:
            raise ValidationError("rotations and replications must be >= 1")
        if self.m_ref < 2:
            raise ValidationError(f"m_ref must be >= 2, got {self.m_ref}")
        if not self.rhos or not all(0.0 < r < 1.0 for r in self.rhos):
            raise ValidationError(f"every rho must lie in (0, 1), got {self.rhos}")
        for name in ("kappa_target", "kappa_prop", "kappa_loc", "kappa_ind"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0")
        if len(self.weights) != 4:
            raise ValidationError("the mixture target has four tetrahedral components; give four weights")
        WindowSpec(bandwidth=self.bandwidth).resolve(self.n_keep)

    def window(self) -> WindowSpec:
        return WindowSpec(bandwidth=self.bandwidth)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rhos"] = list(self.rhos)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Build a config from ``d``, starting from ``base`` or the preset named by ``d['experiment']``."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        if base is None:
            if "experiment" not in d:
                raise ValidationError("config needs an 'experiment' key (rotation or mixture)")
            base = preset(d["experiment"])
        elif "experiment" in d and d["experiment"] != base.experiment:
            base = preset(d["experiment"])
        return replace(base, **d)


def preset(name: str) -> ExperimentConfig:
    """Reference settings of the two experiments."""
    if name == "rotation":
        return ExperimentConfig("rotation", n_keep=3000, burn_in=1000, bandwidth="auto", rhos=(0.75,),
                                kappa_target=12.0, kappa_prop=35.0, rotations=80)
    if name == "mixture":
        return ExperimentConfig("mixture", n_keep=2500, burn_in=1000, bandwidth=13, rhos=(0.35, 0.60, 0.85),
                                kappa_target=28.0, replications=20, m_ref=8000, weights=(0.4, 0.3, 0.2, 0.1),
                                kappa_loc=90.0, kappa_ind=12.0)
    raise ValidationError(f"unknown preset {name!r}; expected one of {EXPERIMENTS}")


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------


def summarize(values: Iterable[float | None]) -> dict:
    """Mean, sample SD (ddof=1), min, max and range/mean of the finite values."""
    v = np.array([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    out = {"count": int(v.size), "mean": None, "sd": None, "min": None, "max": None, "range_mean": None}
    if v.size == 0:
        return out
    mean = float(v.mean())
    out.update(mean=mean, min=float(v.min()), max=float(v.max()))
    out["sd"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
    out["range_mean"] = (out["max"] - out["min"]) / mean if mean != 0 else None
    return out


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")


def _map(fn: Callable, items: Sequence) -> list:
    """Ordered map, threaded up to MANIFOLD_ESS_THREADS workers."""
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class ExperimentReport:
    """Per-replication rows and their summaries, ready for JSON/CSV export."""

    experiment: str
    config: dict
    base: dict
    rows: list
    summary: list
    plot: list
    chain: Chain | None = None

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "base": self.base,
            "rows": self.rows,
            "summary": self.summary,
        }

    def summary_csv(self) -> str:
        keys = [k for k in self.summary[0] if k not in ("count", "mean", "sd", "min", "max", "range_mean")]
        cols = keys + ["count", "mean", "sd", "min", "max", "range_mean"]
        return to_csv(cols, ([row[c] for c in cols] for row in self.summary))

    def plot_csv(self) -> str:
        return to_csv(["replication", "quantity", "value"], self.plot)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(header: list, rows: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# rotation experiment
# --------------------------------------------------------------------------

E3 = (0.0, 0.0, 1.0)


def rotation_chain(cfg: ExperimentConfig) -> tuple[Chain, float]:
    """The stored random-walk path on S^2 that gets rotated."""
    run = ChainRunConfig(cfg.n_keep, cfg.burn_in, cfg.master_seed, VmfParams(E3, cfg.kappa_target),
                         cfg.kappa_prop, stream=(0,))
    return rwmh_sphere(run)


def run_rotation(cfg: ExperimentConfig) -> ExperimentReport:
    """Kernel and coordinate-wise ESS of one path under independent Haar rotations."""
    if cfg.experiment != "rotation":
        raise ValidationError("run_rotation needs a rotation config")
    chain, acceptance = rotation_chain(cfg)
    spec = KernelSpec("sphere_poisson", rho=cfg.rhos[0])
    w = cfg.window()
    base, _ = ess_from_gram(gram(spec, chain), w, spec.k0)
    base_coord = coordinate_ess(chain.points, w)

    def one(r: int) -> dict:
        q = haar_rotation(3, stream_rng(cfg.master_seed, (1, r)))
        rotated = chain.rotated(q)
        rep, _ = ess_from_gram(gram(spec, rotated), w, spec.k0)
        coord = coordinate_ess(rotated.points, w)
        row = {"rotation": r}
        for j in range(3):
            row[f"coord_ess_axis{j + 1}"] = float(coord[j])
        row["kernel_ess"] = _finite(rep.ess)
        row["kernel_gamma0"] = rep.gamma0
        row["kernel_sigma2"] = rep.sigma2
        row["kernel_abs_dev"] = abs(rep.ess - base.ess) if rep.ok and base.ok else None
        return row

    rows = _map(one, list(range(cfg.rotations)))
    axes = [[row[f"coord_ess_axis{j + 1}"] for row in rows] for j in range(3)]
    kess = [row["kernel_ess"] for row in rows]
    summary = [
        {"quantity": "coord_ess_pooled", **summarize(axes[0] + axes[1] + axes[2])},
        {"quantity": "coord_ess_axis1", **summarize(axes[0])},
        {"quantity": "coord_ess_axis2", **summarize(axes[1])},
        {"quantity": "coord_ess_axis3", **summarize(axes[2])},
        {"quantity": "kernel_ess", **summarize(kess)},
    ]
    devs = [row["kernel_abs_dev"] for row in rows if row["kernel_abs_dev"] is not None]
    base_d = {
        "acceptance": acceptance,
        "kernel": spec.to_dict(),
        "report": {k: _finite(v) if isinstance(v, float) else v for k, v in base.to_dict().items()},
        "coord_ess": [float(c) for c in base_coord],
        "max_abs_dev": max(devs) if devs else None,
    }
    plot = [(row["rotation"], q, row[q]) for row in rows
            for q in ("coord_ess_axis1", "coord_ess_axis2", "coord_ess_axis3", "kernel_ess")]
    return ExperimentReport("rotation", cfg.to_dict(), base_d, rows, summary, plot, chain)


# --------------------------------------------------------------------------
# mixture experiment
# --------------------------------------------------------------------------


def mixture_target(cfg: ExperimentConfig) -> MixtureTarget:
    modes = tetrahedron_modes()
    return MixtureTarget(tuple(VmfParams(m, cfg.kappa_target) for m in modes), cfg.weights)


def mixture_chain(cfg: ExperimentConfig, sampler: str, r: int) -> tuple[Chain, float]:
    """Replication ``r`` of the local random-walk or the independence sampler."""
    target = mixture_target(cfg)
    s = SAMPLERS.index(sampler)
    if sampler == "local":
        run = ChainRunConfig(cfg.n_keep, cfg.burn_in, cfg.master_seed, target, cfg.kappa_loc, stream=(2, s, r))
        return rwmh_sphere(run)
    proposal = MixtureTarget(tuple(VmfParams(m, cfg.kappa_ind) for m in tetrahedron_modes()), (0.25,) * 4)
    run = ChainRunConfig(cfg.n_keep, cfg.burn_in, cfg.master_seed, target, proposal, stream=(2, s, r))
    return independence_mh(run)


def mixture_reference(cfg: ExperimentConfig) -> Chain:
    pts = sample_mixture(mixture_target(cfg), cfg.m_ref, stream_rng(cfg.master_seed, (3,)))
    return Chain("sphere", pts, {"sampler": "iid", "seed": cfg.master_seed, "stream": [3]})


def _rho_key(rho: float) -> str:
    return f"{rho:.2f}"


def run_mixture(cfg: ExperimentConfig) -> ExperimentReport:
    """Kernel ESS, corrected MMD risk and mode errors of both samplers."""
    if cfg.experiment != "mixture":
        raise ValidationError("run_mixture needs a mixture config")
    modes = tetrahedron_modes()
    reference = mixture_reference(cfg)
    ref_freqs = nearest_mode_frequencies(reference, modes)
    specs = [KernelSpec("sphere_poisson", rho=rho) for rho in cfg.rhos]
    embeddings = [ReferenceEmbedding(reference, spec) for spec in specs]
    w = cfg.window()

    def one(job) -> list:
        sampler, r = job
        chain, acceptance = mixture_chain(cfg, sampler, r)
        tv = mode_tv_error(chain, modes, ref_freqs)
        out = []
        for spec, emb in zip(specs, embeddings):
            rep, _ = ess_from_gram(gram(spec, chain), w, spec.k0)
            d_hat = emb.corrected_risk(chain)
            out.append({
                "sampler": sampler,
                "replication": r,
                "rho": spec.rho,
                "ess": _finite(rep.ess),
                "gamma0": rep.gamma0,
                "sigma2": rep.sigma2,
                "status": rep.status,
                "d_hat": d_hat,
                "ratio": d_hat / rep.sigma2 if rep.ok else None,
                "tv_error": tv,
                "acceptance": acceptance,
            })
        return out

    jobs = [(s, r) for s in SAMPLERS for r in range(cfg.replications)]
    rows = [row for block in _map(one, jobs) for row in block]

    summary = []
    for s in SAMPLERS:
        for rho in cfg.rhos:
            sel = [row for row in rows if row["sampler"] == s and row["rho"] == rho]
            for q in ("ess", "sigma2", "d_hat", "ratio"):
                summary.append({"sampler": s, "rho": rho, "quantity": q, **summarize(row[q] for row in sel)})
        first = [row for row in rows if row["sampler"] == s and row["rho"] == cfg.rhos[0]]
        for q in ("tv_error", "acceptance"):
            summary.append({"sampler": s, "rho": None, "quantity": q, **summarize(row[q] for row in first)})

    base_d = {
        "reference_size": cfg.m_ref,
        "reference_mode_freqs": [float(f) for f in ref_freqs],
        "reference_gamma0": {_rho_key(e.spec.rho): e.gamma0 for e in embeddings},
        "bandwidth": w.resolve(cfg.n_keep),
    }
    plot = []
    for row in rows:
        tag = f"{row['sampler']}/rho={_rho_key(row['rho'])}"
        for q in ("ess", "sigma2", "d_hat", "ratio"):
            plot.append((row["replication"], f"{tag}/{q}", row[q]))
        if row["rho"] == cfg.rhos[0]:
            plot.append((row["replication"], f"{row['sampler']}/tv_error", row["tv_error"]))
            plot.append((row["replication"], f"{row['sampler']}/acceptance", row["acceptance"]))
    return ExperimentReport("mixture", cfg.to_dict(), base_d, rows, summary, plot)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    return run_rotation(cfg) if cfg.experiment == "rotation" else run_mixture(cfg)
