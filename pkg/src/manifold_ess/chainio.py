"""Line-oriented chain files.

Format::

    #% manifold=sphere dims=3
    # free comment
    0.1,0.2,0.9746794344808963
    ...

``dims`` is ``d`` for sphere and euclidean rows, ``m`` for spd and
correlation rows (m*m row-major values) and ``m,p`` for Grassmann frames
(m*p row-major values). Values are written with 17 significant digits,
which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .geometry import MANIFOLDS, Chain, ValidationError, validate_points

_DIRECTIVE = re.compile(r"^#%\s*manifold=(\w+)\s+dims=([\d,\s]+?)\s*$")


class ChainFileError(ValidationError):
    pass


def _row_shape(manifold: str, dims: tuple[int, ...]) -> tuple[int, ...]:
    if manifold in ("sphere", "euclidean"):
        if len(dims) != 1:
            raise ChainFileError(f"{manifold} needs one dimension, got dims={dims}")
        return (dims[0],)
    if manifold in ("spd", "correlation"):
        if len(dims) != 1:
            raise ChainFileError(f"{manifold} needs dims=m, got dims={dims}")
        return (dims[0], dims[0])
    if len(dims) != 2:
        raise ChainFileError(f"grassmann needs dims=m,p, got dims={dims}")
    return dims


def read_chain(path) -> Chain:
    """Parse and validate a chain file; errors name the offending line."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ChainFileError(f"cannot read {path}: {exc}")
    if not lines:
        raise ChainFileError(f"{path}:1: empty file, expected '#% manifold=<name> dims=<ints>'")
    match = _DIRECTIVE.match(lines[0].strip())
    if not match:
        raise ChainFileError(f"{path}:1: missing directive '#% manifold=<name> dims=<ints>'")
    manifold = match.group(1)
    if manifold not in MANIFOLDS:
        raise ChainFileError(f"{path}:1: unknown manifold {manifold!r}")
    try:
        dims = tuple(int(v) for v in re.split(r"[,\s]+", match.group(2).strip()) if v)
    except ValueError:
        raise ChainFileError(f"{path}:1: bad dims {match.group(2)!r}")
    shape = _row_shape(manifold, dims)
    width = int(np.prod(shape))

    rows, line_nos, meta = [], [], {}
    for no, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# meta "):
                try:
                    meta.update(json.loads(line[len("# meta ") :]))
                except json.JSONDecodeError:
                    pass
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError:
            raise ChainFileError(f"{path}:{no}: cannot parse row as comma-separated floats")
        if len(vals) != width:
            raise ChainFileError(f"{path}:{no}: expected {width} values, got {len(vals)}")
        rows.append(vals)
        line_nos.append(no)
    if not rows:
        raise ChainFileError(f"{path}: no data rows")
    pts = np.asarray(rows, dtype=float).reshape((len(rows),) + shape)
    try:
        validate_points(manifold, pts)
    except ValidationError:
        # locate the first bad row for the message
        for i, no in enumerate(line_nos):
            try:
                validate_points(manifold, pts[i : i + 1])
            except ValidationError as exc:
                if manifold == "sphere":
                    exc = f"row has norm {np.linalg.norm(pts[i]):.10g}, not within 1e-6 of 1"
                raise ChainFileError(f"{path}:{no}: {exc}")
        raise
    return Chain(manifold, pts, meta)


def format_chain(chain: Chain) -> str:
    dims = chain.dims if chain.manifold == "grassmann" else chain.dims[:1]
    out = [f"#% manifold={chain.manifold} dims={','.join(str(d) for d in dims)}"]
    if chain.meta:
        out.append("# meta " + json.dumps(chain.meta, sort_keys=True))
    flat = chain.points.reshape(len(chain), -1)
    out.extend(",".join("%.17g" % v for v in row) for row in flat)
    return "\n".join(out) + "\n"


def write_text_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_chain(path, chain: Chain) -> None:
    write_text_atomic(path, format_chain(chain))
