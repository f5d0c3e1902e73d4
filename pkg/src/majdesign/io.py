"""File formats: Matrix Market, CSV vectors/traces/images, key-value sidecars."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .majorizers import MajorizerSpec
from .operators import DFTOperator, IdentityOperator, LinearOperator, StackedOperator


def read_matrix(path):
    """Dense ``ndarray`` or scipy sparse matrix from a Matrix Market file."""
    m = scipy.io.mmread(str(path))
    return m.tocsr() if sp.issparse(m) else np.asarray(m)


def write_matrix(path, matrix, symmetric: bool = False) -> None:
    symmetry = None
    if symmetric:
        symmetry = "hermitian" if np.iscomplexobj(matrix) else "symmetric"
    scipy.io.mmwrite(str(path), matrix, symmetry=symmetry, precision=17)


def _fmt(v: float) -> str:
    return repr(float(v))


def read_vector(path) -> np.ndarray:
    """Vector from a single-column Matrix Market file or a ``re,im`` CSV."""
    path = Path(path)
    if path.suffix == ".mtx":
        m = read_matrix(path)
        m = m.toarray() if sp.issparse(m) else m
        return np.asarray(m).ravel()
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    re = np.array([float(r[0]) for r in rows])
    if rows and len(rows[0]) > 1:
        im = np.array([float(r[1]) for r in rows])
        if np.any(im):
            return re + 1j * im
    return re


def write_vector(path, v) -> None:
    path = Path(path)
    v = np.asarray(v).ravel()
    if path.suffix == ".mtx":
        write_matrix(path, v.reshape(-1, 1))
        return
    with open(path, "w", newline="") as fh:
        fh.write("re,im\n")
        for z in v:
            fh.write(f"{_fmt(np.real(z))},{_fmt(np.imag(z))}\n")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows with full-precision, locale-independent number formatting."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_image(path, img: np.ndarray, shape: Sequence[int]) -> None:
    """Single-column CSV in row-major order after a ``# shape r c`` header line."""
    img = np.asarray(img).ravel()
    with open(path, "w") as fh:
        fh.write("# shape " + " ".join(str(int(s)) for s in shape) + "\n")
        for v in img:
            fh.write(_fmt(v) + "\n")


def read_image(path) -> np.ndarray:
    with open(path) as fh:
        head = fh.readline().split()
        shape = tuple(int(s) for s in head[2:])
        vals = np.array([float(line) for line in fh if line.strip()])
    return vals.reshape(shape)


def read_config(path) -> dict:
    """Plain ``key = value`` file; ``#`` starts a comment. Values stay strings."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed line {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_config(path, items: dict) -> None:
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


def coerce(value: str, like):
    """Convert a config string to the type of ``like``."""
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(s.strip() for s in value.split(",") if s.strip())
    return value


def parse_K(descriptor: str, n: int, base_dir: Optional[os.PathLike] = None) -> LinearOperator:
    """Build ``K`` from a descriptor such as ``identity``, ``dft``, ``dft:64x64``,
    ``stacked:dft+identity`` or ``stacked:projector@geom.cfg+identity``."""
    desc = descriptor.strip()
    if desc.startswith("stacked:"):
        return StackedOperator([parse_K(part, n, base_dir) for part in desc[len("stacked:"):].split("+")])
    if desc == "identity":
        return IdentityOperator(n)
    if desc == "dft":
        return DFTOperator(n)
    if desc.startswith("dft:"):
        grid = tuple(int(s) for s in desc[4:].split("x"))
        if int(np.prod(grid)) != n:
            raise ValueError(f"DFT grid {grid} does not match dimension {n}")
        return DFTOperator(grid)
    if desc.startswith("projector@"):
        from .ct import Geometry, build_projector

        cfg_path = Path(desc[len("projector@"):])
        if base_dir is not None and not cfg_path.is_absolute():
            cfg_path = Path(base_dir) / cfg_path
        cfg = read_config(cfg_path)
        geom = Geometry(**{k: coerce(v, getattr(Geometry, k, 1) if k != "pixel_size" else 1.0)
                           for k, v in cfg.items() if k in Geometry.__dataclass_fields__})
        if geom.n_pixels != n:
            raise ValueError(f"projector geometry has {geom.n_pixels} pixels, expected {n}")
        return build_projector(geom)
    raise ValueError(f"unknown K descriptor {descriptor!r}")


def write_majorizer(path, M: MajorizerSpec, extra: Optional[dict] = None) -> Path:
    """Write ``<path>`` (key-value sidecar) and ``<stem>.d.mtx`` (the diagonal)."""
    path = Path(path)
    d_path = path.with_suffix(".d.mtx")
    write_vector(d_path, M.d)
    items = {
        "K": M.descriptor,
        "N": M.dim,
        "alpha": _fmt(M.alpha),
        "certified": str(M.certified).lower(),
        "method": M.method,
        "real_part": str(M.real_part).lower(),
        "d_file": d_path.name,
    }
    if extra:
        items.update(extra)
    write_config(path, items)
    return path


def read_majorizer(path) -> MajorizerSpec:
    path = Path(path)
    cfg = read_config(path)
    n = int(cfg["N"])
    K = parse_K(cfg["K"], n, path.parent)
    d = read_vector(path.parent / cfg["d_file"]).real
    return MajorizerSpec(K, d, alpha=float(cfg["alpha"]),
                         certified=cfg.get("certified", "false") == "true",
                         method=cfg.get("method", "none"), descriptor=cfg["K"],
                         real_part=cfg.get("real_part", "false") == "true")
