"""Reproducible desk-scale experiments and the named matrix generators."""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .ct import (
    CTConfig,
    CTProblem,
    CTTrace,
    Geometry,
    ct_reconstruct,
    downsampled_K,
    downsampled_geometry,
    fbp,
    make_problem,
)
from .dual import DesignProblem, design, verify_majorization
from .majorizers import (
    MajorizerSpec,
    circ_majorizer,
    dense_scale_to_majorize,
    lipschitz_majorizer,
    sqs_majorizer,
)
from .operators import (
    DFTOperator,
    HermitianOperator,
    IdentityOperator,
    StackedOperator,
    gram,
    materialize,
    power_iteration,
)
from .solvers import ConvergenceTrace, QuadraticProblem, attach_dense_factor, majorized_spectrum, mm_quadratic
from . import io

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- generators

def weighted_toeplitz_F(N: int) -> np.ndarray:
    """``F[i, j] = (0.1 + cos^2(2 pi i / N)) / sqrt(1 + |i - j|)``."""
    i = np.arange(N)
    row_w = 0.1 + np.cos(2 * np.pi * i / N) ** 2
    return row_w[:, None] / np.sqrt(1.0 + np.abs(i[:, None] - i[None, :]))


def weighted_toeplitz_H(N: int) -> np.ndarray:
    F = weighted_toeplitz_F(N)
    return F.T @ F


def random_psd(N: int, seed, rank: Optional[int] = None, complex_: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    r = N if rank is None else rank
    B = rng.standard_normal((N, r))
    if complex_:
        B = B + 1j * rng.standard_normal((N, r))
    H = B @ B.conj().T / r
    return 0.5 * (H + H.conj().T)


def _parse_kv(body: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        if "=" not in part:
            raise ValueError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_generator(text: str) -> np.ndarray:
    """Dense ``H`` from an inline generator name.

    ``diag:1..8`` (integer range), ``diag:1,2.5,4`` (explicit list),
    ``toeplitz:N=128``, ``matrix:2,1;1,2`` (rows separated by ``;``),
    ``random_psd:N=16,seed=0``.
    """
    kind, _, body = text.partition(":")
    if kind == "diag":
        m = re.fullmatch(r"\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*", body)
        vals = (np.arange(int(m.group(1)), int(m.group(2)) + 1, dtype=float) if m
                else np.array([float(v) for v in body.split(",")]))
        if vals.size == 0:
            raise ValueError(f"empty diagonal in {text!r}")
        return np.diag(vals)
    if kind == "toeplitz":
        return weighted_toeplitz_H(int(_parse_kv(body).get("N", 128)))
    if kind == "matrix":
        rows = [[float(v) for v in r.split(",")] for r in body.split(";")]
        H = np.array(rows)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"matrix generator is not square: {text!r}")
        return H
    if kind == "random_psd":
        kv = _parse_kv(body)
        return random_psd(int(kv.get("N", 16)), int(kv.get("seed", 0)),
                          rank=int(kv["rank"]) if "rank" in kv else None)
    raise ValueError(f"unknown generator {text!r}")


def is_generator(text: str) -> bool:
    return text.split(":", 1)[0] in ("diag", "toeplitz", "matrix", "random_psd")


def load_H(source: str) -> tuple[HermitianOperator, Optional[np.ndarray]]:
    """``H`` from a generator name or a Matrix Market file, plus a dense copy if cheap."""
    if is_generator(source):
        Hd = parse_generator(source)
        return HermitianOperator.from_dense(Hd), Hd
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"H source {source!r} is neither a generator nor an existing file")
    m = io.read_matrix(path)
    if hasattr(m, "toarray"):
        from .operators import SparseOperator

        op = SparseOperator(m)
        H = HermitianOperator(m.shape[0], op.apply, real=not np.iscomplexobj(m.data),
                              representation="sparse")
        return H, None
    return HermitianOperator.from_dense(m), np.asarray(m)


# ---------------------------------------------------------------- Toeplitz MM

TOEPLITZ_ARMS = ("lipschitz", "sqs", "circ", "design-diag", "design-circ+diag")


@dataclass(frozen=True)
class ToeplitzConfig:
    """Weighted-Toeplitz MM comparison.

    Designed arms use ``cert`` scaling. Runs stop at ``rel_tol`` relative
    distance or after ``budget`` iterations (``structured_budget`` for the
    circulant-based arms, which are expected to get there).
    """

    N: int = 128
    seed: int = 0
    design_seed: int = 0
    diag_iters: int = 2000
    circdiag_iters: int = 3000
    cert: str = "power"
    tol: float = 1e-3
    rel_tol: float = 1e-6
    budget: int = 20000
    structured_budget: int = 60000
    arms: tuple = TOEPLITZ_ARMS


@dataclass
class ArmResult:
    name: str
    majorizer: Optional[MajorizerSpec]
    verified: bool
    min_eig: float
    trace: Optional[ConvergenceTrace] = None
    spectrum: Optional[np.ndarray] = None
    seconds: float = 0.0
    status: str = "ok"
    extra: dict = field(default_factory=dict)


def iterations_estimate(iters, distance, rel_tol: float) -> tuple[float, bool]:
    """Iterations to shrink the distance by ``rel_tol``; ``(value, extrapolated)``.

    Runs that stop short are extrapolated with the geometric rate observed over
    the second half of the run (``inf`` when that rate is not contracting).
    """
    d0 = distance[0]
    for it, d in zip(iters, distance):
        if d <= rel_tol * d0:
            return float(it), False
    mid = len(iters) // 2
    span = iters[-1] - iters[mid]
    if span <= 0 or not distance[-1] < distance[mid] or distance[-1] <= 0:
        return math.inf, True
    rate = math.log(distance[-1] / distance[mid]) / span
    return iters[-1] + math.log(rel_tol * d0 / distance[-1]) / rate, True


def spectrum_spread(spectrum) -> float:
    return float(spectrum[-1] - spectrum[0])


def toeplitz_majorizers(cfg: ToeplitzConfig, H: HermitianOperator, Hd: np.ndarray) -> dict:
    out = {}
    N = cfg.N
    for name in cfg.arms:
        t0 = time.perf_counter()
        if name == "lipschitz":
            M = lipschitz_majorizer(H, tol=cfg.tol, seed=cfg.design_seed)
        elif name == "sqs":
            M = sqs_majorizer(H, nonnegative_hint=bool(np.all(Hd >= 0)))
        elif name == "circ":
            M = circ_majorizer(H, Hd, tol=cfg.tol, seed=cfg.design_seed)
        elif name == "design-diag":
            M = design(DesignProblem(H, IdentityOperator(N)), iters=cfg.diag_iters,
                       seed=cfg.design_seed, cert_mode=cfg.cert, tol=cfg.tol).majorizer
        elif name == "design-circ+diag":
            K = StackedOperator([DFTOperator(N), IdentityOperator(N)])
            M = design(DesignProblem(H, K), iters=cfg.circdiag_iters, seed=cfg.design_seed,
                       cert_mode=cfg.cert, tol=cfg.tol, allow_iterative_power=True).majorizer
        else:
            raise ValueError(f"unknown Toeplitz arm {name!r}")
        out[name] = (M, time.perf_counter() - t0)
    return out


def toeplitz_problem(cfg: ToeplitzConfig):
    Hd = weighted_toeplitz_H(cfg.N)
    H = HermitianOperator.from_dense(Hd)
    rng = np.random.default_rng(cfg.seed)
    g = rng.standard_normal(cfg.N)
    x0 = rng.standard_normal(cfg.N)
    x_star = -np.linalg.solve(Hd, g)
    return H, Hd, QuadraticProblem(H, g, x0), x_star


def run_toeplitz(cfg: ToeplitzConfig, out_dir=None) -> dict:
    """Build every arm, verify it, run MM and compute its majorized spectrum.

    An arm whose majorizer fails verification is skipped with a diagnostic.
    Writes ``mm_<arm>.csv``, ``spectrum_<arm>.csv`` and ``summary.csv`` when
    ``out_dir`` is given.
    """
    H, Hd, q, x_star = toeplitz_problem(cfg)
    h_max = float(np.linalg.eigvalsh(Hd)[-1])
    results = {}
    for name, (M, secs) in toeplitz_majorizers(cfg, H, Hd).items():
        ok, lam = verify_majorization(M, Hd, "dense", h_max=h_max)
        res = ArmResult(name, M, ok, lam, seconds=secs)
        results[name] = res
        if not ok:
            res.status = "failed verification"
            log.error("arm %s: majorizer fails verification (min eig %.3g); skipped", name, lam)
            continue
        if M.structure == "general":
            attach_dense_factor(M)
        budget = cfg.structured_budget if name in ("circ", "design-circ+diag") else cfg.budget
        t0 = time.perf_counter()
        res.trace = mm_quadratic(q, M, budget, x_star=x_star, stop_rel_distance=cfg.rel_tol)
        res.spectrum = majorized_spectrum(M, Hd)
        res.seconds += time.perf_counter() - t0
    if out_dir is not None:
        write_toeplitz_outputs(cfg, results, out_dir)
    return results


SUMMARY_HEADER = ("majorizer", "method", "alpha", "verified", "min_eig", "iters_to_tol",
                  "extrapolated", "final_rel_distance", "spectrum_min", "spectrum_max", "spread")


def summary_rows(results: dict, rel_tol: float) -> list:
    rows = []
    for name, r in results.items():
        M = r.majorizer
        if r.trace is None:
            rows.append((name, M.method, M.alpha, "false", r.min_eig, "", "", "", "", "", ""))
            continue
        est, extra = iterations_estimate(r.trace.iters, r.trace.distance, rel_tol)
        sp = r.spectrum
        rows.append((name, M.method, M.alpha, "true", r.min_eig, est, str(extra).lower(),
                     r.trace.distance[-1] / r.trace.distance[0], sp[0], sp[-1], spectrum_spread(sp)))
    return rows


def write_toeplitz_outputs(cfg: ToeplitzConfig, results: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, r in results.items():
        io.write_majorizer(out / f"majorizer_{name}.txt", r.majorizer)
        if r.trace is None:
            continue
        io.write_csv(out / f"mm_{name}.csv", ("iter", "distance", "cost"), r.trace.rows())
        io.write_csv(out / f"spectrum_{name}.csv", ("eigenvalue",), ((v,) for v in r.spectrum))
    io.write_csv(out / "summary.csv", SUMMARY_HEADER, summary_rows(results, cfg.rel_tol))
    io.write_config(out / "config.txt", {f.name: _cfg_value(getattr(cfg, f.name)) for f in fields(cfg)})
    return out


def _cfg_value(v):
    return ",".join(map(str, v)) if isinstance(v, tuple) else v


def config_from_file(cls, path, **overrides):
    """Dataclass config from a key-value file; unknown keys are an error."""
    defaults = cls()
    items = io.read_config(path) if path is not None else {}
    names = {f.name for f in fields(cls)}
    bad = set(items) - names
    if bad:
        raise ValueError(f"unknown config keys: {', '.join(sorted(bad))}")
    kw = {k: io.coerce(v, getattr(defaults, k)) for k, v in items.items()}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return replace(defaults, **kw)


# ---------------------------------------------------------------- CT demo

CTDemoConfig = CTConfig


@dataclass
class CTArm:
    name: str
    majorizer: MajorizerSpec
    min_eig: float
    rescaled: bool
    design_info: dict
    trace: Optional[CTTrace] = None
    image: Optional[np.ndarray] = None


@dataclass
class CTDemoResult:
    config: CTConfig
    problem: CTProblem
    x0: np.ndarray
    arms: dict


def ct_majorizer(name: str, prob: CTProblem, H, cfg: CTConfig) -> tuple[MajorizerSpec, dict]:
    """Uncertified-or-certified majorizer of ``A^T Gamma A`` for one arm."""
    if name == "sqs":
        # A^T A has nonnegative entries, so the row sums are H @ 1
        return sqs_majorizer(H, nonnegative_hint=True), {}
    if name == "circ":
        K = DFTOperator((cfg.n, cfg.n))
    elif name == "down":
        K = downsampled_K(prob.geometry, cfg.view_factor, cfg.channel_factor)
    else:
        raise ValueError(f"unknown CT majorizer {name!r}")
    cert = "none" if cfg.cert == "power" else cfg.cert
    res = design(DesignProblem(H, K), iters=cfg.design_iters, seed=cfg.design_seed, cert_mode=cert)
    M = res.majorizer
    if name == "circ":
        # real image: Re(M) majorizes a real H whenever M does, and stays circulant
        M = M.realified()
    return M, dict(res.certification)


def certify_for_ct(M: MajorizerSpec, Hd: np.ndarray, h_max: float, cert: str):
    """Dense check of ``M >= H``; rescale to the exact bound when the check fails.

    ``cert="power"`` always scales to the exact bound.
    Returns ``(M, min_eig, rescaled)``.
    """
    if cert == "power" and M.method != "analytic":
        M = dense_scale_to_majorize(replace(M, alpha=1.0), Hd)
        ok, lam = verify_majorization(M, Hd, "dense", h_max=h_max)
        return M, lam, False
    ok, lam = verify_majorization(M, Hd, "dense", h_max=h_max)
    if ok:
        return M, lam, False
    log.warning("%s majorizer fails the dense check (min eig %.3g); rescaling", M.descriptor, lam)
    M = dense_scale_to_majorize(M, Hd)
    ok, lam = verify_majorization(M, Hd, "dense", h_max=h_max)
    if not ok:
        raise RuntimeError(f"{M.descriptor}: rescaled majorizer still fails (min eig {lam!r})")
    return M, lam, True


def run_ct_demo(cfg: CTConfig, out_dir=None) -> CTDemoResult:
    """Reconstruct with each majorizer after verifying it against ``A^T Gamma A``."""
    prob = make_problem(cfg)
    A = prob.A
    H = gram(A, np.full(A.rows, prob.gamma))
    Hd = materialize(H)
    h_max = power_iteration(H, tol=1e-8, seed=0).value
    x0 = fbp(prob.y, prob.geometry, A)
    arms = {}
    for name in cfg.majorizers:
        M, info = ct_majorizer(name, prob, H, cfg)
        M, lam, rescaled = certify_for_ct(M, Hd, h_max, cfg.cert)
        x, trace = ct_reconstruct(prob, M, cfg.outer_iters, x0=x0, cg_iters=cfg.cg_iters)
        arms[name] = CTArm(name, M, lam, rescaled, info, trace, x)
    res = CTDemoResult(cfg, prob, x0, arms)
    if out_dir is not None:
        write_ct_outputs(res, out_dir)
    return res


def _geometry_items(geom: Geometry) -> dict:
    return {f.name: getattr(geom, f.name) for f in fields(geom)}


def write_ct_outputs(res: CTDemoResult, out_dir) -> Path:
    cfg, prob = res.config, res.problem
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shape = (cfg.n, cfg.n)
    sino = (cfg.n_views, cfg.n_channels)
    io.write_image(out / "truth.csv", prob.x_true, shape)
    io.write_image(out / "fbp.csv", res.x0, shape)
    io.write_image(out / "sinogram.csv", prob.y, sino)
    io.write_image(out / "weights.csv", prob.w, sino)
    io.write_config(out / "config.txt", {f.name: _cfg_value(getattr(cfg, f.name)) for f in fields(cfg)})
    down_geom = downsampled_geometry(prob.geometry, cfg.view_factor, cfg.channel_factor)
    io.write_config(out / "geom_down.cfg", _geometry_items(down_geom))
    report = {}
    for name, arm in res.arms.items():
        M = arm.majorizer
        if name == "down":
            M = replace(M, descriptor="stacked:projector@geom_down.cfg+identity")
        io.write_majorizer(out / f"majorizer_{name}.txt", M)
        io.write_csv(out / f"cost_{name}.csv", ("iter", "cost", "consensus"), arm.trace.rows())
        io.write_image(out / f"recon_{name}.csv", arm.image, shape)
        report[f"{name}.method"] = M.method
        report[f"{name}.alpha"] = repr(M.alpha)
        report[f"{name}.min_eig"] = repr(arm.min_eig)
        report[f"{name}.verified"] = "true"
        report[f"{name}.rescaled"] = str(arm.rescaled).lower()
        if arm.design_info:
            report[f"{name}.design_grad_norm"] = repr(arm.design_info["grad_norm"])
            report[f"{name}.design_iterations"] = arm.design_info["iterations"]
    io.write_config(out / "verification.txt", report)
    return out
