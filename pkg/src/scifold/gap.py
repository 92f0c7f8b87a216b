"""Generalized alternating projection reconstruction.

Each stage alternates two steps: a closed-form Euclidean projection onto the
measurement manifold {x : Hx = y}, available because H H^T is diagonal for
snapshot compressive operators, and a denoising step supplied by a plug-in
callable (classical TV here, a learned network in `network`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractViolationError, DimensionError, UsageError
from .sensing import Measurement, SpectralCube

# A denoiser maps (estimate, stage_index) to a same-shape cube.
DenoiserContract = Callable[[SpectralCube, int], SpectralCube]


@dataclass
class GapConfig:
    stages: int
    denoiser: DenoiserContract
    record_trace: bool = False

    def __post_init__(self):
        if self.stages < 1:
            raise UsageError(f"GapConfig: stages must be >= 1, got {self.stages}")


@dataclass
class GapResult:
    cube: SpectralCube
    # per-stage measurement fidelity ||y - H x^(k)||_2 right after projection
    trace: list[float] | None = None


def _project_arr(v, y, op):
    residual = y - op._forward_arr(v)
    psi = op.psi
    scaled = np.divide(residual, psi[None], out=np.zeros_like(residual),
                       where=psi[None] > 0)
    return v + op._adjoint_arr(scaled)


def project(v: SpectralCube, y: Measurement, op) -> SpectralCube:
    """Euclidean projection of v onto {x : Hx = y}, guarded where psi is zero."""
    if v.data.shape != op.cube_shape:
        raise DimensionError(
            f"project: cube axes {v.data.shape} vs operator {op.cube_shape}"
        )
    if y.data.shape != op.meas_shape:
        raise DimensionError(
            f"project: measurement axes {y.data.shape} vs operator {op.meas_shape}"
        )
    return SpectralCube(_project_arr(v.data[None], y.data[None], op)[0])


def _grad_transpose(px, py):
    # adjoint of forward differences: D^T p, Neumann boundaries
    dtp = np.zeros_like(px)
    dtp[:, :-1] -= px[:, :-1]
    dtp[:, 1:] += px[:, :-1]
    dtp[:-1, :] -= py[:-1, :]
    dtp[1:, :] += py[:-1, :]
    return dtp


def _tv_denoise_band(band, weight, iters, step=0.2):
    """Anisotropic ROF denoising of one band by projected dual ascent.

    Minimizes 0.5*||u - band||^2 + weight * sum(|dx u| + |dy u|) with forward
    differences. Dual variables are clamped componentwise to [-1, 1]; the
    step obeys the 1/4 stability bound for the 2-d difference operator.
    """
    px = np.zeros_like(band)
    py = np.zeros_like(band)
    for _ in range(iters):
        u = band - weight * _grad_transpose(px, py)
        gx = np.zeros_like(band)
        gy = np.zeros_like(band)
        gx[:, :-1] = u[:, 1:] - u[:, :-1]
        gy[:-1, :] = u[1:, :] - u[:-1, :]
        px = np.clip(px + (step / weight) * gx, -1.0, 1.0)
        py = np.clip(py + (step / weight) * gy, -1.0, 1.0)
    return band - weight * _grad_transpose(px, py)


def tv_denoise(v: SpectralCube, weight: float = 0.1, iters: int = 30) -> SpectralCube:
    """Approximate anisotropic-TV proximal step, applied independently per band."""
    if weight <= 0:
        raise UsageError(f"tv_denoise: weight must be > 0, got {weight}")
    if iters < 1:
        raise UsageError(f"tv_denoise: iters must be >= 1, got {iters}")
    out = np.empty_like(v.data, dtype=np.float64)
    for m in range(v.data.shape[2]):
        out[:, :, m] = _tv_denoise_band(v.data[:, :, m].astype(np.float64), weight, iters)
    return SpectralCube(out.astype(v.data.dtype), v.wavelengths)


def tv_denoiser(weight: float = 0.1, iters: int = 30) -> DenoiserContract:
    """Stage-independent TV denoiser satisfying the plug-in contract."""

    def denoise(cube, stage_index):
        return tv_denoise(cube, weight=weight, iters=iters)

    return denoise


def identity_denoiser() -> DenoiserContract:
    return lambda cube, stage_index: cube


def gap_reconstruct(y: Measurement, op, cfg: GapConfig) -> GapResult:
    """Run cfg.stages alternations of projection and denoising from v0 = H^T y."""
    if y.data.shape != op.meas_shape:
        raise DimensionError(
            f"gap_reconstruct: measurement axes {y.data.shape} vs operator {op.meas_shape}"
        )
    v = op.adjoint(y)
    trace = [] if cfg.record_trace else None
    for k in range(cfg.stages):
        x = project(v, y, op)
        if trace is not None:
            trace.append(float(np.linalg.norm(y.data - op._forward_arr(x.data[None])[0])))
        v = cfg.denoiser(x, k)
        if not isinstance(v, SpectralCube) or v.data.shape != op.cube_shape:
            got = v.data.shape if isinstance(v, SpectralCube) else type(v)
            raise ContractViolationError(
                f"denoiser at stage {k} returned {got}, expected cube {op.cube_shape}"
            )
    return GapResult(SpectralCube(np.clip(v.data, 0.0, 1.0), v.wavelengths), trace)
