"""Matrix-free sensing operators for snapshot compressive imaging.

The CASSI operator modulates each spectral band by a coded aperture, shifts
band m by d*m columns (the discrete dispersion step) and integrates across
bands onto a widened 2-d sensor. The video-SCI operator modulates each frame
by its own mask and integrates across frames with no shift. Both expose the
forward map, its adjoint, and the diagonal of H H^T, which is all the
closed-form GAP projection needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, UsageError


@dataclass
class SpectralCube:
    """3-d signal [n_x, n_y, n_bands]; values nominally in [0, 1]."""

    data: np.ndarray
    wavelengths: list[float] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"SpectralCube: expected rank 3, got {self.data.ndim}")
        if not np.all(np.isfinite(self.data)):
            raise UsageError("SpectralCube: data contains non-finite values")
        if self.wavelengths is not None and len(self.wavelengths) != self.data.shape[2]:
            raise DimensionError(
                f"SpectralCube: {len(self.wavelengths)} wavelengths for "
                f"{self.data.shape[2]} bands (axis 2)"
            )

    @property
    def shape(self):
        return self.data.shape


@dataclass
class Mask:
    """2-d coded aperture [n_x, n_y] with entries in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DimensionError(f"Mask: expected rank 2, got {self.data.ndim}")
        if not np.all(np.isfinite(self.data)):
            raise UsageError("Mask: data contains non-finite values")
        if not np.any(self.data):
            raise UsageError("Mask: identically zero")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class MaskStack:
    """Per-frame masks [n_x, n_y, n_frames] for video-SCI."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"MaskStack: expected rank 3, got {self.data.ndim}")
        if not np.all(np.isfinite(self.data)):
            raise UsageError("MaskStack: data contains non-finite values")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class Measurement:
    """2-d compressed sensor image [n_x, n_y + d*(n_bands-1)]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DimensionError(f"Measurement: expected rank 2, got {self.data.ndim}")
        if not np.all(np.isfinite(self.data)):
            raise UsageError("Measurement: data contains non-finite values")

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement noise: none, additive gaussian(sigma), or shot(peak)."""

    kind: str = "none"
    sigma: float = 0.0
    peak: float = 0.0

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def gaussian(cls, sigma):
        return cls("gaussian", sigma=float(sigma))

    @classmethod
    def shot(cls, peak):
        return cls("shot", peak=float(peak))

    def apply(self, y, rng):
        if self.kind == "none":
            return y
        if rng is None:
            raise UsageError("NoiseSpec: an rng is required to draw noise")
        if self.kind == "gaussian":
            return y + rng.normal(0.0, self.sigma, size=y.shape)
        if self.kind == "shot":
            # photon counting at the given peak flux, rescaled back
            return rng.poisson(np.clip(y, 0.0, None) * self.peak) / self.peak
        raise UsageError(f"NoiseSpec: unknown kind {self.kind!r}")

    def __str__(self):
        if self.kind == "gaussian":
            return f"gaussian:{self.sigma:g}"
        if self.kind == "shot":
            return f"shot:{self.peak:g}"
        return "none"

    @classmethod
    def parse(cls, text):
        if text == "none":
            return cls.none()
        kind, _, value = text.partition(":")
        if kind == "gaussian" and value:
            return cls.gaussian(float(value))
        if kind == "shot" and value:
            return cls.shot(float(value))
        raise UsageError(f"NoiseSpec: cannot parse {text!r}")


def modulate(cube: SpectralCube, mask: Mask) -> SpectralCube:
    """Multiply every band of the cube elementwise by the aperture mask."""
    if cube.data.shape[:2] != mask.data.shape:
        raise DimensionError(
            f"modulate: spatial axes (0,1) {cube.data.shape[:2]} vs mask {mask.data.shape}"
        )
    return SpectralCube(cube.data * mask.data[:, :, None], cube.wavelengths)


def shift(cube: SpectralCube, d: int) -> SpectralCube:
    """Translate band m right by d*m columns onto a widened, zero-filled grid."""
    if d < 0:
        raise UsageError(f"shift: dispersion step must be >= 0, got {d}")
    return SpectralCube(_shift_arr(cube.data[None], d)[0], cube.wavelengths)


def unshift(cube: SpectralCube, d: int) -> SpectralCube:
    """Inverse of shift: crop band m back by d*m columns."""
    if d < 0:
        raise UsageError(f"unshift: dispersion step must be >= 0, got {d}")
    nx, wext, nb = cube.data.shape
    ny = wext - d * (nb - 1)
    if ny < 1:
        raise DimensionError(
            f"unshift: width axis (1) {wext} too small for {nb} bands at d={d}"
        )
    out = np.empty((nx, ny, nb), dtype=cube.data.dtype)
    for m in range(nb):
        out[:, :, m] = cube.data[:, d * m:d * m + ny, m]
    return SpectralCube(out, cube.wavelengths)


def _shift_arr(x, d):
    # x: [N, n_x, n_y, n_bands] -> [N, n_x, n_y + d*(n_bands-1), n_bands]
    n, nx, ny, nb = x.shape
    out = np.zeros((n, nx, ny + d * (nb - 1), nb), dtype=x.dtype)
    for m in range(nb):
        out[:, :, d * m:d * m + ny, m] = x[:, :, :, m]
    return out


class CassiOperator:
    """Coded-aperture snapshot spectral imaging: modulate, disperse, integrate."""

    kind = "cassi"

    def __init__(self, mask: Mask, n_bands: int, d: int = 2):
        if d < 0:
            raise UsageError(f"CassiOperator: dispersion step must be >= 0, got {d}")
        if n_bands < 1:
            raise UsageError(f"CassiOperator: need at least one band, got {n_bands}")
        self.mask = mask
        self.n_bands = n_bands
        self.d = d
        nx, ny = mask.data.shape
        self.cube_shape = (nx, ny, n_bands)
        self.meas_shape = (nx, ny + d * (n_bands - 1))
        self.psi = self._compute_psi()

    def _compute_psi(self):
        m2 = self.mask.data.astype(np.float64) ** 2
        stacked = np.repeat(m2[:, :, None], self.n_bands, axis=2)
        return _shift_arr(stacked[None], self.d)[0].sum(axis=2)

    def _check_cube(self, arr):
        if arr.shape[1:] != self.cube_shape:
            raise DimensionError(
                f"CassiOperator: cube axes {arr.shape[1:]} vs expected {self.cube_shape}"
            )

    def _check_meas(self, arr):
        if arr.shape[1:] != self.meas_shape:
            raise DimensionError(
                f"CassiOperator: measurement axes {arr.shape[1:]} vs expected {self.meas_shape}"
            )

    def _forward_arr(self, x):
        # x: [N, n_x, n_y, n_bands] -> [N, n_x, meas_width]
        self._check_cube(x)
        modded = x * self.mask.data[None, :, :, None]
        return _shift_arr(modded, self.d).sum(axis=3)

    def _adjoint_arr(self, y):
        # y: [N, n_x, meas_width] -> [N, n_x, n_y, n_bands]
        self._check_meas(y)
        n = y.shape[0]
        nx, ny, nb = self.cube_shape
        out = np.empty((n, nx, ny, nb), dtype=y.dtype)
        for m in range(nb):
            out[:, :, :, m] = y[:, :, self.d * m:self.d * m + ny]
        return out * self.mask.data[None, :, :, None]

    def forward(self, cube: SpectralCube, noise: NoiseSpec = NoiseSpec.none(),
                rng=None) -> Measurement:
        y = self._forward_arr(cube.data[None])[0]
        return Measurement(noise.apply(y, rng))

    def adjoint(self, y: Measurement) -> SpectralCube:
        return SpectralCube(self._adjoint_arr(y.data[None])[0])


class VideoSciOperator:
    """Video snapshot compressive imaging: per-frame masks, no dispersion."""

    kind = "video"

    def __init__(self, mask_stack: MaskStack):
        self.mask_stack = mask_stack
        nx, ny, nt = mask_stack.data.shape
        self.n_bands = nt
        self.d = 0
        self.cube_shape = (nx, ny, nt)
        self.meas_shape = (nx, ny)
        self.psi = (mask_stack.data.astype(np.float64) ** 2).sum(axis=2)

    def _check_cube(self, arr):
        if arr.shape[1:] != self.cube_shape:
            raise DimensionError(
                f"VideoSciOperator: cube axes {arr.shape[1:]} vs expected {self.cube_shape}"
            )

    def _check_meas(self, arr):
        if arr.shape[1:] != self.meas_shape:
            raise DimensionError(
                f"VideoSciOperator: measurement axes {arr.shape[1:]} vs expected {self.meas_shape}"
            )

    def _forward_arr(self, x):
        self._check_cube(x)
        return (x * self.mask_stack.data[None]).sum(axis=3)

    def _adjoint_arr(self, y):
        self._check_meas(y)
        return y[:, :, :, None] * self.mask_stack.data[None]

    def forward(self, cube: SpectralCube, noise: NoiseSpec = NoiseSpec.none(),
                rng=None) -> Measurement:
        y = self._forward_arr(cube.data[None])[0]
        return Measurement(noise.apply(y, rng))

    def adjoint(self, y: Measurement) -> SpectralCube:
        return SpectralCube(self._adjoint_arr(y.data[None])[0])


def random_binary_mask(shape, rng, density=0.5):
    """Bernoulli 0/1 aperture; re-drawn in the vanishingly unlikely all-zero case."""
    data = (rng.random(shape) < density).astype(np.float64)
    while not data.any():
        data = (rng.random(shape) < density).astype(np.float64)
    return Mask(data)
