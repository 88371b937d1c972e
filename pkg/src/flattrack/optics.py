"""Lensless forward model: full-size PSF convolution, noise, synthetic PSFs.

A measurement is the full (uncropped) linear convolution of the scene with
the camera's point spread function plus additive noise. Images are 2D float
arrays; scenes are nominally in [0, 1], measurements unconstrained.

File formats
------------
FLTIMG (bit-exact storage): ASCII header line ``FLTIMG1 <height> <width>\\n``
followed by height*width little-endian IEEE-754 float32 samples, row-major.
PGM (P5) export is provided for eyeballing images only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, NumericalError
from .seeds import make_rng

# Guard against absurd allocation from corrupt headers or bad configs.
MAX_DIM = 1 << 16

_FLTIMG_MAGIC = "FLTIMG"
_FLTIMG_VERSION = 1


def _check_image(x, name: str = "image") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.size == 0:
        raise ConfigError(f"{name} must be a non-empty 2D array")
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{name} contains non-finite values")
    return x


def next_fast_len(n: int) -> int:
    """Smallest 5-smooth integer >= n (FFT-friendly padded size)."""
    if n <= 1:
        return 1
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


@dataclass(frozen=True)
class NoiseModel:
    """Additive measurement noise.

    gaussian: zero-mean, std = sigma_rel * max(measurement). The level is a
    fraction of the (noiseless) measurement peak so it tracks signal scale.
    """

    kind: str = "gaussian"
    sigma_rel: float = 5e-3

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not (0.0 <= self.sigma_rel < 1.0):
            raise ConfigError("sigma_rel must be in [0, 1)")


@dataclass
class Psf:
    """Nonnegative intensity PSF, optionally normalized to unit sum."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.data = _check_image(self.data, "psf")
        if np.any(self.data < 0):
            raise ConfigError("psf values must be nonnegative")
        if self.normalized and abs(float(self.data.sum()) - 1.0) > 1e-9:
            raise ConfigError("psf marked normalized but sum != 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def normalize(self) -> "Psf":
        s = float(self.data.sum())
        if s <= 0:
            raise NumericalError("cannot normalize an all-zero psf")
        return Psf(self.data / s, normalized=True)


def _full_shape(x: np.ndarray, p: np.ndarray) -> tuple[int, int]:
    h = x.shape[0] + p.shape[0] - 1
    w = x.shape[1] + p.shape[1] - 1
    if h > MAX_DIM or w > MAX_DIM:
        raise NumericalError(f"convolution output {h}x{w} exceeds dimension limit")
    return h, w


def fft_conv_shape(h: int, w: int) -> tuple[int, int]:
    """Padded FFT grid for an output of size (h, w): circular == linear."""
    return next_fast_len(h), next_fast_len(w)


def full_convolve(x, p: Psf | np.ndarray) -> np.ndarray:
    """Full-size linear convolution of scene ``x`` with PSF ``p`` via FFT.

    Output size is (Hx+Hp-1, Wx+Wp-1): no sensor cropping. Zero-padding to
    at least the output size makes the circular FFT convolution exactly
    linear; the pad is then trimmed.
    """
    xa = _check_image(x, "scene")
    pa = p.data if isinstance(p, Psf) else _check_image(p, "psf")
    out_h, out_w = _full_shape(xa, pa)
    fh, fw = fft_conv_shape(out_h, out_w)
    fx = np.fft.rfft2(xa, s=(fh, fw))
    fp = np.fft.rfft2(pa, s=(fh, fw))
    y = np.fft.irfft2(fx * fp, s=(fh, fw))
    return y[:out_h, :out_w]


def convolve_direct(x, p: Psf | np.ndarray) -> np.ndarray:
    """Reference double-sum linear convolution (independent of the FFT path)."""
    xa = _check_image(x, "scene")
    pa = p.data if isinstance(p, Psf) else _check_image(p, "psf")
    out_h, out_w = _full_shape(xa, pa)
    out = np.zeros((out_h, out_w))
    for i in range(pa.shape[0]):
        for j in range(pa.shape[1]):
            out[i:i + xa.shape[0], j:j + xa.shape[1]] += pa[i, j] * xa
    return out


def simulate_measurement(x, p: Psf, noise: NoiseModel, seed: int) -> np.ndarray:
    """Measurement = full_convolve(x, p) + seeded additive noise.

    Deterministic: identical (inputs, seed) give bit-identical outputs.
    """
    y = full_convolve(x, p)
    if noise.kind == "none" or noise.sigma_rel == 0.0:
        return y
    sigma = noise.sigma_rel * float(np.max(y))
    if sigma > 0:
        rng = make_rng(seed)
        y = y + rng.normal(0.0, sigma, size=y.shape)
    return y


def crop_to_sensor(y, sensor_h: int, sensor_w: int) -> np.ndarray:
    """Centered crop modeling a finite sensor; floor-centered on odd/even mismatch."""
    ya = _check_image(y, "measurement")
    if sensor_h <= 0 or sensor_w <= 0:
        raise ConfigError("sensor dims must be positive")
    if sensor_h > ya.shape[0] or sensor_w > ya.shape[1]:
        raise ConfigError("sensor larger than measurement")
    r0 = (ya.shape[0] - sensor_h) // 2
    c0 = (ya.shape[1] - sensor_w) // 2
    return ya[r0:r0 + sensor_h, c0:c0 + sensor_w]


@dataclass(frozen=True)
class ContourPsfParams:
    """Knobs for the synthetic contour-band PSF."""

    n_waves: int = 24
    levelset_width: float = 0.08
    fill_target: float = 0.15

    def __post_init__(self):
        if self.n_waves < 1:
            raise ConfigError("n_waves must be >= 1")
        if self.levelset_width <= 0:
            raise ConfigError("levelset_width must be positive")
        if not (0.0 < self.fill_target < 1.0):
            raise ConfigError("fill_target must be in (0, 1)")


def generate_contour_psf(h: int, w: int, params: ContourPsfParams, seed: int) -> Psf:
    """Deterministic sparse contour-band pattern, normalized to unit sum.

    A sum of random-orientation cosine waves is thresholded to the level-set
    band |f - median| < width; the band width is widened/narrowed until the
    nonzero fraction lands within 20% of fill_target. The result is a
    well-conditioned multiplexing mask: broadband, no dominant blur axis.
    """
    if h < 16 or w < 16:
        raise ConfigError("psf dims must be at least 16")
    if h > MAX_DIM or w > MAX_DIM:
        raise ConfigError("psf dims exceed dimension limit")
    rng = make_rng(seed)
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float),
                         indexing="ij")
    scale = min(h, w)
    f = np.zeros((h, w))
    for _ in range(params.n_waves):
        theta = rng.uniform(0.0, np.pi)
        cycles = rng.uniform(2.0, 10.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        kx = np.cos(theta) * 2 * np.pi * cycles / scale
        ky = np.sin(theta) * 2 * np.pi * cycles / scale
        f += np.cos(kx * xx + ky * yy + phase)
    f /= max(float(f.std()), 1e-12)

    dev = np.abs(f - np.median(f))
    width = params.levelset_width
    fill = float(np.mean(dev < width))
    lo, hi = 0.8 * params.fill_target, 1.2 * params.fill_target
    if not (lo <= fill <= hi):
        # Exact hit via the deviation quantile.
        width = float(np.quantile(dev, params.fill_target))
        fill = float(np.mean(dev < width))
    mask = (dev < width).astype(float)
    total = float(mask.sum())
    if total <= 0:
        raise NumericalError("degenerate contour psf: all-zero mask")
    return Psf(mask / total, normalized=True)


def spectral_flatness_ratio(p: Psf) -> float:
    """max|F(P)| / mean|F(P)| on the PSF's native grid; lower = flatter = easier to invert."""
    mag = np.abs(np.fft.fft2(p.data))
    return float(mag.max() / mag.mean())


# ---------------------------------------------------------------------------
# FLTIMG / PGM io
# ---------------------------------------------------------------------------

def save_image(x, path) -> None:
    """Write a 2D array as FLTIMG (float32, bit-exact round trip)."""
    xa = _check_image(x)
    with open(path, "wb") as f:
        f.write(f"{_FLTIMG_MAGIC}{_FLTIMG_VERSION} {xa.shape[0]} {xa.shape[1]}\n".encode("ascii"))
        f.write(xa.astype("<f4").tobytes())


def load_image(path) -> np.ndarray:
    """Read an FLTIMG file into a float64 2D array."""
    with open(path, "rb") as f:
        header = f.readline(64)
        if not header.endswith(b"\n"):
            raise FormatError(f"{path}: missing FLTIMG header terminator")
        parts = header.decode("ascii", errors="replace").split()
        if len(parts) != 3 or not parts[0].startswith(_FLTIMG_MAGIC):
            raise FormatError(f"{path}: bad FLTIMG header {header!r}")
        version = parts[0][len(_FLTIMG_MAGIC):]
        if version != str(_FLTIMG_VERSION):
            raise FormatError(f"{path}: unsupported FLTIMG version {version!r}")
        try:
            h, w = int(parts[1]), int(parts[2])
        except ValueError as e:
            raise FormatError(f"{path}: non-integer dims in header") from e
        if h <= 0 or w <= 0 or h > MAX_DIM or w > MAX_DIM:
            raise FormatError(f"{path}: implausible dims {h}x{w}")
        raw = f.read(4 * h * w + 1)
        if len(raw) != 4 * h * w:
            raise FormatError(f"{path}: truncated or oversized payload")
    data = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(float)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite samples")
    return data


def save_psf(p: Psf, path) -> None:
    save_image(p.data, path)


def load_psf(path) -> Psf:
    """Load a PSF from FLTIMG; negative values are rejected."""
    data = load_image(path)
    if np.any(data < 0):
        raise FormatError(f"{path}: negative values in psf")
    s = float(data.sum())
    return Psf(data, normalized=abs(s - 1.0) <= 1e-9)


def save_pgm(x, path) -> None:
    """8-bit PGM (P5) export: values clamped to [0, 1], scaled to 0-255."""
    xa = np.asarray(x, dtype=float)
    if xa.ndim != 2:
        raise ConfigError("pgm export needs a 2D array")
    q = np.clip(xa, 0.0, 1.0)
    q = np.round(q * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{xa.shape[1]} {xa.shape[0]}\n255\n".encode("ascii"))
        f.write(q.tobytes())
