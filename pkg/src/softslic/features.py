"""Conversion of sRGB images into the scaled XYLab clustering feature space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# sRGB -> XYZ under D65 / 2 degree observer (IEC 61966-2-1 primaries).
# The white point is taken from the matrix row sums so that pure white maps
# to L=100, a=b=0 exactly.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = _RGB_TO_XYZ.sum(axis=1)

# CIE L*a*b* cube-root region boundary and linear-segment constants.
_LAB_DELTA = 6.0 / 29.0
_LAB_T0 = _LAB_DELTA**3
_LAB_SLOPE = 1.0 / (3.0 * _LAB_DELTA**2)


@dataclass(frozen=True)
class FeatureScales:
    """Positional and color scales applied before clustering.

    gamma_pos couples to the superpixel density; gamma_color is independent
    of it. eta is the dimensionless constant the positional scale is derived
    from.
    """

    gamma_pos: float
    gamma_color: float
    eta: float

    def __post_init__(self) -> None:
        for name in ("gamma_pos", "gamma_color", "eta"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check an (h, w, 3) sRGB array with channel values in [0, 255]."""
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got shape {a.shape}")
    a = a.astype(np.float64, copy=False)
    if a.min() < 0 or a.max() > 255:
        raise ValueError("channel values must lie in [0, 255]")
    return a


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert an (h, w, 3) sRGB image to an (n, 3) CIE L*a*b* matrix.

    Rows are pixels in row-major order. Gamma decoding follows the sRGB
    transfer function; black maps to (0, 0, 0) and white to (100, 0, 0).
    """
    a = validate_image(img) / 255.0
    rgb = a.reshape(-1, 3)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = lin @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _LAB_T0, np.cbrt(t), _LAB_SLOPE * t + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[:, 0] = 116.0 * f[:, 1] - 16.0
    lab[:, 1] = 500.0 * (f[:, 0] - f[:, 1])
    lab[:, 2] = 200.0 * (f[:, 1] - f[:, 2])
    return lab


def compute_scales(
    n_w: int,
    n_h: int,
    m_w: int,
    m_h: int,
    eta: float = 2.5,
    gamma_color: float = 0.26,
) -> FeatureScales:
    """Derive the positional scale from the superpixel density.

    gamma_pos = eta * max(m_w / n_w, m_h / n_h); gamma_color is passed
    through unchanged. All arguments must be positive.
    """
    for name, v in (("n_w", n_w), ("n_h", n_h), ("m_w", m_w), ("m_h", m_h),
                    ("eta", eta), ("gamma_color", gamma_color)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    gamma_pos = eta * max(m_w / n_w, m_h / n_h)
    return FeatureScales(gamma_pos=gamma_pos, gamma_color=gamma_color, eta=eta)


def build_features(img: np.ndarray, scales: FeatureScales) -> np.ndarray:
    """Build the (n, 5) scaled XYLab feature matrix for an sRGB image.

    Columns 0-1 are gamma_pos * (x, y) with zero-based pixel coordinates.
    Columns 2-4 are gamma_color * (L, a, b) after remapping Lab onto the
    0-255 range (L * 255 / 100, a + 128, b + 128) so all color channels
    share one scale.
    """
    a = validate_image(img)
    h, w = a.shape[:2]
    lab = rgb_to_lab(a)
    n = h * w
    feats = np.empty((n, 5))
    xs = np.tile(np.arange(w, dtype=np.float64), h)
    ys = np.repeat(np.arange(h, dtype=np.float64), w)
    feats[:, 0] = scales.gamma_pos * xs
    feats[:, 1] = scales.gamma_pos * ys
    feats[:, 2] = scales.gamma_color * (lab[:, 0] * 255.0 / 100.0)
    feats[:, 3] = scales.gamma_color * (lab[:, 1] + 128.0)
    feats[:, 4] = scales.gamma_color * (lab[:, 2] + 128.0)
    return feats
