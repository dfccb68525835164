"""Division-of-focal-plane polarization image pipeline.

A raw sensor frame interleaves four linear-polarizer orientations in 2x2
superpixels. The pipeline demosaics the frame into four half-resolution
intensity planes, derives grayscale / degree-of-polarization / angle-of-
polarization planes, maps them to 8 bits, and packs them as an RGB image
(R = DOP, G = grayscale, B = AOP). Corner detection runs per channel with a
minimum-eigenvalue response and a quality-level threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError

# Which 2x2 superpixel position carries which polarizer angle, as
# (top-left, top-right, bottom-left, bottom-right). The default matches the
# common commercial sensor layout.
DEFAULT_LAYOUT = (90, 45, 135, 0)
_POSITIONS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _check_layout(layout) -> tuple:
    layout = tuple(int(a) for a in layout)
    if sorted(layout) != [0, 45, 90, 135]:
        raise InputError(f"layout must be a permutation of (0, 45, 90, 135), got {layout}")
    return layout


@dataclass
class PolarMosaic:
    """Raw interleaved sensor frame (8-bit, even dimensions)."""

    samples: np.ndarray  # (height, width) uint8
    layout: tuple = DEFAULT_LAYOUT

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise InputError("mosaic must be a 2-D array")
        if self.samples.dtype != np.uint8:
            if np.any(self.samples < 0) or np.any(self.samples > 255):
                raise InputError("mosaic samples must be in [0, 255]")
            self.samples = self.samples.astype(np.uint8)
        h, w = self.samples.shape
        if h % 2 or w % 2:
            raise InputError(f"mosaic dimensions must be even, got {w}x{h}")
        self.layout = _check_layout(self.layout)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]


@dataclass
class IntensityPlanes:
    """Half-resolution intensity planes for the four polarizer angles."""

    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray

    def __post_init__(self):
        shapes = {p.shape for p in (self.i0, self.i45, self.i90, self.i135)}
        if len(shapes) != 1:
            raise InputError("intensity planes must share dimensions")

    @property
    def shape(self):
        return self.i0.shape


@dataclass
class PolarRgb:
    """Packed 3-channel image: R = mapped DOP, G = grayscale, B = mapped AOP."""

    rgb: np.ndarray  # (height, width, 3) uint8
    aop_valid: np.ndarray | None = None  # bool plane; False where AOP degenerate

    @property
    def r(self) -> np.ndarray:
        return self.rgb[:, :, 0]

    @property
    def g(self) -> np.ndarray:
        return self.rgb[:, :, 1]

    @property
    def b(self) -> np.ndarray:
        return self.rgb[:, :, 2]


@dataclass(frozen=True)
class Corner:
    """Detected corner with sub-pixel coordinates and min-eigenvalue score."""

    x: float
    y: float
    score: float


def round_half_away(x):
    """Round half away from zero (the documented 8-bit mapping convention)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def demosaic(mosaic: PolarMosaic) -> IntensityPlanes:
    """Split the 2x2-interleaved frame into four half-resolution planes."""
    m = mosaic.samples
    planes = {}
    for angle, (r, c) in zip(mosaic.layout, _POSITIONS):
        planes[angle] = m[r::2, c::2]
    return IntensityPlanes(i0=planes[0], i45=planes[45],
                           i90=planes[90], i135=planes[135])


def grayscale(planes: IntensityPlanes) -> np.ndarray:
    """Half the sum of the four intensities, clamped to [0, 255], uint8.

    The raw value can reach 510 for bright pixels; clamping preserves the
    8-bit contract without rescaling.
    """
    g = 0.5 * (planes.i0.astype(np.float64) + planes.i45 + planes.i90
               + planes.i135)
    return np.clip(round_half_away(g), 0, 255).astype(np.uint8)


def dop(planes: IntensityPlanes) -> np.ndarray:
    """Degree of polarization per pixel, in [0, 1].

    All-zero pixels yield 0 by convention; noise-driven values above 1 are
    clamped.
    """
    i0 = planes.i0.astype(np.float64)
    i45 = planes.i45.astype(np.float64)
    i90 = planes.i90.astype(np.float64)
    i135 = planes.i135.astype(np.float64)
    total = i0 + i45 + i90 + i135
    num = 2.0 * np.sqrt((i0 - i90) ** 2 + (i45 - i135) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(total > 0, num / np.where(total > 0, total, 1.0), 0.0)
    return np.clip(d, 0.0, 1.0)


def map_dop(d) -> np.ndarray:
    """Contrast-enhancing map of DOP to 8 bits: -255 d^2 + 510 d, rounded."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise InputError("DOP values must lie in [0, 1]")
    return round_half_away(-255.0 * d * d + 510.0 * d).astype(np.uint8)


def aop(planes: IntensityPlanes, with_mask: bool = False):
    """Angle of polarization per pixel, in (-pi/2, pi/2].

    Uses the two-argument arctangent so the full range is covered; pixels
    with both differences zero get 0 and are flagged invalid in the optional
    mask.
    """
    num = planes.i45.astype(np.float64) - planes.i135
    den = planes.i0.astype(np.float64) - planes.i90
    theta = 0.5 * np.arctan2(num, den)
    valid = (num != 0) | (den != 0)
    theta = np.where(valid, theta, 0.0)
    if with_mask:
        return theta, valid
    return theta


def map_aop(theta) -> np.ndarray:
    """Linear map of AOP to 8 bits: (theta + pi/2) * 255 / pi, rounded."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < -math.pi / 2) or np.any(theta > math.pi / 2):
        raise InputError("AOP values must lie in [-pi/2, pi/2]")
    return np.clip(round_half_away((theta + math.pi / 2) * 255.0 / math.pi),
                   0, 255).astype(np.uint8)


def pack_rgb(dop_plane: np.ndarray, gray_plane: np.ndarray,
             aop_plane: np.ndarray, aop_valid: np.ndarray | None = None) -> PolarRgb:
    """Losslessly pack the three mapped planes into one RGB image."""
    if not (dop_plane.shape == gray_plane.shape == aop_plane.shape):
        raise InputError("channel planes must share dimensions")
    rgb = np.stack([dop_plane, gray_plane, aop_plane], axis=-1).astype(np.uint8)
    return PolarRgb(rgb=rgb, aop_valid=aop_valid)


def process_mosaic(mosaic: PolarMosaic) -> PolarRgb:
    """Full pipeline: demosaic, compute planes, map, pack."""
    planes = demosaic(mosaic)
    theta, valid = aop(planes, with_mask=True)
    return pack_rgb(map_dop(dop(planes)), grayscale(planes), map_aop(theta),
                    aop_valid=valid)


# -- corner detection -----------------------------------------------------

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_BORDER = 2  # 1 px gradient support + 1 px summation window


def min_eigenvalue_response(image: np.ndarray) -> np.ndarray:
    """Shi-Tomasi style response: smaller eigenvalue of the 3x3-summed
    gradient structure tensor. The 2-px border is zeroed."""
    img = np.asarray(image, dtype=np.float64)
    ix = ndimage.convolve(img, _SOBEL_X, mode="nearest")
    iy = ndimage.convolve(img, _SOBEL_X.T, mode="nearest")
    win = np.ones((3, 3))
    sxx = ndimage.convolve(ix * ix, win, mode="nearest")
    syy = ndimage.convolve(iy * iy, win, mode="nearest")
    sxy = ndimage.convolve(ix * iy, win, mode="nearest")
    half_tr = 0.5 * (sxx + syy)
    root = np.sqrt(np.maximum((0.5 * (sxx - syy)) ** 2 + sxy * sxy, 0.0))
    resp = half_tr - root
    resp[:_BORDER, :] = 0.0
    resp[-_BORDER:, :] = 0.0
    resp[:, :_BORDER] = 0.0
    resp[:, -_BORDER:] = 0.0
    return resp


def _subpixel(resp: np.ndarray, y: int, x: int) -> tuple:
    """1-D parabolic peak refinement per axis, clamped to +/- 0.5 px."""
    def refine(m, c, p):
        d = 2.0 * c - m - p
        if d <= 0.0:
            return 0.0
        off = 0.5 * (p - m) / d
        return min(max(off, -0.5), 0.5)

    dx = refine(resp[y, x - 1], resp[y, x], resp[y, x + 1])
    dy = refine(resp[y - 1, x], resp[y, x], resp[y + 1, x])
    return x + dx, y + dy


def detect_corners(image: np.ndarray, quality_level: float,
                   max_corners: int = 500, min_distance: float = 4.0) -> list:
    """Minimum-eigenvalue corners above quality_level * (global max score).

    Local maxima are kept in descending score order with greedy suppression
    of neighbors closer than min_distance; ties break on (x, y) so the
    output ordering is deterministic.
    """
    img = np.asarray(image)
    if img.ndim != 2 or img.shape[0] < 16 or img.shape[1] < 16:
        raise InputError("corner detection needs a single-channel image of at least 16x16")
    if not 0.0 < quality_level < 1.0:
        raise InputError("quality_level must lie in (0, 1)")
    resp = min_eigenvalue_response(img)
    peak = float(resp.max())
    if peak <= 0.0:
        return []
    thresh = quality_level * peak
    is_max = resp == ndimage.maximum_filter(resp, size=3, mode="constant")
    ys, xs = np.nonzero(is_max & (resp >= thresh) & (resp > 0))
    if ys.size == 0:
        return []
    scores = resp[ys, xs]
    order = np.lexsort((ys, xs, -scores))
    ys, xs, scores = ys[order], xs[order], scores[order]

    accepted: list[tuple] = []
    min_d2 = min_distance * min_distance
    cell = max(min_distance, 1.0)
    buckets: dict = {}
    for y, x, s in zip(ys, xs, scores):
        cx, cy = int(x // cell), int(y // cell)
        ok = True
        for bx in (cx - 1, cx, cx + 1):
            for by in (cy - 1, cy, cy + 1):
                for (ax, ay) in buckets.get((bx, by), ()):
                    if (ax - x) ** 2 + (ay - y) ** 2 < min_d2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if not ok:
            continue
        buckets.setdefault((cx, cy), []).append((int(x), int(y)))
        sx, sy = _subpixel(resp, int(y), int(x))
        accepted.append(Corner(x=sx, y=sy, score=float(s)))
        if len(accepted) >= max_corners:
            break
    return accepted


def detect_enhanced(image: PolarRgb, quality_level: float,
                    max_corners: int = 500, min_distance: float = 4.0) -> list:
    """Corner detection helped by the polarization channels.

    Grayscale-channel corners take precedence; DOP- then AOP-channel corners
    are appended when farther than min_distance from anything already kept.
    """
    out: list[Corner] = []
    min_d2 = min_distance * min_distance
    for plane in (image.g, image.r, image.b):
        for c in detect_corners(plane, quality_level, max_corners, min_distance):
            if len(out) >= max_corners:
                return out
            if all((c.x - o.x) ** 2 + (c.y - o.y) ** 2 >= min_d2 for o in out):
                out.append(c)
    return out
