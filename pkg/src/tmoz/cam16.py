"""CIECAM16 forward and inverse machinery.

Arrays carry tristimulus/response triplets on the last axis, so every
function here works on single pixels, flat lists of samples and full
``(height, width, 3)`` rasters alike.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# CAT16 (Li et al. 2017)
M_CAT16 = np.array([
    [0.401288, 0.650173, -0.051461],
    [-0.250268, 1.204414, 0.045854],
    [-0.002079, 0.048952, 0.953127],
])
M_CAT16_INV = np.linalg.inv(M_CAT16)

# rows give (2R+G+B/20, a, b) from post-adaptation responses
_OPPONENT = np.array([
    [2.0, 1.0, 1.0 / 20.0],
    [1.0, -12.0 / 11.0, 1.0 / 11.0],
    [1.0 / 9.0, 1.0 / 9.0, -2.0 / 9.0],
])
_OPPONENT_INV = np.linalg.inv(_OPPONENT)
# R_a + G_a + 21/20 B_a expressed over (p2, a, b)
_T_DENOM = np.array([1.0, 1.0, 21.0 / 20.0]) @ _OPPONENT_INV

_NL_MAX = 400.0 * (1.0 - 1e-9)


class Surround(enum.Enum):
    """Surround class carrying (F, c, N_c)."""

    AVERAGE = (1.0, 0.69, 1.0)
    DIM = (0.9, 0.59, 0.9)
    DARK = (0.8, 0.525, 0.8)

    @property
    def F(self) -> float:
        return self.value[0]

    @property
    def c(self) -> float:
        return self.value[1]

    @property
    def N_c(self) -> float:
        return self.value[2]

    @classmethod
    def parse(cls, name: "str | Surround") -> "Surround":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown surround {name!r}, expected average, dim or dark") from None


@dataclass(frozen=True)
class ViewingConditions:
    """Reference white (rescaled to Y=100), adapting luminance, background and surround."""

    white: np.ndarray
    L_a: float
    Y_b: float = 20.0
    surround: Surround = Surround.AVERAGE

    def __post_init__(self):
        white = np.asarray(self.white, dtype=np.float64).reshape(3)
        if white[1] <= 0 or np.any(white < 0):
            raise ValueError("white point must have positive Y and non-negative X, Z")
        object.__setattr__(self, "white", white * (100.0 / white[1]))
        object.__setattr__(self, "surround", Surround.parse(self.surround))
        if not self.L_a > 0:
            raise ValueError(f"L_a must be positive, got {self.L_a}")
        if not 0 < self.Y_b <= 100:
            raise ValueError(f"Y_b must lie in (0, 100], got {self.Y_b}")


@dataclass(frozen=True)
class DerivedConditions:
    vc: ViewingConditions
    D: float
    D_rgb: np.ndarray
    F_L: float
    n: float
    z: float
    N_bb: float
    N_cb: float
    rgb_aw: np.ndarray
    A_w: float

    @property
    def c(self) -> float:
        return self.vc.surround.c

    @property
    def N_c(self) -> float:
        return self.vc.surround.N_c

    @property
    def Q_white(self) -> float:
        """Brightness of the reference white."""
        return 4.0 / self.c * (self.A_w + 4.0) * self.F_L ** 0.25


def compress(x: np.ndarray) -> np.ndarray:
    """Signed hyperbolic cone compression with the +0.1 offset; ``x = F_L * R_c / 100``."""
    x = np.asarray(x, dtype=np.float64)
    p = np.abs(x) ** 0.42
    return np.sign(x) * 400.0 * p / (p + 27.13) + 0.1


def decompress(ra: np.ndarray, counters: dict | None = None) -> np.ndarray:
    """Inverse of :func:`compress`; returns ``x``. Responses beyond the asymptote are clamped."""
    v = np.asarray(ra, dtype=np.float64) - 0.1
    mag = np.abs(v)
    over = mag >= _NL_MAX
    if counters is not None:
        counters["response_clamped"] = counters.get("response_clamped", 0) + int(over.sum())
    mag = np.minimum(mag, _NL_MAX)
    return np.sign(v) * (27.13 * mag / (400.0 - mag)) ** (1.0 / 0.42)


def derive_conditions(vc: ViewingConditions) -> DerivedConditions:
    F = vc.surround.F
    white = vc.white
    rgb_w = M_CAT16 @ white
    D = F * (1.0 - (1.0 / 3.6) * np.exp((-vc.L_a - 42.0) / 92.0))
    D = float(np.clip(D, 0.0, 1.0))
    D_rgb = D * white[1] / rgb_w + 1.0 - D
    k = 1.0 / (5.0 * vc.L_a + 1.0)
    k4 = k ** 4
    F_L = 0.2 * k4 * (5.0 * vc.L_a) + 0.1 * (1.0 - k4) ** 2 * (5.0 * vc.L_a) ** (1.0 / 3.0)
    n = vc.Y_b / white[1]
    if not 0 < n <= 1:
        raise ValueError(f"background ratio n={n} outside (0, 1]")
    z = 1.48 + np.sqrt(n)
    N_bb = 0.725 * (1.0 / n) ** 0.2
    rgb_aw = compress(F_L * D_rgb * rgb_w / 100.0)
    A_w = float((_OPPONENT[0] @ rgb_aw - 0.305) * N_bb)
    return DerivedConditions(vc, D, D_rgb, float(F_L), float(n), float(z), float(N_bb), float(N_bb),
                             rgb_aw, A_w)


def adapt_responses(xyz, dc: DerivedConditions) -> np.ndarray:
    """Post-adaptation cone responses (R_a, G_a, B_a) on the last axis."""
    xyz = np.asarray(getattr(xyz, "data", xyz), dtype=np.float64)
    rgb_c = (xyz @ M_CAT16.T) * dc.D_rgb
    return compress(dc.F_L * rgb_c / 100.0)


def achromatic(ar: np.ndarray, dc: DerivedConditions) -> np.ndarray:
    return (ar @ _OPPONENT[0] - 0.305) * dc.N_bb


def lightness_from_achromatic(A: np.ndarray, dc: DerivedConditions,
                              counters: dict | None = None) -> np.ndarray:
    ratio = A / dc.A_w
    neg = ratio < 0
    if counters is not None:
        counters["negative_achromatic"] = counters.get("negative_achromatic", 0) + int(neg.sum())
    return 100.0 * np.where(neg, 0.0, ratio) ** (dc.c * dc.z)


def brightness_from_lightness(J: np.ndarray, dc: DerivedConditions) -> np.ndarray:
    return (4.0 / dc.c) * np.sqrt(J / 100.0) * (dc.A_w + 4.0) * dc.F_L ** 0.25


def brightness_forward(xyz, dc: DerivedConditions,
                       counters: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Absolute brightness Q per pixel plus the adapted responses for hue/colourfulness reuse.

    Pixels with a negative achromatic response get J = 0 (counted under
    ``negative_achromatic``).
    """
    ar = adapt_responses(xyz, dc)
    J = lightness_from_achromatic(achromatic(ar, dc), dc, counters)
    return brightness_from_lightness(J, dc), ar


def opponent(ar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Red-green a and yellow-blue b; roundoff-level values on neutral responses snap to 0."""
    ar = np.asarray(ar, dtype=np.float64)
    a = ar @ _OPPONENT[1]
    b = ar @ _OPPONENT[2]
    neutral = np.hypot(a, b) <= 1e-12 * np.abs(ar).sum(axis=-1)
    return np.where(neutral, 0.0, a), np.where(neutral, 0.0, b)


def hue_forward(ar: np.ndarray) -> np.ndarray:
    """Hue angle in degrees, [0, 360); achromatic pixels (a == b == 0) get 0."""
    a, b = opponent(np.asarray(ar, dtype=np.float64))
    h = np.degrees(np.arctan2(b, a))
    h = np.where(h < 0, h + 360.0, h)
    # -0.0 and rounding up to 360 both fold to 0
    return np.where(h >= 360.0, 0.0, h) + 0.0


def lightness_from_brightness(Q_c, dc_display: DerivedConditions) -> np.ndarray:
    """Lightness on the display side from absolute brightness; inverts :func:`brightness_from_lightness`."""
    Q_c = np.asarray(Q_c, dtype=np.float64)
    return 6.25 * (dc_display.c * Q_c / ((dc_display.A_w + 4.0) * dc_display.F_L ** 0.25)) ** 2


def eccentricity(h: np.ndarray) -> np.ndarray:
    return 0.25 * (np.cos(np.radians(h) + 2.0) + 3.8)


def colorfulness_forward(ar_H: np.ndarray, h: np.ndarray, J_c, dc_display: DerivedConditions,
                         counters: dict | None = None, fl_exponent: float = 0.25) -> np.ndarray:
    """Colourfulness of the tone-compressed image.

    Opponent signals come from the HDR-side responses ``ar_H``; N_c, N_cb,
    n and F_L come from the display conditions. Chroma is scaled by
    ``F_L ** fl_exponent``; any exponent other than 0.25 no longer matches
    the inverse model and is meant for comparison renders only.
    """
    ar_H = np.asarray(ar_H, dtype=np.float64)
    a, b = opponent(ar_H)
    denom = ar_H @ np.array([1.0, 1.0, 21.0 / 20.0])
    bad = denom <= 0
    if counters is not None:
        counters["achromatic_fallback"] = counters.get("achromatic_fallback", 0) + int(bad.sum())
    num = (50000.0 / 13.0) * dc_display.N_c * dc_display.N_cb * eccentricity(h) * np.hypot(a, b)
    t = np.where(bad, 0.0, num / np.where(bad, 1.0, denom))
    J_c = np.asarray(J_c, dtype=np.float64)
    C = t ** 0.9 * np.sqrt(J_c / 100.0) * (1.64 - 0.29 ** dc_display.n) ** 0.73
    return C * dc_display.F_L ** fl_exponent


@dataclass
class AppearanceImage:
    """Per-pixel compressed brightness, colourfulness, hue and the lightness used by the inverse."""

    Q_c: np.ndarray
    M_c: np.ndarray
    h: np.ndarray
    J_c: np.ndarray


@dataclass
class Appearance:
    """Full forward-model correlates."""

    J: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    M: np.ndarray
    h: np.ndarray
    s: np.ndarray = field(repr=False)


def forward(xyz, dc: DerivedConditions, counters: dict | None = None) -> Appearance:
    """Standard CAM16 forward model built from the per-stage functions."""
    ar = adapt_responses(xyz, dc)
    J = lightness_from_achromatic(achromatic(ar, dc), dc, counters)
    Q = brightness_from_lightness(J, dc)
    h = hue_forward(ar)
    M = colorfulness_forward(ar, h, J, dc, counters)
    C = M / dc.F_L ** 0.25
    s = 100.0 * np.sqrt(np.divide(M, Q, out=np.zeros_like(M), where=Q > 0))
    return Appearance(J, Q, C, M, h, s)


def inverse_model(J, M, h, dc: DerivedConditions, counters: dict | None = None) -> np.ndarray:
    """XYZ (display-relative, white at Y=100) from lightness, colourfulness and hue."""
    J = np.asarray(J, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    C = M / dc.F_L ** 0.25
    Jr = J / 100.0
    pos = Jr > 0
    Jr_safe = np.where(pos, Jr, 1.0)
    t = np.where(pos, (C / (np.sqrt(Jr_safe) * (1.64 - 0.29 ** dc.n) ** 0.73)) ** (1.0 / 0.9), 0.0)
    A = dc.A_w * np.where(pos, Jr_safe, 0.0) ** (1.0 / (dc.c * dc.z))
    p1 = (50000.0 / 13.0) * dc.N_c * dc.N_cb * eccentricity(h)
    p2 = A / dc.N_bb + 0.305
    hr = np.radians(h)
    cos_h, sin_h = np.cos(hr), np.sin(hr)
    # solve t = p1 * gamma / (p2 + gamma * (w_a cos h + w_b sin h)) for the chroma radius gamma
    denom = p1 - t * (_T_DENOM[1] * cos_h + _T_DENOM[2] * sin_h)
    gamma = np.divide(t * _T_DENOM[0] * p2, denom, out=np.zeros_like(t), where=t > 0)
    a = gamma * cos_h
    b = gamma * sin_h
    ar = np.stack([p2, a, b], axis=-1) @ _OPPONENT_INV.T
    rgb_c = decompress(ar, counters) * 100.0 / dc.F_L
    xyz = (rgb_c / dc.D_rgb) @ M_CAT16_INV.T
    xyz[~pos] = 0.0
    return xyz
